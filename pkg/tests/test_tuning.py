import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glaa.estimator import Dataset, GlaaConfig, center, initialize, sample_delta
from glaa.simulation import ScenarioSpec, generate, subspace_distance
from glaa.tensor_core import matricize, multi_mode_product, orthonormalize, projection
from glaa.tuning import (
    TuningGrid,
    default_candidates,
    init_eta_from_quantile,
    loss,
    split,
    tune,
    tuned_fit,
)

from conftest import gap_thresholds


def toy_dataset(rng, n=10):
    return Dataset(rng.normal(size=(n, 3)), rng.normal(size=(n, 2)), rng.normal(size=(n, 1)))


def small_scenario(n=400, seed=0):
    spec = ScenarioSpec(n=n, p_dims=(20, 20, 1), s_dims=(5, 5, 1), seed=seed)
    return spec, *generate(spec, 0)


def population_tensor(truth, rho=(0.95, 0.85)):
    # sign design with one Z: E[sign(a) a] = sqrt(2 / pi)
    g1, g2, g3 = truth.gamma
    m = g1 @ np.diag(rho) @ g2.T
    return math.sqrt(2 / math.pi) * m[:, :, None] * g3[:, 0][None, None, :]


# -- split --------------------------------------------------------------------


def test_split_partition(rng):
    d = toy_dataset(rng)
    train, test = split(d, 0.5, seed=1)
    assert (train.n, test.n) == (5, 5)
    assert train.centered and test.centered


def test_split_rows_disjoint_and_complete():
    # integer tags: a centered side plus its shift must reproduce whole tags
    tags = np.arange(12.0)[:, None] * 10
    d = Dataset(tags, tags, tags)
    tr, te = split(d, 0.5, seed=3)
    perm = np.random.default_rng(3).permutation(12)
    for side, rows in ((tr, np.sort(perm[:6])), (te, np.sort(perm[6:]))):
        assert np.allclose(side.x[:, 0] + tags[rows, 0].mean(), tags[rows, 0])
    assert sorted(np.concatenate([perm[:6], perm[6:]]).tolist()) == list(range(12))


def test_split_deterministic(rng):
    d = toy_dataset(rng)
    a, b = split(d, 0.5, 7), split(d, 0.5, 7)
    assert np.array_equal(a[0].x, b[0].x) and np.array_equal(a[1].z, b[1].z)


def test_split_floor_to_train(rng):
    tr, te = split(toy_dataset(rng, 100), 0.7, 0)
    assert (tr.n, te.n) == (70, 30)


def test_split_too_small(rng):
    with pytest.raises(ValueError):
        split(toy_dataset(rng, 3), 0.5, 0)


# -- init_eta_from_quantile --------------------------------------------------------


def tensor_with_row_maxima(vals):
    t = np.zeros((len(vals), 1, 1))
    t[:, 0, 0] = vals
    return t


def test_init_eta_keep_all(rng):
    t = rng.normal(size=(6, 5, 4))
    eta = init_eta_from_quantile(t, 1.0)
    cfg = GlaaConfig(ranks=(1, 1, 1), eta=eta)
    active, _, _, _ = initialize(t, cfg)
    assert [len(a) for a in active] == [6, 5, 4]


def test_init_eta_quantile_arithmetic():
    eta = init_eta_from_quantile(tensor_with_row_maxima([4.0, 3.0, 2.0, 1.0]), 0.5)
    assert eta[0] == 2.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), frac=st.floats(0.05, 1.0))
def test_init_eta_survivor_count(seed, frac):
    rng = np.random.default_rng(seed)
    dims = tuple(int(v) for v in rng.integers(2, 30, size=3))
    t = rng.normal(size=dims)
    eta = init_eta_from_quantile(t, frac)
    for k in (1, 2, 3):
        norms = np.abs(matricize(t, k)).max(axis=1)
        kept = int(np.sum(norms > eta[k - 1]))
        assert kept >= 1
        assert abs(kept - round(frac * dims[k - 1])) <= 1


def test_init_eta_rejects_bad_fraction(rng):
    with pytest.raises(ValueError):
        init_eta_from_quantile(rng.normal(size=(2, 2, 2)), 0.0)


# -- loss -------------------------------------------------------------------------


def test_loss_identity_bases(rng):
    t = rng.normal(size=(3, 4, 2))
    assert loss(t, [np.eye(3), np.eye(4), np.eye(2)]) < 1e-12


def test_loss_annihilation():
    t = np.zeros((3, 3, 2))
    t[0, 0, 0] = 2.0
    g = [np.eye(3)[:, 1:], np.eye(3)[:, 1:], np.eye(2)]
    assert loss(t, g) == pytest.approx(2.0)


def test_loss_pythagoras(rng):
    t = rng.normal(size=(6, 5, 4))
    g = [np.linalg.qr(rng.normal(size=(d, 2)))[0] for d in t.shape]
    proj = multi_mode_product(t, [projection(b) for b in g])
    direct = np.linalg.norm(t - proj)
    assert loss(t, g) == pytest.approx(direct, rel=1e-10)
    assert abs(loss(t, g) ** 2 + np.sum(proj**2) - np.sum(t**2)) < 1e-8


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_loss_monotone_under_nesting(seed):
    rng = np.random.default_rng(seed)
    t = rng.normal(size=(6, 5, 4))
    big = [np.linalg.qr(rng.normal(size=(d, 3)))[0] for d in t.shape]
    small = [b[:, :2] for b in big]
    assert loss(t, big) <= loss(t, small) + 1e-12
    assert 0.0 <= loss(t, small) <= np.linalg.norm(t) + 1e-12


# -- grid ---------------------------------------------------------------------------


def test_grid_validation():
    with pytest.raises(ValueError):
        TuningGrid(split_fraction=1.0)
    with pytest.raises(ValueError):
        TuningGrid(eta_tilde_candidates=[[0.1], [], [0.0]])
    with pytest.raises(ValueError):
        TuningGrid(init_keep_fraction=1.5)
    assert TuningGrid(init_keep_fraction=0.5).init_keep_fraction == (0.5, 0.5, 0.5)


def test_default_candidates_shape():
    _, data, _ = small_scenario()
    d = sample_delta(center(data))
    cands = default_candidates(d, (2, 2, 1), init_eta_from_quantile(d, 0.25), grid_size=5)
    assert len(cands[0]) == 5 and len(cands[1]) == 5
    # p3 == r3 leaves nothing to threshold
    assert cands[2] == [0.0]
    assert all(a < b for a, b in zip(cands[0], cands[0][1:]))


# -- tune ------------------------------------------------------------------------------


def test_tune_single_candidate():
    _, data, _ = small_scenario()
    grid = TuningGrid(eta_tilde_candidates=[[0.01], [0.02], [0.0]], n_splits=1)
    res = tune(data, (2, 2, 1), grid)
    assert len(res.loss_table) == 1
    assert res.best_eta_tilde == (0.01, 0.02, 0.0)
    assert res.best_loss == res.loss_table[0][1]


def test_tune_exhaustive_and_best_is_min():
    _, data, _ = small_scenario()
    grid = TuningGrid(eta_tilde_candidates=[[0.0, 0.01, 0.05], [0.0, 0.02], [0.0]], n_splits=2)
    res = tune(data, (2, 2, 1), grid)
    assert len(res.loss_table) == 6
    clean = [l for c, l in res.loss_table if c not in res.degenerate]
    assert res.best_loss <= min(clean)


def test_tune_recovery_window_beats_absurd_threshold():
    spec, data, truth = small_scenario(n=500)
    pop = population_tensor(truth)
    gam = [orthonormalize(g) for g in truth.gamma]
    _, window = gap_thresholds(pop, gam, truth.active)
    grid = TuningGrid(eta_tilde_candidates=[[window[0], 1e3], [window[1], 1e3], [0.0]], n_splits=1)
    res = tune(data, (2, 2, 1), grid)
    assert res.best_eta_tilde == (window[0], window[1], 0.0)
    assert (1e3, 1e3, 0.0) in res.degenerate


def test_tune_ties_prefer_larger_thresholds(rng):
    # p1 = r1, so mode-1 thresholds cannot change anything and every candidate ties
    x = rng.normal(size=(60, 1))
    data = Dataset(x, rng.normal(size=(60, 3)), rng.normal(size=(60, 1)))
    grid = TuningGrid(eta_tilde_candidates=[[0.0, 1e-9, 2e-9], [0.0], [0.0]], n_splits=1)
    res = tune(data, (1, 1, 1), grid)
    losses = {l for _, l in res.loss_table}
    assert len(losses) == 1
    assert res.best_eta_tilde[0] == 2e-9


def test_tune_deterministic():
    _, data, _ = small_scenario()
    grid = TuningGrid(grid_size=3, seed=5, n_splits=2)
    a, b = tune(data, (2, 2, 1), grid), tune(data, (2, 2, 1), grid)
    assert a.loss_table == b.loss_table
    assert a.best_eta_tilde == b.best_eta_tilde


def test_tuned_fit_recovers_support():
    _, data, truth = small_scenario(n=500)
    res, result = tuned_fit(data, (2, 2, 1), TuningGrid(grid_size=5))
    assert result.refit_eta_tilde is not None
    for k in (0, 1):
        assert set(truth.active[k]) <= set(res.active[k].tolist())
        assert subspace_distance(truth.gamma[k], res.gamma[k]) < 0.3
