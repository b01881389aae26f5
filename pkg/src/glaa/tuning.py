"""Threshold selection by held-out projection discrepancy."""

from dataclasses import dataclass, field, replace
import itertools
import logging

import numpy as np

from .estimator import GlaaConfig, MODES, center, fit, initialize, projected_unfolding, sample_delta
from .tensor_core import matricize, multi_mode_product, projection

log = logging.getLogger(__name__)


@dataclass
class TuningGrid:
    """Search space for the iteration thresholds.

    ``eta_tilde_candidates=None`` builds the default data-driven grid of
    ``grid_size`` log-spaced values for each mode in ``tune_modes`` (see
    :func:`default_candidates`); other modes get the single candidate 0.
    ``n_splits > 1`` averages the loss over independent random splits.
    ``init_keep_fraction`` is a scalar or one value per mode.
    """

    eta_tilde_candidates: list = None
    split_fraction: float = 0.8
    seed: int = 0
    init_keep_fraction: tuple = (0.25, 0.25, 0.25)
    grid_size: int = 7
    tune_modes: tuple = (1, 2, 3)
    n_splits: int = 3
    max_iter: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        keep = np.broadcast_to(np.asarray(self.init_keep_fraction, dtype=float), (3,))
        if np.any(keep <= 0) or np.any(keep > 1):
            raise ValueError("init_keep_fraction must lie in (0, 1]")
        self.init_keep_fraction = tuple(float(v) for v in keep)
        if self.eta_tilde_candidates is not None:
            cands = [sorted(float(v) for v in c) for c in self.eta_tilde_candidates]
            if len(cands) != 3 or any(len(c) == 0 for c in cands):
                raise ValueError("need a non-empty candidate list for each of the 3 modes")
            if any(v < 0 for c in cands for v in c):
                raise ValueError("threshold candidates must be nonnegative")
            self.eta_tilde_candidates = cands
        self.tune_modes = tuple(int(k) for k in self.tune_modes)
        if any(k not in MODES for k in self.tune_modes):
            raise ValueError("tune_modes must be a subset of (1, 2, 3)")
        if self.grid_size < 1 or self.n_splits < 1:
            raise ValueError("grid_size and n_splits must be positive")


@dataclass
class TuningResult:
    best_eta_tilde: tuple
    best_loss: float
    loss_table: list
    chosen_init_eta: tuple
    candidates: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    degenerate: list = field(default_factory=list)
    refit_eta_tilde: tuple = None


def split(dataset, fraction, seed):
    """Seeded random partition into train (``floor(n * fraction)`` rows) and test.

    Each side is centered on its own.
    """
    n = dataset.n
    n_train = int(np.floor(n * fraction))
    if n_train < 2 or n - n_train < 2:
        raise ValueError(f"split of n={n} at fraction {fraction} leaves a side with < 2 rows")
    perm = np.random.default_rng(seed).permutation(n)
    train = np.sort(perm[:n_train])
    test = np.sort(perm[n_train:])
    return center(dataset.take(train)), center(dataset.take(test))


def init_eta_from_quantile(delta_tilde, keep_fraction):
    """Initialization thresholds keeping about ``keep_fraction`` of each mode's rows.

    ``keep_fraction`` is a scalar or one value per mode.
    ``eta_k`` is the ``1 - keep_fraction`` empirical quantile (lower
    interpolation) of the row max-norms; for ``keep_fraction = 1`` it is pushed
    just below the smallest row max-norm so every row survives.
    """
    keep = np.broadcast_to(np.asarray(keep_fraction, dtype=float), (3,))
    if np.any(keep <= 0) or np.any(keep > 1):
        raise ValueError("keep_fraction must lie in (0, 1]")
    out = []
    for k, frac in zip(MODES, keep):
        norms = np.abs(matricize(delta_tilde, k)).max(axis=1)
        if frac == 1:
            out.append(float(np.nextafter(norms.min(), 0.0)))
        else:
            q = float(np.quantile(norms, 1 - frac, method="lower"))
            # never screen out every row (a lone row equals its own quantile)
            out.append(min(q, float(np.nextafter(norms.max(), 0.0))))
    return tuple(out)


def loss(delta_test, gamma_train):
    """Held-out discrepancy ``||D - D x1 P1 x2 P2 x3 P3||_F``.

    With orthonormal bases the projection is orthogonal, so the squared loss
    is ``||D||^2`` minus the squared norm of the core ``D x_k G_k^T``.
    """
    core = multi_mode_product(delta_test, [g.T for g in gamma_train])
    return float(np.sqrt(max(np.sum(delta_test * delta_test) - np.sum(core * core), 0.0)))


def default_candidates(delta_train, ranks, init_eta, grid_size=7, modes=MODES,
                       floor=2.0):
    """Per-mode log-spaced grid between the noise level and the strongest row.

    Squared row norms of ``Delta_(k) G_{-k}`` at the initial bases are
    computed.  Most rows are pure noise, so ``floor`` times their median is
    the smallest candidate; the largest is the top row energy.  Untuned
    modes, and modes with ``p_k == r_k``, get the single candidate 0.
    """
    cfg = GlaaConfig(ranks=ranks, eta=init_eta)
    _, gamma0, _, _ = initialize(delta_train, cfg)
    cands = []
    for k in MODES:
        if k not in modes or delta_train.shape[k - 1] == ranks[k - 1]:
            cands.append([0.0])
            continue
        proj = projected_unfolding(delta_train, gamma0, k)
        energy = np.einsum("ij,ij->i", proj, proj)
        lo, hi = floor * float(np.median(energy)), float(energy.max())
        if hi <= 0:
            cands.append([0.0])
            continue
        lo = min(lo, hi) if lo > 0 else hi * 1e-3
        cands.append([float(v) for v in np.geomspace(lo, hi, grid_size)])
    return cands


def _evaluate(delta_train, delta_test, ranks, init_eta, init, eta_tilde, grid):
    cfg = GlaaConfig(ranks=ranks, eta=init_eta, eta_tilde=eta_tilde,
                     max_iter=grid.max_iter, tol=grid.tol)
    res = fit(delta_train, cfg, init=init)
    # a fallback during the sweeps means thresholding wiped out a mode
    return loss(delta_test, res.gamma), len(res.fallbacks) > len(init[3])


def _prepare(dataset, ranks, grid):
    splits = []
    for i in range(grid.n_splits):
        train, test = split(dataset, grid.split_fraction, grid.seed + i)
        d_train, d_test = sample_delta(train), sample_delta(test)
        init_eta = init_eta_from_quantile(d_train, grid.init_keep_fraction)
        # the initialization ignores eta_tilde, so one run serves every candidate
        init = initialize(d_train, GlaaConfig(ranks=ranks, eta=init_eta))
        splits.append((d_train, d_test, init_eta, init))
    return splits


def _search(dataset, ranks, grid, splits):
    if grid.eta_tilde_candidates is None:
        cands = default_candidates(
            splits[0][0], ranks, splits[0][2], grid.grid_size, grid.tune_modes
        )
    else:
        cands = grid.eta_tilde_candidates

    table, degenerate, failures = [], [], []
    for combo in itertools.product(*cands):
        try:
            out = [_evaluate(dt, dv, ranks, ie, it, combo, grid)
                   for dt, dv, ie, it in splits]
        except (ValueError, np.linalg.LinAlgError) as exc:
            failures.append({"eta_tilde": combo, "error": str(exc)})
            log.debug("candidate %s failed: %s", combo, exc)
            continue
        entry = (tuple(combo), float(np.mean([v for v, _ in out])))
        table.append(entry)
        if any(d for _, d in out):
            degenerate.append(entry[0])
    if not table:
        raise RuntimeError(f"every tuning candidate failed: {failures}")

    # candidates that needed the fallback only win when nothing else is left
    clean = [e for e in table if e[0] not in set(degenerate)]
    best = _ranked(clean or table)[0]
    full = sample_delta(center(dataset))
    return TuningResult(
        best_eta_tilde=best[0],
        best_loss=best[1],
        loss_table=table,
        chosen_init_eta=init_eta_from_quantile(full, grid.init_keep_fraction),
        candidates=cands,
        failures=failures,
        degenerate=degenerate,
    )


def tune(dataset, ranks, grid):
    """Grid search over iteration thresholds; ties go to the sparser model.

    The loss of a candidate is averaged over ``grid.n_splits`` random splits.
    Initialization thresholds come from :func:`init_eta_from_quantile` on each
    training tensor and are not searched.
    """
    ranks = tuple(int(r) for r in ranks)
    return _search(dataset, ranks, grid, _prepare(dataset, ranks, grid))


def _ranked(table):
    # min loss, then larger thresholds (sparser) on exact ties
    return sorted(table, key=lambda item: (item[1], tuple(-v for v in item[0])))


def _distance(g, h):
    r = g.shape[1]
    return float(np.linalg.norm(projection(g) - projection(h)) / np.sqrt(2 * r))


def _agreement(res, splits, eta_tilde, ranks, grid):
    """Largest per-mode distance between a refit and its training-split fits,
    averaged over splits."""
    out = []
    for d_train, _, init_eta, init in splits:
        cfg = GlaaConfig(ranks=ranks, eta=init_eta, eta_tilde=eta_tilde,
                         max_iter=grid.max_iter, tol=grid.tol)
        sub = fit(d_train, cfg, init=init)
        out.append(max(_distance(a, b) for a, b in zip(res.gamma, sub.gamma)))
    return float(np.mean(out))


def tuned_fit(dataset, ranks, grid, max_tries=10, agree_tol=0.5):
    """Tune on splits, then refit on the full centered data.

    The refit starts from its own initialization, which can land it in a
    different basin than the training fits.  Candidates are therefore taken in
    loss order and the first whose refit needs no top-``r`` fallback and stays
    within ``agree_tol`` of its training fits (see :func:`_agreement`) is kept;
    after ``max_tries`` the winner is used as is.  ``result.refit_eta_tilde``
    records the thresholds actually used.
    """
    ranks = tuple(int(r) for r in ranks)
    splits = _prepare(dataset, ranks, grid)
    result = _search(dataset, ranks, grid, splits)
    full = sample_delta(center(dataset))
    base = GlaaConfig(ranks=ranks, eta=result.chosen_init_eta,
                      max_iter=grid.max_iter, tol=grid.tol)
    init = initialize(full, base)
    first = None
    bad = set(result.degenerate)
    ranked = _ranked(result.loss_table)
    order = [e for e in ranked if e[0] not in bad] + [e for e in ranked if e[0] in bad]
    for combo, _ in order[:max_tries]:
        res = fit(full, replace(base, eta_tilde=combo), init=init)
        if first is None:
            first = (combo, res)
        if len(res.fallbacks) > len(init[3]):
            log.info("refit at %s degenerate, trying next candidate", combo)
            continue
        gap = _agreement(res, splits, combo, ranks, grid)
        if gap <= agree_tol:
            result.refit_eta_tilde = combo
            return res, result
        log.info("refit at %s disagrees with training fits (%.3f)", combo, gap)
    result.refit_eta_tilde = first[0]
    return first[1], result
