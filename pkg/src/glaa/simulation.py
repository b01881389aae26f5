"""Simulation designs with known ground truth, and recovery metrics.

Data follow the conditional model

    Z ~ N(0, I),   (X, Y) | Z ~ N(0, [[S_X, G1 F(G3^T Z) G2^T], [., S_Y]])

where ``F`` is diagonal and either a scaled sign or a scaled sigmoid of the
projected ``Z``.  Replication ``r`` of a sweep draws from
``SeedSequence(seed, spawn_key=(r,))`` so any replication can be rerun alone.
"""

from dataclasses import dataclass, field, replace
import math

import numpy as np

from .baselines import ula_estimate, ula_tensor
from .estimator import Dataset
from .tensor_core import orthonormalize, projection
from .tuning import TuningGrid, tuned_fit

PRESETS = {
    1: {"n": 500, "p_dims": (100, 100, 1), "sweep": ("p12", (100, 200, 300, 400, 500))},
    2: {"n": 500, "p_dims": (100, 100, 20), "sweep": ("p3", (20, 40, 60, 80, 100))},
    3: {"n": 160, "p_dims": (100, 25, 1), "sweep": ("n", (60, 80, 100, 120, 160))},
}


@dataclass
class ScenarioSpec:
    n: int
    p_dims: tuple
    s_dims: tuple = (5, 5, 1)
    ranks: tuple = (2, 2, 1)
    f_kind: str = "sign"
    rho: tuple = (0.95, 0.85)
    xi: float = 1.0
    ar_coefficient: float = 0.3
    seed: int = 0

    def __post_init__(self):
        self.p_dims = tuple(int(p) for p in self.p_dims)
        self.s_dims = tuple(int(s) for s in self.s_dims)
        self.ranks = tuple(int(r) for r in self.ranks)
        self.rho = tuple(float(v) for v in self.rho)
        if self.f_kind not in ("sign", "sigmoid"):
            raise ValueError(f"f_kind must be 'sign' or 'sigmoid', got {self.f_kind!r}")
        for k in range(3):
            if not 1 <= self.ranks[k] <= self.s_dims[k] <= self.p_dims[k]:
                raise ValueError(
                    f"need 1 <= r{k + 1} <= s{k + 1} <= p{k + 1}, got "
                    f"{self.ranks[k]}, {self.s_dims[k]}, {self.p_dims[k]}"
                )
        if self.ranks[0] != self.ranks[1] or self.ranks[0] > 2 or self.ranks[2] != 1:
            raise ValueError("the design supports r1 = r2 in {1, 2} and r3 = 1")
        if len(self.rho) < self.ranks[0] or any(not 0 <= v <= 1 for v in self.rho):
            raise ValueError(f"rho needs {self.ranks[0]} values in [0, 1], got {self.rho}")
        if self.f_kind == "sigmoid" and not self.xi > 0:
            raise ValueError("xi must be positive")
        if self.ranks[0] == 2 and self.s_dims[0] < 3 or self.ranks[1] == 2 and self.s_dims[1] < 3:
            raise ValueError("rank-2 loadings need s >= 3")
        if self.n < 2:
            raise ValueError("n must be at least 2")

    @classmethod
    def preset(cls, scenario, **overrides):
        if scenario not in PRESETS:
            raise ValueError(f"unknown scenario {scenario!r}; choose 1, 2 or 3")
        base = PRESETS[scenario]
        p_dims = base["p_dims"]
        s3 = 1 if p_dims[2] == 1 else 5
        kw = {"n": base["n"], "p_dims": p_dims, "s_dims": (5, 5, s3)}
        kw.update(overrides)
        if "p_dims" in overrides and "s_dims" not in overrides:
            kw["s_dims"] = (5, 5, 1 if kw["p_dims"][2] == 1 else 5)
        return cls(**kw)

    def for_replication(self, rep):
        """Seed sequence for replication ``rep``."""
        return np.random.SeedSequence(self.seed, spawn_key=(rep,))


@dataclass
class GroundTruth:
    gamma: list
    active: list
    sigma_x: np.ndarray = field(repr=False, default=None)
    sigma_y: np.ndarray = field(repr=False, default=None)

    @property
    def orthonormal_gamma(self):
        return [orthonormalize(g) for g in self.gamma]


@dataclass
class MetricsReport:
    tpr: dict
    fpr: dict
    d_per_mode: dict
    d_avg: float

    def row(self):
        out = {}
        for k in sorted(self.tpr):
            out[f"tpr{k}"] = self.tpr[k]
            out[f"fpr{k}"] = self.fpr[k]
        for k in sorted(self.d_per_mode):
            out[f"d{k}"] = self.d_per_mode[k]
        out["d"] = self.d_avg
        return out


def sigma_ar_block(s, p, coeff):
    """``p x p`` identity whose leading ``s x s`` block is AR(1): ``coeff^|i-j|``."""
    if not 0 <= s <= p:
        raise ValueError(f"need 0 <= s <= p, got s={s}, p={p}")
    out = np.eye(p)
    idx = np.arange(s)
    out[:s, :s] = coeff ** np.abs(idx[:, None] - idx[None, :])
    return out


def _sym_sqrt(m):
    w, v = np.linalg.eigh(m)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def _loading_directions(s, r):
    """``s x r`` orthonormal directions: the all-ones vector, then a contrast
    of the last two coordinates."""
    o = np.zeros((s, r))
    o[:, 0] = 1 / math.sqrt(s)
    if r == 2:
        o[s - 2, 1] = -1 / math.sqrt(2)
        o[s - 1, 1] = 1 / math.sqrt(2)
    return o


def build_truth(spec):
    p1, p2, p3 = spec.p_dims
    s1, s2, s3 = spec.s_dims
    r1, r2, _ = spec.ranks
    sigma_x = sigma_ar_block(s1, p1, spec.ar_coefficient)
    sigma_y = sigma_ar_block(s2, p2, spec.ar_coefficient)
    o1 = np.zeros((p1, r1))
    o1[:s1] = _loading_directions(s1, r1)
    o2 = np.zeros((p2, r2))
    o2[:s2] = _loading_directions(s2, r2)
    g1 = _sym_sqrt(sigma_x) @ o1
    g2 = _sym_sqrt(sigma_y) @ o2
    g3 = np.zeros((p3, 1))
    g3[:s3, 0] = 1 / math.sqrt(s3)
    # exact zeros off the leading block (eigh leaves ~1e-17 residue)
    g1[s1:] = 0.0
    g2[s2:] = 0.0
    active = [np.arange(s) for s in spec.s_dims]
    return GroundTruth([g1, g2, g3], active, sigma_x, sigma_y)


def f_matrix(a, spec):
    """Diagonal ``r1 x r2`` association matrix at projected value ``a``."""
    a0 = float(np.ravel(a)[0])
    rho = np.asarray(spec.rho[: spec.ranks[0]])
    if spec.f_kind == "sign":
        vals = rho * np.sign(a0)
    else:
        # 2 / (1 + exp(-2 xi a)) - 1 == tanh(xi a)
        vals = rho * math.tanh(spec.xi * a0)
    return np.diag(vals)


def conditional_cov(truth, fmat):
    g1, g2 = truth.gamma[0], truth.gamma[1]
    cross = g1 @ fmat @ g2.T
    return np.block([[truth.sigma_x, cross], [cross.T, truth.sigma_y]])


def _factor(cov, spec):
    w = np.linalg.eigvalsh(cov)
    if w[0] <= 1e-10:
        raise ValueError(
            f"conditional covariance is not positive definite (min eigenvalue "
            f"{w[0]:.3g}) for f_kind={spec.f_kind}, rho={spec.rho}, xi={spec.xi}"
        )
    return np.linalg.cholesky(cov)


def check_design(spec, truth=None):
    """Raise if the design can produce a non-PD conditional covariance.

    Both f kinds are monotone in ``a`` with extremes ``+-rho``, so checking the
    two limits covers every realizable ``Z``.
    """
    truth = truth or build_truth(spec)
    r = spec.ranks[0]
    for sgn in (-1.0, 1.0):
        _factor(conditional_cov(truth, sgn * np.diag(spec.rho[:r])), spec)
    return truth


def generate(spec, rep=0):
    """Draw one uncentered dataset and its ground truth."""
    truth = check_design(spec)
    rng = np.random.default_rng(spec.for_replication(rep))
    p1, p2, p3 = spec.p_dims
    z = rng.standard_normal((spec.n, p3))
    noise = rng.standard_normal((spec.n, p1 + p2))
    proj = z @ truth.gamma[2]
    xy = np.empty((spec.n, p1 + p2))
    cache = {}
    for i in range(spec.n):
        a = proj[i]
        if spec.f_kind == "sign":
            key = float(np.sign(a[0]))
            if key not in cache:
                cache[key] = _factor(conditional_cov(truth, f_matrix(a, spec)), spec)
            chol = cache[key]
        else:
            chol = _factor(conditional_cov(truth, f_matrix(a, spec)), spec)
        xy[i] = chol @ noise[i]
    return Dataset(xy[:, :p1], xy[:, p1:], z), truth


def tpr_fpr(truth, estimate, p, s):
    truth = set(np.asarray(truth).tolist())
    estimate = set(np.asarray(estimate).tolist())
    if s < 1 or p <= s:
        raise ValueError(f"need 1 <= s < p, got s={s}, p={p}")
    tp = len(truth & estimate)
    fp = len(estimate - truth)
    return tp / s, fp / (p - s)


def _is_orthonormal(g, tol=1e-8):
    return np.allclose(g.T @ g, np.eye(g.shape[1]), rtol=0.0, atol=tol)


def subspace_distance(gamma_true, gamma_hat, r=None):
    """``||P - P_hat||_F / sqrt(2 r)``, in [0, 1]."""
    gamma_true = np.atleast_2d(np.asarray(gamma_true, dtype=float))
    gamma_hat = np.atleast_2d(np.asarray(gamma_hat, dtype=float))
    if gamma_true.shape[1] != gamma_hat.shape[1]:
        raise ValueError(
            f"bases have {gamma_true.shape[1]} and {gamma_hat.shape[1]} columns"
        )
    r = gamma_true.shape[1] if r is None else r
    if r != gamma_true.shape[1]:
        raise ValueError(f"r={r} does not match the {gamma_true.shape[1]} basis columns")
    if not _is_orthonormal(gamma_true):
        gamma_true = orthonormalize(gamma_true)
    if not _is_orthonormal(gamma_hat):
        gamma_hat = orthonormalize(gamma_hat)
    diff = projection(gamma_true) - projection(gamma_hat)
    return min(1.0, float(np.linalg.norm(diff) / math.sqrt(2 * r)))


def evaluate(gamma, active, truth, modes=(1, 2, 3), p_dims=None):
    """Per-mode TPR/FPR (where ``p_k > s_k``) and subspace distances.

    ``d_avg`` averages the distances over ``modes``.
    """
    if not modes:
        raise ValueError("modes must be non-empty")
    tpr, fpr, dist = {}, {}, {}
    for k in modes:
        g_true = truth.gamma[k - 1]
        p = g_true.shape[0]
        s = len(truth.active[k - 1])
        if p > s:
            tpr[k], fpr[k] = tpr_fpr(truth.active[k - 1], active[k - 1], p, s)
        dist[k] = subspace_distance(g_true, gamma[k - 1])
    d_avg = float(np.mean([dist[k] for k in modes]))
    return MetricsReport(tpr, fpr, dist, d_avg)


def metric_modes(p_dims, ranks):
    """Modes whose subspace is not the whole space (``p_k > r_k``).

    A mode with ``p_k == r_k`` has distance 0 for every estimator, so it is
    left out of the average.
    """
    modes = tuple(k for k in (1, 2, 3) if p_dims[k - 1] > ranks[k - 1])
    return modes or (1, 2, 3)


TABLE_COLUMNS = ("tpr1", "fpr1", "tpr2", "fpr2", "d")


def tuning_seed(spec, rep):
    """Seed for the tuning splits of replication ``rep``, independent of the data stream."""
    return int(np.random.SeedSequence(spec.seed, spawn_key=(rep, 1)).generate_state(1)[0])


def run_replication(spec, rep, grid=None):
    """Fit GLAA (tuned) and ULA on replication ``rep``.

    Returns ``{"glaa": MetricsReport, "ula": MetricsReport, "fit": GlaaFit}``.
    """
    dataset, truth = generate(spec, rep)
    grid = replace(grid or TuningGrid(), seed=tuning_seed(spec, rep))
    modes = metric_modes(spec.p_dims, spec.ranks)
    fit_res, _ = tuned_fit(dataset, spec.ranks, grid)
    glaa = evaluate(fit_res.gamma, fit_res.active, truth, modes)
    ula = ula_estimate(ula_tensor(dataset), spec.ranks)
    ula_report = evaluate(ula.gamma, ula.selected(spec.s_dims), truth, modes)
    return {"glaa": glaa, "ula": ula_report, "fit": fit_res}


def aggregate(rows, columns=TABLE_COLUMNS):
    """Mean and standard error of each column over replications.

    ``rows`` are dicts as produced by :meth:`MetricsReport.row`.  With a single
    replication the standard errors are reported as 0 and ``se_undefined`` is
    set.
    """
    if not rows:
        raise ValueError("no replications to aggregate")
    out = {"reps": len(rows), "se_undefined": len(rows) == 1}
    for col in columns:
        vals = np.array([r[col] for r in rows if col in r], dtype=float)
        if vals.size == 0:
            continue
        out[col] = float(vals.mean())
        out[f"{col}_se"] = 0.0 if vals.size == 1 else float(vals.std(ddof=1) / math.sqrt(vals.size))
    return out
