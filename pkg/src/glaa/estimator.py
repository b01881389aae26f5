"""Sparse Tucker estimation of the three-way moment tensor.

The fit alternates hard thresholding of rows with truncated SVDs, one mode at a
time, starting from a max-norm screened HOSVD.  Bases keep all ``p_k`` rows;
inactive rows are structural zeros.
"""

from dataclasses import dataclass, field
from functools import cached_property
import logging
import math

import numpy as np

from .tensor_core import (
    fix_signs,
    matricize,
    mode_product,
    multi_mode_product,
)

log = logging.getLogger(__name__)

MODES = (1, 2, 3)
_OTHERS = {1: (2, 3), 2: (3, 1), 3: (1, 2)}


@dataclass
class Dataset:
    """Three observation matrices sharing their rows (one row per subject)."""

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    centered: bool = False

    def __post_init__(self):
        mats = []
        for name in ("x", "y", "z"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.ndim == 1:
                m = m[:, None]
            if m.ndim != 2:
                raise ValueError(f"{name} must be a 2-D matrix")
            mats.append(m)
        self.x, self.y, self.z = mats
        rows = {m.shape[0] for m in mats}
        if len(rows) != 1:
            raise ValueError(
                f"x, y, z must have equal row counts, got "
                f"{[m.shape[0] for m in mats]}"
            )
        if self.centered:
            n = self.n
            for name, m in zip("xyz", mats):
                if np.any(np.abs(m.sum(axis=0)) > 1e-8 * max(n, 1) * max(1.0, np.abs(m).max())):
                    raise ValueError(f"{name} is flagged centered but its columns do not sum to 0")

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dims(self):
        return (self.x.shape[1], self.y.shape[1], self.z.shape[1])

    def take(self, rows):
        """Row subset; the result is flagged uncentered."""
        return Dataset(self.x[rows], self.y[rows], self.z[rows], centered=False)


def center(dataset):
    """Column-center all three matrices."""
    if dataset.n < 2:
        raise ValueError("centering needs at least 2 observations")
    x, y, z = (m - m.mean(axis=0) for m in (dataset.x, dataset.y, dataset.z))
    return Dataset(x, y, z, centered=True)


def sample_delta(dataset):
    """Sample third moment ``n^-1 sum_i x_i o y_i o z_i`` of centered data."""
    if not dataset.centered:
        raise ValueError("sample_delta requires centered data; call center() first")
    n = dataset.n
    p1, p2, p3 = dataset.dims
    xy = (dataset.x[:, :, None] * dataset.y[:, None, :]).reshape(n, p1 * p2)
    return (xy.T @ dataset.z).reshape(p1, p2, p3) / n


@dataclass
class GlaaConfig:
    """Ranks, thresholds and stopping rule for :func:`fit`.

    ``eta`` are the initialization thresholds on row max-norms of the
    unfoldings; ``eta_tilde`` the iteration thresholds on squared row l2-norms
    of the projected unfoldings.  ``None`` thresholds mean 0 (keep all rows).
    """

    ranks: tuple
    eta: tuple = (0.0, 0.0, 0.0)
    eta_tilde: tuple = (0.0, 0.0, 0.0)
    max_iter: int = 100
    tol: float = 1e-6

    def __post_init__(self):
        self.ranks = tuple(int(r) for r in self.ranks)
        self.eta = tuple(float(e) for e in self.eta)
        self.eta_tilde = tuple(float(e) for e in self.eta_tilde)
        if len(self.ranks) != 3 or min(self.ranks) < 1:
            raise ValueError(f"ranks must be three positive integers, got {self.ranks}")
        for name in ("eta", "eta_tilde"):
            vals = getattr(self, name)
            if len(vals) != 3 or any(not math.isfinite(v) or v < 0 for v in vals):
                raise ValueError(f"{name} must be three nonnegative reals, got {vals}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    def check_dims(self, dims):
        for k, (r, p) in enumerate(zip(self.ranks, dims), start=1):
            if r > p:
                raise ValueError(f"rank r{k}={r} exceeds dimension p{k}={p}")
            a, b = _OTHERS[k]
            other = self.ranks[a - 1] * self.ranks[b - 1]
            if r > other:
                raise ValueError(
                    f"rank r{k}={r} exceeds the product of the other ranks ({other}); "
                    "no Tucker tensor has these multilinear ranks"
                )


@dataclass
class GlaaFit:
    """Fitted bases and diagnostics.

    ``delta_hat`` and ``objective`` (``||Delta - Delta_hat||^2``) are computed
    on first access.
    """

    gamma: list
    active: list
    singular_values: list
    iterations: int
    converged: bool
    initial_active: list = field(default_factory=list)
    fallbacks: list = field(default_factory=list)
    history: list = field(default_factory=list)
    delta_tilde: np.ndarray = field(default=None, repr=False)

    @cached_property
    def delta_hat(self):
        return reconstruct(self.delta_tilde, self.gamma)

    @cached_property
    def objective(self):
        resid = self.delta_tilde - self.delta_hat
        return float(np.sum(resid * resid))

    @property
    def projections(self):
        return [g @ g.T for g in self.gamma]


def _select(criterion, threshold, r, mode, stage, fallbacks):
    """Indices with ``criterion > threshold``; top-``r`` fallback if too few."""
    idx = np.flatnonzero(criterion > threshold)
    if idx.size < r:
        # stable sort keeps ties in index order
        idx = np.sort(np.argsort(-criterion, kind="stable")[:r])
        fallbacks.append({"stage": stage, "mode": mode, "kept": idx.size})
        log.debug("mode %d %s: fewer than %d rows survive, kept top %d", mode, stage, r, r)
    return idx


def _row_masked_basis(mat, rows, r):
    """Top-``r`` left singular vectors of ``mat`` with rows outside ``rows`` zeroed.

    The SVD runs on the active submatrix so inactive rows are exact zeros even
    when the masked matrix has rank below ``r``.
    """
    sub = mat[rows]
    u, s, _ = np.linalg.svd(sub, full_matrices=False)
    if u.shape[1] < r:
        raise ValueError(
            f"cannot extract {r} singular vectors from a {sub.shape} submatrix"
        )
    basis = np.zeros((mat.shape[0], r))
    basis[rows] = u[:, :r]
    return fix_signs(basis), s[:r]


def initialize(delta_tilde, config):
    """Max-norm screening followed by a masked SVD of each unfolding.

    Returns ``(active, gamma, singular_values, fallbacks)``.
    """
    dims = delta_tilde.shape
    config.check_dims(dims)
    fallbacks = []
    masks = []
    active = []
    for k in MODES:
        crit = np.abs(matricize(delta_tilde, k)).max(axis=1)
        idx = _select(crit, config.eta[k - 1], config.ranks[k - 1], k, "init", fallbacks)
        mask = np.zeros(dims[k - 1], dtype=bool)
        mask[idx] = True
        masks.append(mask)
        active.append(idx)
    gamma, svals = [], []
    for k in MODES:
        a, b = _OTHERS[k]
        colmask = np.kron(masks[a - 1], masks[b - 1]).astype(bool)
        unfolded = matricize(delta_tilde, k) * colmask
        g, s = _row_masked_basis(unfolded, active[k - 1], config.ranks[k - 1])
        gamma.append(g)
        svals.append(s)
    return active, gamma, svals, fallbacks


def projected_unfolding(delta_tilde, gamma, mode):
    """``Delta_(k) G_{-k}``, contracting the other two modes directly.

    Only the nonzero rows of the other bases enter the contraction.
    """
    a, b = _OTHERS[mode]
    ga, gb = gamma[a - 1], gamma[b - 1]
    ia = np.flatnonzero(np.any(ga != 0, axis=1))
    ib = np.flatnonzero(np.any(gb != 0, axis=1))
    # move (mode, a, b) to the front, keep the live slices, contract b then a
    t = np.transpose(delta_tilde, (mode - 1, a - 1, b - 1))
    t = t[:, ia][:, :, ib] @ gb[ib]
    t = np.einsum("ijb,ja->iab", t, ga[ia])
    return t.reshape(t.shape[0], -1)


def iterate_step(delta_tilde, gamma, config, fallbacks=None):
    """One sweep of thresholding + SVD over modes 1, 2, 3.

    Each mode uses the freshest bases of the other two modes.  Returns
    ``(active, gamma_next, singular_values)``.
    """
    if fallbacks is None:
        fallbacks = []
    gamma = list(gamma)
    active, svals = [None] * 3, [None] * 3
    for k in MODES:
        proj = projected_unfolding(delta_tilde, gamma, k)
        crit = np.einsum("ij,ij->i", proj, proj)
        r = config.ranks[k - 1]
        idx = _select(crit, config.eta_tilde[k - 1], r, k, "iterate", fallbacks)
        gamma[k - 1], svals[k - 1] = _row_masked_basis(proj, idx, r)
        active[k - 1] = idx
    return active, gamma, svals


def reconstruct(delta_tilde, gamma):
    """``Delta x1 P1 x2 P2 x3 P3`` for orthonormal-column bases.

    Computed through the core ``Delta x1 G1^T x2 G2^T x3 G3^T`` rather than
    the ``p_k x p_k`` projections.
    """
    for k, g in enumerate(gamma, start=1):
        if g.shape[0] != delta_tilde.shape[k - 1]:
            raise ValueError(f"basis {k} has {g.shape[0]} rows, tensor mode has {delta_tilde.shape[k - 1]}")
    core = multi_mode_product(delta_tilde, [g.T for g in gamma])
    return multi_mode_product(core, gamma)


def _sv_norm(svals):
    return float(np.linalg.norm(np.concatenate(svals)))


def fit(delta_tilde, config, init=None):
    """Run the thresholded higher-order orthogonal iteration to convergence.

    Stops once the l2-norm of all retained singular values changes by less
    than ``config.tol`` between consecutive sweeps, or after ``max_iter``
    sweeps.  ``init`` may carry the output of :func:`initialize` for the same
    tensor and ``config.eta``, to share it across threshold candidates.
    """
    delta_tilde = np.asarray(delta_tilde, dtype=float)
    if init is None:
        init = initialize(delta_tilde, config)
    initial_active, gamma, svals, fallbacks = init
    fallbacks = list(fallbacks)
    active = initial_active
    history = []
    prev = None
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        active, gamma, svals = iterate_step(delta_tilde, gamma, config, fallbacks)
        cur = _sv_norm(svals)
        history.append(cur)
        if prev is not None and abs(cur - prev) < config.tol:
            converged = True
            break
        prev = cur
    if not converged:
        log.info("no convergence after %d iterations", config.max_iter)
    return GlaaFit(
        gamma=gamma,
        active=[np.asarray(a) for a in active],
        singular_values=svals,
        iterations=it,
        converged=converged,
        initial_active=[np.asarray(a) for a in initial_active],
        fallbacks=fallbacks,
        history=history,
        delta_tilde=delta_tilde,
    )


class SingularCovarianceError(np.linalg.LinAlgError):
    """``sigma_z`` (plus any ridge) is not positive definite."""


def gla_tensor(delta, sigma_z, ridge=None, auto_ridge=True):
    """Generalized liquid association tensor ``delta x3 (sigma_z + ridge I)^-1``.

    With ``ridge=None`` the plain inverse is tried first; if ``sigma_z`` is not
    positive definite a ridge of ``1e-8 * trace(sigma_z) / p3`` is added, or,
    with ``auto_ridge=False``, :class:`SingularCovarianceError` is raised.
    """
    sigma_z = np.atleast_2d(np.asarray(sigma_z, dtype=float))
    p3 = sigma_z.shape[0]
    if sigma_z.shape != (p3, p3) or delta.shape[2] != p3:
        raise ValueError("sigma_z must be p3 x p3 matching the tensor's third mode")
    if not np.allclose(sigma_z, sigma_z.T, rtol=1e-10, atol=1e-12):
        raise ValueError("sigma_z must be symmetric")
    eye = np.eye(p3)
    if ridge is None:
        try:
            chol = np.linalg.cholesky(sigma_z)
            # a factor can exist for a matrix that is singular up to rounding
            w = np.linalg.eigvalsh(sigma_z)
            if w[0] <= p3 * np.finfo(float).eps * max(w[-1], 0.0):
                raise np.linalg.LinAlgError("numerically singular")
        except np.linalg.LinAlgError:
            if not auto_ridge:
                raise SingularCovarianceError(
                    "sigma_z is singular or indefinite; pass a positive ridge"
                ) from None
            ridge = 1e-8 * np.trace(sigma_z) / p3
            log.warning("sigma_z is not positive definite; adding ridge %.3g", ridge)
            chol = None
    else:
        chol = None
    if chol is None:
        if ridge < 0:
            raise ValueError("ridge must be nonnegative")
        try:
            chol = np.linalg.cholesky(sigma_z + ridge * eye)
        except np.linalg.LinAlgError:
            raise SingularCovarianceError(
                f"sigma_z + {ridge:g} I is not positive definite; increase the ridge"
            ) from None
    # inverse via the Cholesky factor
    inv_l = np.linalg.solve(chol, eye)
    inv = inv_l.T @ inv_l
    return mode_product(delta, inv, 3)


def theoretical_thresholds(n, p_dims, s_dims, alpha):
    """Threshold values ``sqrt(alpha log p / n)`` and ``alpha s_{-k} log p / n``."""
    if n <= 0 or alpha <= 0 or min(p_dims) <= 0 or min(s_dims) <= 0:
        raise ValueError("all arguments must be positive")
    base = alpha * math.log(math.prod(p_dims)) / n
    eta = tuple(math.sqrt(base) for _ in MODES)
    eta_tilde = tuple(
        base * s_dims[a - 1] * s_dims[b - 1] for a, b in (_OTHERS[k] for k in MODES)
    )
    return eta, eta_tilde
