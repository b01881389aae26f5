"""Dense order-3 tensor algebra.

Tensors are plain ``numpy`` arrays of shape ``(p1, p2, p3)`` stored in C order,
so the flat offset of entry ``(i1, i2, i3)`` is ``(i1 * p2 + i2) * p3 + i3``.

Matricization follows the cyclic convention

    mode 1: rows i1, columns (i2, i3) with i3 varying fastest
    mode 2: rows i2, columns (i3, i1) with i1 varying fastest
    mode 3: rows i3, columns (i1, i2) with i2 varying fastest

which is the ordering under which a Tucker tensor ``C x1 G1 x2 G2 x3 G3``
unfolds as ``G_k C_(k) G_{-k}^T`` with ``G_{-1} = kron(G2, G3)``,
``G_{-2} = kron(G3, G1)`` and ``G_{-3} = kron(G1, G2)``.  Note this differs
from the Kolda-Bader convention (``kron(G3, G2)`` for mode 1).
"""

import numpy as np

# axis order that brings mode k to the front with the remaining axes cyclic
_CYCLIC = {1: (0, 1, 2), 2: (1, 2, 0), 3: (2, 0, 1)}


def _check_mode(mode):
    if mode not in _CYCLIC:
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def as_tensor(values, dims=None):
    """Validate and return a float64 order-3 array.

    ``values`` may be flat (then ``dims`` is required) or already 3-D.
    """
    arr = np.asarray(values, dtype=float)
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if len(dims) != 3 or min(dims) < 1:
            raise ValueError(f"dims must be three positive integers, got {dims}")
        if arr.size != dims[0] * dims[1] * dims[2]:
            raise ValueError(f"{arr.size} values do not fill a {dims} tensor")
        arr = arr.reshape(dims)
    if arr.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor entries must be finite")
    return arr


def flat_offset(index, dims):
    """Flat offset of a 0-based tensor index in the canonical layout."""
    i1, i2, i3 = index
    _, p2, p3 = dims
    return (i1 * p2 + i2) * p3 + i3


def unfold_index(index, dims, mode):
    """Map a 0-based tensor index to its (row, col) in ``matricize(t, mode)``."""
    _check_mode(mode)
    order = _CYCLIC[mode]
    a, b, c = (index[ax] for ax in order)
    pb, pc = dims[order[1]], dims[order[2]]
    return a, b * pc + c


def matricize(t, mode):
    """Mode-``mode`` unfolding, ``p_mode x prod(other dims)``."""
    _check_mode(mode)
    t = np.asarray(t)
    if t.ndim != 3:
        raise ValueError(f"expected an order-3 tensor, got ndim={t.ndim}")
    moved = np.transpose(t, _CYCLIC[mode])
    return moved.reshape(moved.shape[0], -1)


def refold(m, mode, dims):
    """Inverse of :func:`matricize`."""
    _check_mode(mode)
    m = np.asarray(m)
    dims = tuple(int(d) for d in dims)
    order = _CYCLIC[mode]
    shape = tuple(dims[ax] for ax in order)
    if m.shape != (shape[0], shape[1] * shape[2]):
        raise ValueError(
            f"matrix of shape {m.shape} cannot refold to {dims} along mode {mode}"
        )
    return np.transpose(m.reshape(shape), np.argsort(order))


def mode_product(t, m, mode):
    """Mode-``mode`` product ``t x_mode m``; ``m`` has ``p_mode`` columns."""
    _check_mode(mode)
    t = np.asarray(t)
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[1] != t.shape[mode - 1]:
        raise ValueError(
            f"matrix of shape {m.shape} does not act on mode {mode} of a "
            f"{t.shape} tensor"
        )
    dims = list(t.shape)
    dims[mode - 1] = m.shape[0]
    return refold(m @ matricize(t, mode), mode, dims)


def multi_mode_product(t, mats):
    """Apply ``mats[k]`` along mode ``k + 1`` for every non-None entry."""
    out = np.asarray(t)
    for k, m in enumerate(mats):
        if m is not None:
            out = mode_product(out, m, k + 1)
    return out


def outer_accumulate(acc, x, y, z, weight=1.0):
    """Return ``acc + weight * x o y o z`` (the input is not modified)."""
    acc = np.asarray(acc, dtype=float)
    x, y, z = (np.asarray(v, dtype=float).ravel() for v in (x, y, z))
    if acc.shape != (x.size, y.size, z.size):
        raise ValueError(
            f"outer product of sizes {(x.size, y.size, z.size)} does not match "
            f"accumulator {acc.shape}"
        )
    return acc + weight * np.einsum("i,j,k->ijk", x, y, z)


def kron_other(mats, mode):
    """The Kronecker factor ``G_{-k}`` paired with the mode-``k`` unfolding."""
    _check_mode(mode)
    order = _CYCLIC[mode]
    return np.kron(mats[order[1]], mats[order[2]])


def fix_signs(u):
    """Flip columns so the largest-magnitude entry of each is positive."""
    u = np.array(u, dtype=float, copy=True)
    if u.size == 0:
        return u
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def top_left_singular(m, r, return_values=False):
    """Leading ``r`` left singular vectors of ``m``, sign-normalized.

    With ``return_values=True`` also returns the ``r`` leading singular values.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("expected a matrix")
    if r < 1 or r > min(m.shape):
        raise ValueError(f"rank {r} exceeds matrix dimensions {m.shape}")
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    u = fix_signs(u[:, :r])
    if return_values:
        return u, s[:r]
    return u


def projection(g, tol=1e-8):
    """Orthogonal projection onto ``span(g)``.

    Uses ``g g^T`` when the columns are orthonormal to ``tol``, otherwise
    ``g (g^T g)^{-1} g^T``, which requires full column rank.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    gram = g.T @ g
    if np.allclose(gram, np.eye(g.shape[1]), rtol=0.0, atol=tol):
        return g @ g.T
    if np.linalg.matrix_rank(gram) < g.shape[1]:
        raise np.linalg.LinAlgError("projection basis is rank deficient")
    return g @ np.linalg.solve(gram, g.T)


def orthonormalize(g):
    """Orthonormal basis for ``span(g)`` via thin QR (full column rank assumed)."""
    q, _ = np.linalg.qr(np.asarray(g, dtype=float))
    return q
