"""Finite-difference (TV) operator pair and the nonlocal-means weight operator.

Signals are flattened row-major; pixel ``(row, col)`` of a ``height x width``
image sits at index ``row * width + col``.

D = [D_v; D_h] uses forward differences with a zero difference on the last
row (D_v) and last column (D_h). ``apply_Dt`` is its exact adjoint.

The weight operator W is sparse and row-stochastic. Row i holds, for every
j != i inside the L x L search window around i (clipped at the image
border),

    w_ij = exp(-||P_j - P_i||^2 / h^2) / c_i,

where P_i is the b_s x b_s patch centered on pixel i (mirror padding at the
border) and c_i makes the row sum to one. By default the diagonal is empty
and the patch distance is the plain sum of squares. ``NlmParams`` can switch
to the mean squared difference over the patch (``patch_mean``) and give the
center pixel the largest neighbor similarity (``center="max"``), the usual
nonlocal-means conventions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class RegularizerError(ValueError):
    pass


def _check_size(n: int, width: int, height: int) -> None:
    if width < 1 or height < 1 or n != width * height:
        raise RegularizerError(
            f"vector of length {n} does not match {width}x{height} image")


@dataclass(frozen=True)
class DifferenceField:
    dv: np.ndarray = field(repr=False)
    dh: np.ndarray = field(repr=False)
    width: int
    height: int

    def __post_init__(self):
        n = self.width * self.height
        if np.shape(self.dv) != (n,) or np.shape(self.dh) != (n,):
            raise RegularizerError(
                f"difference field components must have length {n}")

    @classmethod
    def from_stacked(cls, arr: np.ndarray, width: int, height: int) -> "DifferenceField":
        arr = np.asarray(arr, dtype=np.float64).reshape(2, -1)
        return cls(arr[0].copy(), arr[1].copy(), width, height)

    @classmethod
    def zeros(cls, width: int, height: int) -> "DifferenceField":
        n = width * height
        return cls(np.zeros(n), np.zeros(n), width, height)

    def stacked(self) -> np.ndarray:
        """(2, N) array with rows (dv, dh)."""
        return np.stack([self.dv, self.dh])


# -- finite differences -------------------------------------------------------

def grad(u: np.ndarray, width: int, height: int) -> np.ndarray:
    """D u as a stacked (2, N) array."""
    _check_size(u.size, width, height)
    img = u.reshape(height, width)
    out = np.zeros((2, height, width))
    out[0, :-1, :] = img[1:, :] - img[:-1, :]
    out[1, :, :-1] = img[:, 1:] - img[:, :-1]
    return out.reshape(2, -1)


def grad_adjoint(f: np.ndarray, width: int, height: int) -> np.ndarray:
    """D^T applied to a stacked (2, N) field."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (2, width * height):
        raise RegularizerError(
            f"field shape {f.shape} does not match {width}x{height} image")
    fv = f[0].reshape(height, width)
    fh = f[1].reshape(height, width)
    out = np.zeros((height, width))
    out[:-1, :] -= fv[:-1, :]
    out[1:, :] += fv[:-1, :]
    out[:, :-1] -= fh[:, :-1]
    out[:, 1:] += fh[:, :-1]
    return out.ravel()


def apply_D(u, width: int, height: int) -> DifferenceField:
    u = np.asarray(u, dtype=np.float64).ravel()
    g = grad(u, width, height)
    return DifferenceField(g[0], g[1], width, height)


def apply_Dt(f: DifferenceField) -> np.ndarray:
    return grad_adjoint(f.stacked(), f.width, f.height)


# -- nonlocal means weights ---------------------------------------------------

CENTER_MODES = ("exclude", "max")


@dataclass(frozen=True)
class NlmParams:
    patch: int = 7
    window: int = 13
    h: float = 0.03
    patch_mean: bool = False
    center: str = "exclude"

    def __post_init__(self):
        if self.center not in CENTER_MODES:
            raise RegularizerError(f"center must be one of {CENTER_MODES}, got {self.center!r}")
        if self.patch < 1 or self.patch % 2 == 0:
            raise RegularizerError(f"patch side must be odd and >= 1, got {self.patch}")
        if self.window < 3 or self.window % 2 == 0:
            raise RegularizerError(f"window side must be odd and >= 3, got {self.window}")
        if not self.h > 0:
            raise RegularizerError(f"h must be positive, got {self.h}")


@dataclass(frozen=True)
class NonlocalWeights:
    """Sparse row-stochastic weights; ``matrix`` is an N x N CSR array."""

    matrix: sp.csr_array = field(repr=False)
    width: int
    height: int

    @property
    def size(self) -> int:
        return self.width * self.height

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Neighbor indices and weights of pixel ``i``."""
        start, stop = self.matrix.indptr[i], self.matrix.indptr[i + 1]
        return self.matrix.indices[start:stop], self.matrix.data[start:stop]

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def neighbor_counts(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def dump(self, path) -> None:
        """Write one ``pixel neighbor weight`` line per stored entry."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(path, "w") as fh:
            for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r} {c} {v:.17g}\n")


def window_offsets(window: int) -> np.ndarray:
    """(dy, dx) offsets of the search window, center excluded, row-major."""
    R = window // 2
    dy, dx = np.mgrid[-R:R + 1, -R:R + 1]
    offs = np.stack([dy.ravel(), dx.ravel()], axis=1)
    return offs[np.any(offs != 0, axis=1)]


def _box_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sums over all k x k sub-blocks of ``a`` (valid region only)."""
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    np.cumsum(a, axis=0, out=c[1:, 1:])
    np.cumsum(c[1:, 1:], axis=1, out=c[1:, 1:])
    s = c[k:, k:] - c[:-k, k:] - c[k:, :-k] + c[:-k, :-k]
    return np.maximum(s, 0.0)


def patch_distances(u, width: int, height: int, p: NlmParams):
    """Squared patch distances to every window neighbor.

    Returns ``(offsets, dist)`` where ``dist[k, i]`` is
    ||P_{i + offsets[k]} - P_i||^2 (divided by b_s^2 when ``p.patch_mean``),
    or +inf when that neighbor falls outside the image. Each offset pair
    (o, -o) is computed once, so ``dist`` is exactly symmetric: d(i, j) == d(j, i) bitwise.
    """
    u = np.asarray(u, dtype=np.float64).ravel()
    _check_size(u.size, width, height)
    H, W = height, width
    r = p.patch // 2
    P = np.pad(u.reshape(H, W), r, mode="symmetric")
    offs = window_offsets(p.window)
    index = {(int(dy), int(dx)): k for k, (dy, dx) in enumerate(offs)}
    dist = np.full((len(offs), H, W), np.inf)
    for k, (dy, dx) in enumerate(offs):
        if dy < 0 or (dy == 0 and dx < 0):
            continue
        y0, y1 = max(0, -dy), min(H, H - dy)
        x0, x1 = max(0, -dx), min(W, W - dx)
        if y1 <= y0 or x1 <= x0:
            continue
        pi = P[y0:y1 + 2 * r, x0:x1 + 2 * r]
        pj = P[y0 + dy:y1 + dy + 2 * r, x0 + dx:x1 + dx + 2 * r]
        diff = pi - pj
        s = _box_sum(diff * diff, p.patch)
        if p.patch_mean:
            s /= p.patch * p.patch
        dist[k, y0:y1, x0:x1] = s
        dist[index[(-dy, -dx)], y0 + dy:y1 + dy, x0 + dx:x1 + dx] = s
    return offs, dist.reshape(len(offs), -1)


def compute_weights(u, width: int, height: int, p: NlmParams,
                    top_k: int | None = None) -> NonlocalWeights:
    """Build W from the current image estimate ``u``.

    With ``top_k`` set, only the ``top_k`` most similar neighbors of each
    pixel are kept and the row is renormalized over them. With
    ``p.center == "max"`` the pixel itself joins its row with the largest
    kept similarity. Weights that underflow to zero in double precision are
    not stored.
    """
    if top_k is not None and top_k < 1:
        raise RegularizerError(f"top_k must be >= 1, got {top_k}")
    u = np.asarray(u, dtype=np.float64).ravel()
    offs, dist = patch_distances(u, width, height, p)
    N = width * height
    dist = np.ascontiguousarray(dist.T)  # (N, n_off)
    if top_k is not None and top_k < dist.shape[1]:
        keep = np.argsort(dist, axis=1, kind="stable")[:, :top_k]
        trimmed = np.full_like(dist, np.inf)
        np.put_along_axis(trimmed, keep, np.take_along_axis(dist, keep, 1), 1)
        dist = trimmed

    # exp(-(d - d_min)/h^2) / sum(...) equals exp(-d/h^2) / c_i but cannot
    # underflow to an all-zero row
    dmin = dist.min(axis=1, keepdims=True)
    has_nb = np.isfinite(dmin)
    dmin[~has_nb] = 0.0
    sim = np.exp(-(dist - dmin) / (p.h * p.h))
    if p.center == "max":
        # the shifted maximum similarity is exp(0) = 1; insert the center
        # between the negative and positive offsets to keep columns sorted
        mid = len(offs) // 2
        sim = np.insert(sim, mid, has_nb[:, 0].astype(float), axis=1)
        offs = np.insert(offs, mid, [0, 0], axis=0)
    c = sim.sum(axis=1, keepdims=True)
    c[c == 0] = 1.0
    w = sim / c

    # offsets are row-major, so in-image neighbors come in increasing column
    # order and the CSR arrays can be filled directly
    mask = w > 0
    cols = np.arange(N)[:, None] + (offs[:, 0] * width + offs[:, 1])[None, :]
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(mask.sum(axis=1), out=indptr[1:])
    mat = sp.csr_array((w[mask], cols[mask], indptr), shape=(N, N))
    mat.has_sorted_indices = True
    return NonlocalWeights(mat, width, height)


def apply_W(W: NonlocalWeights, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (W.size,):
        raise RegularizerError(f"expected vector of length {W.size}, got shape {x.shape}")
    return W.matrix @ x


def nonlocal_residual(W: NonlocalWeights, x) -> float:
    """||x - W x||^2."""
    x = np.asarray(x, dtype=np.float64)
    e = x - apply_W(W, x)
    return float(e @ e)
