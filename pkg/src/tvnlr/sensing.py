"""Dense Gaussian measurement operator and the measurements container.

The operator entries are i.i.d. standard normal draws from numpy's PCG64
bit generator (``numpy.random.Generator(PCG64(seed)).standard_normal``),
filled row-major. PCG64 and the ziggurat normal sampler are specified by
numpy to be stable across platforms, so (M, N, seed) fully determines A
and the operator is never written to disk.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .image_io import Image

MAGIC = b"TVNLRB1\0"
_HEADER = struct.Struct("<8s5Q")


class SensingError(ValueError):
    pass


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise SensingError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


@dataclass(frozen=True)
class MeasurementOperator:
    """Dense M x N operator; ``entries`` are the seeded draws times ``scale``."""

    rows: int
    cols: int
    seed: int
    entries: np.ndarray = field(repr=False)
    scale: float = 1.0

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    @property
    def ratio(self) -> float:
        return self.rows / self.cols

    def forward(self, u: np.ndarray) -> np.ndarray:
        return forward(self, u)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return adjoint(self, y)

    def scaled(self, factor: float) -> "MeasurementOperator":
        entries = self.entries * factor
        entries.setflags(write=False)
        return MeasurementOperator(self.rows, self.cols, self.seed, entries,
                                   self.scale * factor)


def build_operator(M: int, N: int, seed: int) -> MeasurementOperator:
    """Regenerate the M x N Gaussian operator for ``seed``."""
    M, N = int(M), int(N)
    if M <= 0 or N <= 0:
        raise SensingError(f"operator dimensions must be positive, got {M}x{N}")
    if M > N:
        raise SensingError(f"M={M} exceeds N={N}")
    seed = _check_seed(seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    entries = rng.standard_normal((M, N), dtype=np.float64)
    entries.setflags(write=False)
    return MeasurementOperator(M, N, seed, entries)


def forward(A: MeasurementOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (A.cols,):
        raise SensingError(f"expected vector of length {A.cols}, got shape {u.shape}")
    return A.entries @ u


def adjoint(A: MeasurementOperator, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.rows,):
        raise SensingError(f"expected vector of length {A.rows}, got shape {y.shape}")
    return A.entries.T @ y


def spectral_norm(A: MeasurementOperator, tol: float = 1e-6,
                  max_iter: int = 30) -> float:
    """Estimate of the largest singular value of A (power iteration on A A^T).

    The estimate is a lower bound, typically within 0.1% for Gaussian
    operators; the fixed start vector makes it deterministic.
    """
    y = np.ones(A.rows) / np.sqrt(A.rows)
    sigma2 = 0.0
    for _ in range(max_iter):
        z = A.entries @ (A.entries.T @ y)
        new = float(np.linalg.norm(z))
        if new == 0.0:
            return 0.0
        y = z / new
        if abs(new - sigma2) <= tol * new:
            sigma2 = new
            break
        sigma2 = new
    return float(np.sqrt(sigma2))


def measurement_count(ratio: float, N: int) -> int:
    if not 0.0 < ratio <= 1.0:
        raise SensingError(f"ratio must lie in (0, 1], got {ratio}")
    # half-up rounding; builtin round() is half-to-even
    M = int(np.floor(ratio * N + 0.5))
    if M < 1:
        raise SensingError(f"ratio {ratio} yields no measurements for N={N}")
    return min(M, N)


@dataclass(frozen=True)
class Measurements:
    b: np.ndarray = field(repr=False)
    seed: int
    N: int
    width: int
    height: int

    @property
    def M(self) -> int:
        return int(self.b.size)

    @property
    def ratio(self) -> float:
        return self.M / self.N

    def operator(self) -> MeasurementOperator:
        return build_operator(self.M, self.N, self.seed)


def sense(img: Image, ratio: float, seed: int) -> Measurements:
    N = img.size
    M = measurement_count(ratio, N)
    A = build_operator(M, N, seed)
    b = forward(A, img.data)
    return Measurements(b, A.seed, N, img.width, img.height)


def write_measurements(meas: Measurements, path) -> None:
    b = np.ascontiguousarray(meas.b, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, meas.M, meas.N, meas.width,
                              meas.height, meas.seed))
        fh.write(b.tobytes())


def read_measurements(path) -> Measurements:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise SensingError(f"{path}: truncated header")
    magic, M, N, width, height, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SensingError(f"{path}: bad magic {magic!r}")
    if M == 0 or N == 0 or M > N or width * height != N:
        raise SensingError(
            f"{path}: inconsistent header M={M} N={N} shape={width}x{height}")
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * M:
        raise SensingError(
            f"{path}: expected {8 * M} payload bytes, found {len(payload)}")
    b = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(b)):
        raise SensingError(f"{path}: non-finite measurements")
    return Measurements(b, int(seed), int(N), int(width), int(height))
