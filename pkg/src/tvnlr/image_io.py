"""Grayscale image I/O, cropping and PSNR.

Images are kept as immutable row-major float64 arrays with intensities in
[0, 1]. Files are 8-bit PGM (P2/P5) or PNG; samples are divided by 255 on
load and quantized with ``round(clip(x, 0, 1) * 255)`` on save.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage, UnidentifiedImageError

PSNR_INF = math.inf


class ImageError(ValueError):
    """Raised for unreadable, unsupported or inconsistent images."""


@dataclass(frozen=True)
class Image:
    width: int
    height: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64).ravel()
        if self.width < 1 or self.height < 1:
            raise ImageError(f"invalid image shape {self.width}x{self.height}")
        if data.size != self.width * self.height:
            raise ImageError(
                f"data length {data.size} != {self.width}x{self.height}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, arr) -> "Image":
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ImageError("expected a 2-D array")
        return cls(arr.shape[1], arr.shape[0], arr.ravel())

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def size(self) -> int:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return self.data.reshape(self.height, self.width)

    def clamped(self) -> "Image":
        return Image(self.width, self.height, np.clip(self.data, 0.0, 1.0))


def load_image(path) -> Image:
    """Load an 8-bit grayscale PGM or PNG file as an :class:`Image`."""
    try:
        with PILImage.open(path) as im:
            fmt, mode = im.format, im.mode
            if fmt not in ("PPM", "PNG"):
                raise ImageError(f"unsupported format: {fmt}")
            if mode in ("RGB", "RGBA", "LA", "P", "CMYK", "YCbCr", "PA"):
                raise ImageError("non-grayscale input")
            if mode != "L":
                raise ImageError(f"unsupported pixel mode {mode!r} (8-bit only)")
            samples = np.asarray(im, dtype=np.uint8)
    except (OSError, UnidentifiedImageError) as exc:
        if isinstance(exc, UnidentifiedImageError):
            raise ImageError(f"unsupported format: {path}") from exc
        raise ImageError(f"cannot read {path}: {exc}") from exc
    return Image.from_array(samples.astype(np.float64) / 255.0)


def quantize(img: Image) -> np.ndarray:
    """8-bit samples of ``img`` in row-major (height, width) layout."""
    # half-up rounding, as for the measurement count
    q = np.floor(np.clip(img.as_array(), 0.0, 1.0) * 255.0 + 0.5)
    return q.astype(np.uint8)


def save_image(img: Image, path) -> None:
    """Write ``img`` as 8-bit grayscale; the extension picks PGM or PNG."""
    ext = os.path.splitext(str(path))[1].lower()
    fmt = {".pgm": "PPM", ".png": "PNG"}.get(ext)
    if fmt is None:
        raise ImageError(f"unsupported output extension {ext!r}")
    try:
        PILImage.fromarray(quantize(img), mode="L").save(path, format=fmt)
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def crop(img: Image, x0: int, y0: int, w: int, h: int) -> Image:
    if w < 1 or h < 1 or x0 < 0 or y0 < 0 \
            or x0 + w > img.width or y0 + h > img.height:
        raise ImageError(
            f"crop rectangle ({x0},{y0},{w},{h}) outside "
            f"{img.width}x{img.height} image")
    return Image.from_array(img.as_array()[y0:y0 + h, x0:x0 + w])


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB with peak 255, MSE taken on unquantized intensities x255.

    Returns ``PSNR_INF`` for identical images.
    """
    if a.shape != b.shape:
        raise ImageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    diff = (a.data - b.data) * 255.0
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(255.0 ** 2 / mse)
