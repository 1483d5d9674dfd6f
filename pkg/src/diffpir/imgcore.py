"""Image tensors, 2-D FFTs, circular convolution, PNG I/O, and fidelity metrics.

An image is a numpy array of shape ``(channels, height, width)`` holding
floating-point values with nominal range ``[0, 1]``. Every transform treats
channels independently, and every public function is pure: no shared mutable
state, safe to call from multiple threads.

Convolution is periodic (circular boundaries). Kernels are embedded at the
top-left of the image grid and circularly shifted by their center
``(floor(kh/2), floor(kw/2))`` so that a delta kernel is an exact identity.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IoError, KernelTooLarge, ShapeMismatch, UnsupportedFormat

__all__ = [
    "as_image",
    "validate_kernel",
    "fft2",
    "ifft2",
    "kernel_otf",
    "circular_convolve",
    "circular_correlate",
    "load_png",
    "save_png",
    "load_kernel",
    "save_kernel",
    "psnr",
    "mse",
]

KERNEL_MAGIC = b"K2D1"


def as_image(x: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Validate and coerce an array to image layout (channels, height, width)."""
    x = np.asarray(x, dtype=dtype)
    if x.ndim != 3:
        raise ShapeMismatch(f"image must be 3-D (C, H, W), got shape {x.shape}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ShapeMismatch(f"image must have positive extent, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ShapeMismatch("image contains non-finite values")
    return x


def validate_kernel(k: np.ndarray, normalized: bool = True) -> np.ndarray:
    """Validate a 2-D kernel; normalized blur kernels must sum to 1 within 1e-6."""
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 2:
        raise ShapeMismatch(f"kernel must be 2-D, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ShapeMismatch("kernel contains non-finite values")
    if normalized and abs(float(k.sum()) - 1.0) > 1e-6:
        raise ShapeMismatch(f"normalized kernel must sum to 1, got {k.sum()!r}")
    return k


def fft2(x: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2-D DFT, per channel. Returns a complex spectrum."""
    x = as_image(x)
    return np.fft.fft2(x, axes=(-2, -1))


def ifft2(f: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2`. Returns a complex array; take ``.real`` for images."""
    f = np.asarray(f)
    if f.ndim != 3:
        raise ShapeMismatch(f"spectrum must be 3-D (C, H, W), got shape {f.shape}")
    return np.fft.ifft2(f, axes=(-2, -1))


def kernel_otf(k: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Optical transfer function of a kernel on an (h, w) periodic grid.

    The kernel is zero-padded at the top-left and circularly rolled by its
    center so that a 1x1 delta kernel yields an all-ones spectrum.
    """
    k = validate_kernel(k, normalized=False)
    h, w = shape
    kh, kw = k.shape
    if kh > h or kw > w:
        raise KernelTooLarge(f"kernel {k.shape} exceeds image extent {shape}")
    padded = np.zeros((h, w), dtype=np.float64)
    padded[:kh, :kw] = k
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


def circular_convolve(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Periodic-boundary convolution of each channel with a 2-D kernel."""
    x = as_image(x)
    otf = kernel_otf(k, x.shape[-2:])
    out = np.fft.ifft2(np.fft.fft2(x, axes=(-2, -1)) * otf, axes=(-2, -1))
    return out.real


def circular_correlate(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`circular_convolve` with the same kernel."""
    x = as_image(x)
    otf = kernel_otf(k, x.shape[-2:])
    out = np.fft.ifft2(np.fft.fft2(x, axes=(-2, -1)) * np.conj(otf), axes=(-2, -1))
    return out.real


def load_png(path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB PNG as a (C, H, W) image in [0, 1]."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise IoError(f"cannot read image {path!r}: {exc}") from exc
    mode = img.mode
    if mode == "P":
        if "transparency" in img.info:
            raise UnsupportedFormat("palette PNG with alpha is not supported")
        img = img.convert("RGB")
        mode = "RGB"
    if mode in ("I", "I;16", "I;16B", "I;16L", "F"):
        raise UnsupportedFormat(f"16-bit / float PNG (mode {mode!r}) is not supported")
    if mode not in ("L", "RGB"):
        raise UnsupportedFormat(f"unsupported PNG mode {mode!r}; expected L or RGB")
    arr = np.asarray(img, dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return arr


def save_png(x: np.ndarray, path) -> None:
    """Save a 1- or 3-channel image as 8-bit PNG, clamping to [0, 1] first."""
    x = as_image(x)
    c = x.shape[0]
    if c not in (1, 3):
        raise UnsupportedFormat(f"can only save 1- or 3-channel images, got {c}")
    data = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    if c == 1:
        img = Image.fromarray(data[0], mode="L")
    else:
        img = Image.fromarray(np.moveaxis(data, 0, -1), mode="RGB")
    try:
        img.save(path, format="PNG")
    except OSError as exc:
        raise IoError(f"cannot write image {path!r}: {exc}") from exc


def load_kernel(path) -> np.ndarray:
    """Load a kernel from the K2D1 binary format or from a grayscale PNG.

    K2D1 layout: magic ``K2D1``, two u32 little-endian dims (height, width),
    then height*width f64 little-endian weights. PNG kernels are renormalized
    to sum 1.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read kernel {path!r}: {exc}") from exc
    if raw[:4] == KERNEL_MAGIC:
        if len(raw) < 12:
            raise UnsupportedFormat("truncated K2D1 kernel file")
        h, w = struct.unpack_from("<II", raw, 4)
        if h < 1 or w < 1:
            raise UnsupportedFormat(f"K2D1 kernel has empty extent {h}x{w}")
        expected = 12 + 8 * h * w
        if len(raw) != expected:
            raise UnsupportedFormat(
                f"K2D1 kernel payload is {len(raw) - 12} bytes, expected {8 * h * w}"
            )
        k = np.frombuffer(raw, dtype="<f8", offset=12).reshape(h, w)
        return np.ascontiguousarray(k)
    k = load_png(path)
    if k.shape[0] != 1:
        raise UnsupportedFormat("PNG kernels must be grayscale")
    k = k[0]
    total = float(k.sum())
    if total <= 0:
        raise UnsupportedFormat("PNG kernel has zero mass")
    return k / total


def save_kernel(k: np.ndarray, path) -> None:
    """Write a kernel in the K2D1 binary format."""
    k = validate_kernel(k, normalized=False)
    h, w = k.shape
    payload = KERNEL_MAGIC + struct.pack("<II", h, w) + np.ascontiguousarray(k, dtype="<f8").tobytes()
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise IoError(f"cannot write kernel {path!r}: {exc}") from exc


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared error between two images of identical shape."""
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on peak 1.0; ``inf`` when images match."""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / err)
