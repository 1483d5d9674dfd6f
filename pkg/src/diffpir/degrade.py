"""Degradation operators and their parameter generators.

A measurement is ``y = H(x) + n`` with ``n`` i.i.d. Gaussian of standard
deviation ``sigma_n`` on the [0, 1] scale. Supported operator kinds:

* ``identity``
* ``blur`` -- circular convolution with a 2-D kernel
* ``inpaint`` -- elementwise masking (dropped pixels read exactly 0)
* ``downsample`` -- either antialiased bicubic downscaling or circular blur
  followed by s-fold decimation at offset (0, 0)

Measurements are deliberately not clamped to [0, 1]: the solvers assume
Gaussian noise on an unconstrained range and clamping would bias sigma_n.
All functions are pure given an explicit numpy Generator; callers own RNG
state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from . import imgcore
from .errors import InvalidRange, ShapeMismatch, UnsupportedFormat
from .imgcore import as_image, circular_convolve, circular_correlate, validate_kernel

__all__ = [
    "DegradationModel",
    "gaussian_kernel",
    "motion_kernel",
    "make_box_mask",
    "make_random_mask",
    "load_mask_png",
    "save_mask_png",
    "bicubic_weights",
    "bicubic_resize",
    "bicubic_downsample_kernel",
    "zero_insert",
    "decimate",
    "apply",
    "apply_forward",
    "apply_adjoint",
]


def _as_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ShapeMismatch(f"mask must be 2-D, got shape {mask.shape}")
    mask = mask.astype(bool)
    if not mask.any():
        raise InvalidRange("mask must keep at least one pixel")
    return mask


@dataclass(frozen=True)
class DegradationModel:
    """Operator H plus its measurement noise level."""

    kind: str
    sigma_n: float = 0.0
    kernel: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    sf: int = 1

    def __post_init__(self):
        if self.sigma_n < 0:
            raise InvalidRange(f"sigma_n must be >= 0, got {self.sigma_n}")
        if self.kind not in ("identity", "blur", "inpaint", "downsample"):
            raise InvalidRange(f"unknown degradation kind {self.kind!r}")

    @classmethod
    def identity(cls, sigma_n: float = 0.0) -> "DegradationModel":
        return cls(kind="identity", sigma_n=sigma_n)

    @classmethod
    def blur(cls, kernel: np.ndarray, sigma_n: float = 0.0) -> "DegradationModel":
        kernel = validate_kernel(kernel)
        if np.any(kernel < 0):
            raise InvalidRange("blur kernels must be non-negative")
        return cls(kind="blur", sigma_n=sigma_n, kernel=kernel)

    @classmethod
    def inpaint(cls, mask: np.ndarray, sigma_n: float = 0.0) -> "DegradationModel":
        return cls(kind="inpaint", sigma_n=sigma_n, mask=_as_mask(mask))

    @classmethod
    def downsample(cls, sf: int, kernel: Optional[np.ndarray] = None,
                   sigma_n: float = 0.0) -> "DegradationModel":
        """s-fold downsampling; bicubic when no kernel is given, else blur+decimate."""
        if int(sf) != sf or sf < 1:
            raise InvalidRange(f"scale factor must be an integer >= 1, got {sf}")
        k = validate_kernel(kernel) if kernel is not None else None
        return cls(kind="downsample", sigma_n=sigma_n, kernel=k, sf=int(sf))


# ---------------------------------------------------------------------------
# kernels and masks
# ---------------------------------------------------------------------------

def gaussian_kernel(size: int, std: float) -> np.ndarray:
    """Isotropic Gaussian kernel sampled at integer offsets, normalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise InvalidRange(f"kernel size must be odd and >= 1, got {size}")
    if std <= 0:
        raise InvalidRange(f"std must be positive, got {std}")
    r = np.arange(size, dtype=np.float64) - size // 2
    g = np.exp(-(r**2) / (2.0 * std * std))
    k = np.outer(g, g)
    return k / k.sum()


def motion_kernel(size: int, intensity: float, rng: np.random.Generator) -> np.ndarray:
    """Trajectory-shaped motion blur kernel.

    A random walk with Gaussian angular jitter scaled by ``intensity`` is
    rasterized with bilinear splatting and normalized. ``intensity == 0``
    degenerates to a straight horizontal line through the kernel center;
    the support is always 8-connected and deterministic given the generator
    state.
    """
    if size < 1 or size % 2 == 0:
        raise InvalidRange(f"kernel size must be odd and >= 1, got {size}")
    if not 0.0 <= intensity <= 1.0:
        raise InvalidRange(f"intensity must be in [0, 1], got {intensity}")
    if size == 1:
        return np.ones((1, 1))

    stride = 0.5  # sub-pixel steps keep consecutive splats 8-connected
    n_steps = 2 * (size - 1)
    theta = 0.0
    pts = np.zeros((n_steps + 1, 2))
    jitter = rng.standard_normal(n_steps) * (intensity * 0.6)
    for i in range(n_steps):
        theta += jitter[i]
        pts[i + 1] = pts[i] + stride * np.array([np.sin(theta), np.cos(theta)])

    # center the trajectory's bounding box on the kernel center, then clamp
    center = size // 2
    mid = (pts.min(axis=0) + pts.max(axis=0)) / 2.0
    pts = pts - mid + center
    pts = np.clip(pts, 0.0, size - 1.0)

    k = np.zeros((size, size))
    for r, c in pts:
        r0, c0 = int(np.floor(r)), int(np.floor(c))
        fr, fc = r - r0, c - c0
        for dr, wr in ((0, 1.0 - fr), (1, fr)):
            for dc, wc in ((0, 1.0 - fc), (1, fc)):
                rr, cc = min(r0 + dr, size - 1), min(c0 + dc, size - 1)
                k[rr, cc] += wr * wc
    return k / k.sum()


def make_box_mask(h: int, w: int, box_h: int = 128, box_w: int = 128,
                  top: Optional[int] = None, left: Optional[int] = None) -> np.ndarray:
    """Keep-mask dropping a box region, centered by default."""
    if box_h < 1 or box_w < 1 or box_h > h or box_w > w:
        raise InvalidRange(f"box {box_h}x{box_w} does not fit in {h}x{w}")
    top = (h - box_h) // 2 if top is None else top
    left = (w - box_w) // 2 if left is None else left
    if top < 0 or left < 0 or top + box_h > h or left + box_w > w:
        raise InvalidRange(f"box at ({top}, {left}) exceeds image bounds")
    mask = np.ones((h, w), dtype=bool)
    mask[top:top + box_h, left:left + box_w] = False
    return _as_mask(mask)


def make_random_mask(h: int, w: int, drop_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Keep-mask dropping exactly round(drop_ratio * h * w) pixels at random."""
    if not 0.0 <= drop_ratio < 1.0:
        raise InvalidRange(f"drop_ratio must be in [0, 1), got {drop_ratio}")
    n_drop = int(round(drop_ratio * h * w))
    mask = np.ones(h * w, dtype=bool)
    if n_drop:
        drop = rng.choice(h * w, size=n_drop, replace=False)
        mask[drop] = False
    return _as_mask(mask.reshape(h, w))


def load_mask_png(path) -> np.ndarray:
    """Load a keep-mask from an 8-bit grayscale PNG (0 = dropped, 255 = kept)."""
    img = imgcore.load_png(path)
    if img.shape[0] != 1:
        raise UnsupportedFormat("mask PNG must be grayscale")
    return _as_mask(img[0] >= 0.5)


def save_mask_png(mask: np.ndarray, path) -> None:
    """Write a keep-mask as grayscale PNG (0 = dropped, 255 = kept)."""
    mask = _as_mask(mask)
    imgcore.save_png(mask[None].astype(np.float64), path)


# ---------------------------------------------------------------------------
# bicubic resampling
# ---------------------------------------------------------------------------

def _cubic(x: np.ndarray) -> np.ndarray:
    # Keys cubic with a = -0.5
    ax = np.abs(x)
    ax2, ax3 = ax * ax, ax * ax * ax
    inner = 1.5 * ax3 - 2.5 * ax2 + 1.0
    outer = -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    return np.where(ax <= 1.0, inner, np.where(ax < 2.0, outer, 0.0))


@lru_cache(maxsize=64)
def bicubic_weights(n_in: int, sf: int, down: bool) -> np.ndarray:
    """1-D resampling matrix (n_out, n_in) for one axis.

    Downsampling uses the antialiased kernel (support scaled by sf) and
    requires n_in divisible by sf; edges are handled by folding out-of-range
    taps onto the clamped boundary sample, and every row is renormalized so
    constants are preserved exactly.
    """
    if down:
        if n_in % sf != 0:
            raise ShapeMismatch(f"extent {n_in} not divisible by scale factor {sf}")
        n_out = n_in // sf
        scale = float(sf)
    else:
        n_out = n_in * sf
        scale = 1.0 / sf
    width = 4.0 * max(scale, 1.0)
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        u = (i + 0.5) * scale - 0.5
        lo = int(np.floor(u - width / 2.0))
        taps = np.arange(lo, lo + int(width) + 2)
        if down:
            w = _cubic((u - taps) / sf) / sf
        else:
            w = _cubic(u - taps)
        idx = np.clip(taps, 0, n_in - 1)
        np.add.at(mat[i], idx, w)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def bicubic_resize(x: np.ndarray, sf: int, direction: str) -> np.ndarray:
    """Bicubic resampling of each channel by an integer factor, up or down."""
    x = as_image(x)
    if direction not in ("down", "up"):
        raise InvalidRange(f"direction must be 'down' or 'up', got {direction!r}")
    if int(sf) != sf or sf < 1:
        raise InvalidRange(f"scale factor must be an integer >= 1, got {sf}")
    if sf == 1:
        return x.copy()
    down = direction == "down"
    wh = bicubic_weights(x.shape[1], int(sf), down)
    ww = bicubic_weights(x.shape[2], int(sf), down)
    return np.einsum("ij,cjk,lk->cil", wh, x, ww, optimize=True)


def _bicubic_adjoint(r: np.ndarray, sf: int, down: bool, hr_shape: tuple[int, int]) -> np.ndarray:
    wh = bicubic_weights(hr_shape[0], sf, down)
    ww = bicubic_weights(hr_shape[1], sf, down)
    return np.einsum("ji,cjk,kl->cil", wh, r, ww, optimize=True)


def bicubic_downsample_kernel(sf: int) -> np.ndarray:
    """Separable bicubic antialiasing filter (width 4*sf+1) as a 2-D kernel.

    Used as the stand-in blur when solving bicubic super-resolution in closed
    form; sf == 1 degenerates to a delta.
    """
    if int(sf) != sf or sf < 1:
        raise InvalidRange(f"scale factor must be an integer >= 1, got {sf}")
    taps = np.arange(-2 * sf, 2 * sf + 1, dtype=np.float64)
    w = _cubic(taps / sf)
    w = w / w.sum()
    return np.outer(w, w)


# ---------------------------------------------------------------------------
# forward / adjoint / measurement
# ---------------------------------------------------------------------------

def zero_insert(x: np.ndarray, sf: int) -> np.ndarray:
    """s-fold zero-insertion upsampler (adjoint of :func:`decimate`)."""
    x = as_image(x)
    c, h, w = x.shape
    out = np.zeros((c, h * sf, w * sf))
    out[:, ::sf, ::sf] = x
    return out


def decimate(x: np.ndarray, sf: int) -> np.ndarray:
    """s-fold decimation keeping the top-left sample of each s x s block."""
    x = as_image(x)
    if x.shape[1] % sf or x.shape[2] % sf:
        raise ShapeMismatch(f"extent {x.shape[1:]} not divisible by {sf}")
    return x[:, ::sf, ::sf].copy()


def apply_forward(model: DegradationModel, x: np.ndarray) -> np.ndarray:
    """Noiseless H(x)."""
    x = as_image(x)
    if model.kind == "identity":
        return x.copy()
    if model.kind == "blur":
        return circular_convolve(x, model.kernel)
    if model.kind == "inpaint":
        if model.mask.shape != x.shape[1:]:
            raise ShapeMismatch(f"mask {model.mask.shape} vs image {x.shape[1:]}")
        return x * model.mask
    if model.kernel is not None:
        return decimate(circular_convolve(x, model.kernel), model.sf)
    return bicubic_resize(x, model.sf, "down")


def apply_adjoint(model: DegradationModel, r: np.ndarray) -> np.ndarray:
    """Adjoint H^T applied to a residual in measurement space."""
    r = as_image(r)
    if model.kind == "identity":
        return r.copy()
    if model.kind == "blur":
        return circular_correlate(r, model.kernel)
    if model.kind == "inpaint":
        if model.mask.shape != r.shape[1:]:
            raise ShapeMismatch(f"mask {model.mask.shape} vs image {r.shape[1:]}")
        return r * model.mask
    if model.kernel is not None:
        return circular_correlate(zero_insert(r, model.sf), model.kernel)
    hr_shape = (r.shape[1] * model.sf, r.shape[2] * model.sf)
    return _bicubic_adjoint(r, model.sf, True, hr_shape)


def apply(model: DegradationModel, x: np.ndarray, rng: np.random.Generator,
          noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Synthesize a measurement y = H(x) + n.

    ``noise`` substitutes the standard-normal draw (test hook). The result is
    not clamped to [0, 1].
    """
    y = apply_forward(model, x)
    if model.sigma_n > 0:
        eps = rng.standard_normal(y.shape) if noise is None else np.asarray(noise)
        if eps.shape != y.shape:
            raise ShapeMismatch(f"noise {eps.shape} vs measurement {y.shape}")
        y = y + model.sigma_n * eps
    return y
