"""Closed-form and first-order solvers for the data subproblem.

Each solver returns the (approximate) minimizer of

    ||y - H(x)||^2 + rho * ||x - z0||^2

for one operator family, given the prior estimate ``z0`` and weight
``rho > 0``. Closed forms reach the global minimum; the gradient step is the
generic one-iteration fallback for operators without one.
"""

from __future__ import annotations

import numpy as np

from . import degrade
from .degrade import DegradationModel, bicubic_resize, zero_insert
from .errors import NumericalInstability, OutOfRange, ShapeMismatch
from .imgcore import as_image, kernel_otf

__all__ = [
    "prox_inpaint",
    "prox_deblur_fft",
    "prox_sr_closed",
    "prox_sr_ibp",
    "prox_gradient_step",
    "data_prox",
]


def _check_rho(rho: float) -> float:
    if rho <= 0:
        raise OutOfRange(f"rho must be positive, got {rho}")
    return float(rho)


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape mismatch {a.shape} vs {b.shape}")


def prox_inpaint(y: np.ndarray, mask: np.ndarray, z0: np.ndarray, rho: float) -> np.ndarray:
    """Elementwise solution (M*y + rho*z0) / (M + rho) with M in {0, 1}."""
    y = as_image(y)
    z0 = as_image(z0)
    rho = _check_rho(rho)
    _same_shape(y, z0)
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != y.shape[1:]:
        raise ShapeMismatch(f"mask {m.shape} vs image {y.shape[1:]}")
    # dropped pixels carry z0 verbatim (no rho*z0/rho rounding)
    return np.where(m > 0, (m * y + rho * z0) / (m + rho), z0)


def prox_deblur_fft(y: np.ndarray, k: np.ndarray, z0: np.ndarray, rho: float) -> np.ndarray:
    """Spectral solution for circular deblurring.

    x = F^-1( (conj(F k) * F y + rho * F z0) / (|F k|^2 + rho) ), per channel.
    The imaginary residue of the inverse transform is discarded after a
    magnitude check.
    """
    y = as_image(y)
    z0 = as_image(z0)
    rho = _check_rho(rho)
    _same_shape(y, z0)
    otf = kernel_otf(k, y.shape[-2:])
    num = np.conj(otf) * np.fft.fft2(y, axes=(-2, -1)) + rho * np.fft.fft2(z0, axes=(-2, -1))
    x = np.fft.ifft2(num / (np.abs(otf) ** 2 + rho), axes=(-2, -1))
    out = x.real
    residue = float(np.linalg.norm(x.imag))
    if residue > 1e-6 * max(float(np.linalg.norm(out)), 1e-300):
        raise NumericalInstability(f"imaginary residue {residue:.3e} exceeds tolerance")
    return out


def _block_mean(a: np.ndarray, sf: int) -> np.ndarray:
    """Average the sf x sf grid of equally sized spectral blocks."""
    c_axes = a.shape[:-2]
    h, w = a.shape[-2], a.shape[-1]
    hb, wb = h // sf, w // sf
    return a.reshape(*c_axes, sf, hb, sf, wb).mean(axis=(-4, -2))


def prox_sr_closed(y: np.ndarray, k: np.ndarray, sf: int, z0: np.ndarray, rho: float) -> np.ndarray:
    """Closed-form solution for s-fold downsampling after circular blur.

    Exact minimizer for H = decimate_sf(k (*) x) with decimation at offset
    (0, 0). Works entirely in the frequency domain: the sf^2 aliases of the
    decimated spectrum are folded by block averaging, solved, and broadcast
    back. sf == 1 degenerates to :func:`prox_deblur_fft`.
    """
    y = as_image(y)
    z0 = as_image(z0)
    rho = _check_rho(rho)
    if int(sf) != sf or sf < 1:
        raise OutOfRange(f"scale factor must be an integer >= 1, got {sf}")
    sf = int(sf)
    if z0.shape[0] != y.shape[0] or z0.shape[1] != y.shape[1] * sf or z0.shape[2] != y.shape[2] * sf:
        raise ShapeMismatch(f"z0 {z0.shape} is not the {sf}x upscale of y {y.shape}")
    otf = kernel_otf(k, z0.shape[-2:])
    otf2 = np.abs(otf) ** 2
    d = np.conj(otf) * np.fft.fft2(zero_insert(y, sf), axes=(-2, -1)) \
        + rho * np.fft.fft2(z0, axes=(-2, -1))
    folded = _block_mean(otf * d, sf) / (_block_mean(otf2, sf) + rho)
    fx = (d - np.conj(otf) * np.tile(folded, (1, sf, sf))) / rho
    return np.fft.ifft2(fx, axes=(-2, -1)).real


def prox_sr_ibp(y: np.ndarray, sf: int, z0: np.ndarray, rho: float,
                gamma: float = 1.0, iters: int = 5) -> np.ndarray:
    """Iterative back-projection for bicubic super-resolution.

    Starting from z0, repeats x <- x + gamma_eff * up(y - down(x)) with the
    weight-adapted step gamma_eff = gamma / (1 + rho).
    """
    y = as_image(y)
    z0 = as_image(z0)
    rho = _check_rho(rho)
    if iters < 1:
        raise OutOfRange(f"iters must be >= 1, got {iters}")
    if gamma < 0:
        raise OutOfRange(f"gamma must be >= 0, got {gamma}")
    if z0.shape[1] != y.shape[1] * sf or z0.shape[2] != y.shape[2] * sf:
        raise ShapeMismatch(f"z0 {z0.shape} is not the {sf}x upscale of y {y.shape}")
    gamma_eff = gamma / (1.0 + rho)
    x = z0.copy()
    for _ in range(iters):
        x = x + gamma_eff * bicubic_resize(y - bicubic_resize(x, sf, "down"), sf, "up")
    return x


def prox_gradient_step(y: np.ndarray, model: DegradationModel, z0: np.ndarray,
                       rho: float) -> np.ndarray:
    """One gradient-descent step on the data term from z0.

    x = z0 - (1 / (2*rho)) * grad ||y - H(z0)||^2, with the gradient taken
    analytically through the adjoint of H; equivalently
    x = z0 + (1 / rho) * H^T (y - H z0).
    """
    y = as_image(y)
    z0 = as_image(z0)
    rho = _check_rho(rho)
    residual = y - degrade.apply_forward(model, z0)
    return z0 + degrade.apply_adjoint(model, residual) / rho


def data_prox(y: np.ndarray, model: DegradationModel, z0: np.ndarray, rho: float,
              sr_solver: str = "closed", ibp_gamma: float = 1.0,
              ibp_iters: int = 5) -> np.ndarray:
    """Dispatch the data subproblem to the solver matching the operator kind."""
    if model.kind == "identity":
        _same_shape(as_image(y), as_image(z0))
        return (y + rho * z0) / (1.0 + _check_rho(rho))
    if model.kind == "inpaint":
        return prox_inpaint(y, model.mask, z0, rho)
    if model.kind == "blur":
        return prox_deblur_fft(y, model.kernel, z0, rho)
    # downsampling
    if model.kernel is not None:
        return prox_sr_closed(y, model.kernel, model.sf, z0, rho)
    if sr_solver == "ibp":
        return prox_sr_ibp(y, model.sf, z0, rho, gamma=ibp_gamma, iters=ibp_iters)
    if sr_solver == "closed":
        k = degrade.bicubic_downsample_kernel(model.sf)
        # crop the filter to an odd extent no larger than the image
        kh = min(k.shape[0], z0.shape[1] - (z0.shape[1] + 1) % 2)
        kw = min(k.shape[1], z0.shape[2] - (z0.shape[2] + 1) % 2)
        if (kh, kw) != k.shape:
            ch, cw = k.shape[0] // 2, k.shape[1] // 2
            k = k[ch - kh // 2: ch + kh // 2 + 1, cw - kw // 2: cw + kw // 2 + 1]
            k = k / k.sum()
        return prox_sr_closed(y, k, model.sf, z0, rho)
    if sr_solver == "gradient":
        return prox_gradient_step(y, model, z0, rho)
    raise OutOfRange(f"unknown sr_solver {sr_solver!r}")
