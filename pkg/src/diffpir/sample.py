"""Sampling loops: DiffPIR, unconditional DDPM/DDIM, and the DPS baselines.

All steps are pure functions of (inputs, rng state). Random draws are
consumed in a fixed documented order so trajectories are reproducible across
refactors: the chain initialization draw first, then one fresh-noise draw per
step in plan order (DPS-yt additionally draws its measurement noise after the
step noise). Every stochastic step accepts optional ``noise`` overrides as a
deterministic test hook.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import degrade, imgcore, prox
from .degrade import DegradationModel
from .denoise import DenoiserHandle, eps_from_x0
from .errors import NonDifferentiableDenoiser, OutOfRange, ShapeMismatch
from .imgcore import as_image
from .schedule import SIGMA_FLOOR, NoiseSchedule, StepPlan, rho

__all__ = [
    "SamplerConfig",
    "StepRecord",
    "Trajectory",
    "forward_diffuse",
    "hqs_prior_step",
    "diffpir_step",
    "run_diffpir",
    "ddpm_reverse_step",
    "run_ddpm",
    "ddim_step",
    "dps_yt_step",
    "dps_y0_step",
    "run_dps",
    "default_initializer",
    "dump_trajectory",
]


@dataclass(frozen=True)
class SamplerConfig:
    """Everything a sampling run needs beyond the schedule and the operator.

    lambda_ is the guidance weight of the data term; zeta the fraction of
    fresh noise injected per DiffPIR step; eta the DDIM stochasticity. The
    super-resolution solver options exist because the bicubic operator has
    both a closed-form and an iterative data solver.
    """

    lambda_: float = 7.0
    zeta: float = 0.3
    eta: float = 0.0
    steps: int = 100
    t_start: Optional[int] = None
    seed: int = 0
    sampler: str = "diffpir"
    sigma_floor: float = SIGMA_FLOOR
    sr_solver: str = "closed"
    ibp_gamma: float = 1.0
    ibp_iters: int = 5
    precision: str = "f64"
    record_trajectory: bool = False

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise OutOfRange(f"lambda must be positive, got {self.lambda_}")
        if not 0.0 <= self.zeta <= 1.0:
            raise OutOfRange(f"zeta must be in [0, 1], got {self.zeta}")
        if not 0.0 <= self.eta <= 1.0:
            raise OutOfRange(f"eta must be in [0, 1], got {self.eta}")
        if self.steps < 1:
            raise OutOfRange(f"steps must be >= 1, got {self.steps}")
        if self.precision not in ("f64", "f32"):
            raise OutOfRange(f"precision must be 'f64' or 'f32', got {self.precision!r}")


@dataclass
class StepRecord:
    t: int
    x_t: np.ndarray
    x0: np.ndarray
    x0_hat: np.ndarray
    residual: float


@dataclass
class Trajectory:
    records: list[StepRecord] = field(default_factory=list)
    nfe: int = 0

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)


def _state_dtype(cfg: SamplerConfig):
    return np.float32 if cfg.precision == "f32" else np.float64


def _draw(rng: Optional[np.random.Generator], noise: Optional[np.ndarray],
          shape) -> np.ndarray:
    if noise is not None:
        noise = np.asarray(noise)
        if noise.shape != tuple(shape):
            raise ShapeMismatch(f"noise {noise.shape} vs state {tuple(shape)}")
        return noise
    if rng is None:
        raise OutOfRange("a generator is required when no noise override is given")
    return rng.standard_normal(shape)


def forward_diffuse(x0: np.ndarray, t: int, s: NoiseSchedule, rng: np.random.Generator,
                    noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps at an arbitrary timestep."""
    x0 = as_image(x0)
    ab = s.alpha_bar_at(t)
    eps = _draw(rng, noise, x0.shape)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def hqs_prior_step(x_t: np.ndarray, score: np.ndarray, t: int, s: NoiseSchedule,
                   rng: Optional[np.random.Generator] = None,
                   noise: Optional[np.ndarray] = None) -> np.ndarray:
    """One reverse step derived from a half-quadratic prior update.

    The state is lifted to its variance-exploding form x_t / sqrt(alpha_t),
    nudged by one first-order prior step of length beta_t / (1 - beta_t) on
    the lifted score (sqrt(alpha_t) times the given score), and perturbed
    with sqrt(beta_t) fresh noise. Algebraically identical to the DDPM
    reverse update driven by eps = -sqrt(1 - alpha_bar_t) * score.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    score = np.asarray(score, dtype=np.float64)
    beta = s.beta_at(t)
    alpha = s.alpha_at(t)
    sigma_rel2 = beta / (1.0 - beta)
    noise = _draw(rng, noise, x_t.shape)
    lifted = x_t / math.sqrt(alpha)
    z = lifted + sigma_rel2 * (math.sqrt(alpha) * score)
    return z + math.sqrt(beta) * np.asarray(noise)


def default_initializer(y: np.ndarray, model: DegradationModel) -> np.ndarray:
    """Cheap pseudo-inverse of the measurement used when t_start < n_train.

    Inpainting fills dropped pixels with the observed mean; blur and identity
    start from the measurement itself; downsampling starts from the bicubic
    upsample.
    """
    y = as_image(y)
    if model.kind == "inpaint":
        filled = y.copy()
        kept = model.mask
        for c in range(y.shape[0]):
            mean = float(y[c][kept].mean())
            filled[c][~kept] = mean
        return filled
    if model.kind == "downsample":
        return degrade.bicubic_resize(y, model.sf, "up")
    return y.copy()


def _denoise_x0(denoiser: DenoiserHandle, x_t: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    x0 = np.asarray(denoiser.predict_x0(x_t, t, s), dtype=np.float64)
    if x0.shape != x_t.shape:
        raise ShapeMismatch(f"denoiser returned {x0.shape}, expected {x_t.shape}")
    if not np.all(np.isfinite(x0)):
        raise OutOfRange("denoiser produced non-finite values")
    return x0


def diffpir_step(x_t: np.ndarray, t: int, t_prev: int, denoiser: DenoiserHandle,
                 model: DegradationModel, y: np.ndarray, s: NoiseSchedule,
                 cfg: SamplerConfig, rng: np.random.Generator,
                 noise: Optional[np.ndarray] = None,
                 trajectory: Optional[Trajectory] = None) -> np.ndarray:
    """One DiffPIR step from timestep t down to t_prev.

    Predicts the clean image, solves the data subproblem at weight rho_t,
    reconstructs the effective noise, and re-noises to level t_prev mixing
    sqrt(1-zeta) of the reconstructed noise with sqrt(zeta) fresh noise.
    t_prev == 0 returns the data-consistent estimate without residual noise.
    """
    if not t > t_prev >= 0:
        raise OutOfRange(f"need t > t_prev >= 0, got ({t}, {t_prev})")
    x_t = np.asarray(x_t)
    x0 = _denoise_x0(denoiser, np.asarray(x_t, dtype=np.float64), t, s)
    rho_t = rho(s, t, cfg.lambda_, model.sigma_n, cfg.sigma_floor)
    x0_hat = prox.data_prox(y, model, x0, rho_t, sr_solver=cfg.sr_solver,
                            ibp_gamma=cfg.ibp_gamma, ibp_iters=cfg.ibp_iters)

    if trajectory is not None:
        residual = float(np.linalg.norm(y - degrade.apply_forward(model, x0_hat)))
        trajectory.append(StepRecord(t=t, x_t=np.array(x_t, dtype=np.float64),
                                     x0=x0, x0_hat=x0_hat, residual=residual))

    if t_prev == 0:
        return x0_hat.astype(_state_dtype(cfg))

    ab_t = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t_prev)
    eps_hat = eps_from_x0(np.asarray(x_t, dtype=np.float64), x0_hat, ab_t)
    eps = _draw(rng, noise, x0_hat.shape)
    mix = math.sqrt(1.0 - cfg.zeta) * eps_hat + math.sqrt(cfg.zeta) * eps
    x_prev = math.sqrt(ab_prev) * x0_hat + math.sqrt(1.0 - ab_prev) * mix
    return x_prev.astype(_state_dtype(cfg))


def run_diffpir(y: np.ndarray, model: DegradationModel, denoiser: DenoiserHandle,
                s: NoiseSchedule, plan: StepPlan, cfg: SamplerConfig,
                rng: Optional[np.random.Generator] = None) -> tuple[np.ndarray, Trajectory]:
    """Fold :func:`diffpir_step` over a sampling plan.

    The chain starts from pure Gaussian noise when the plan begins at the
    schedule end, otherwise from a forward-diffused cheap pseudo-inverse of
    the measurement (see :func:`default_initializer`).
    """
    y = as_image(y)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t0 = plan.timesteps[0]
    init = default_initializer(y, model)
    if t0 >= s.n_train:
        x = rng.standard_normal(init.shape)
    else:
        x = forward_diffuse(init, t0, s, rng)
    x = x.astype(_state_dtype(cfg))

    traj = Trajectory()
    record = traj if cfg.record_trajectory else None
    for t, t_prev in zip(plan.timesteps, (*plan.timesteps[1:], 0)):
        x = diffpir_step(x, t, t_prev, denoiser, model, y, s, cfg, rng,
                         trajectory=record)
        traj.nfe += 1
    return np.asarray(x, dtype=np.float64), traj


def ddpm_reverse_step(x_t: np.ndarray, t: int, denoiser: DenoiserHandle,
                      s: NoiseSchedule, rng: Optional[np.random.Generator] = None,
                      noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Ancestral reverse step using the denoiser's implied noise prediction."""
    if t < 1:
        raise OutOfRange(f"t must be >= 1, got {t}")
    x_t = np.asarray(x_t, dtype=np.float64)
    beta = s.beta_at(t)
    alpha = s.alpha_at(t)
    ab = s.alpha_bar_at(t)
    x0 = _denoise_x0(denoiser, x_t, t, s)
    eps_pred = eps_from_x0(x_t, x0, ab)
    noise = _draw(rng, noise, x_t.shape)
    mean = (x_t - beta / math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(alpha)
    return mean + math.sqrt(beta) * noise


def run_ddpm(denoiser: DenoiserHandle, s: NoiseSchedule, shape: tuple[int, int, int],
             rng: np.random.Generator) -> np.ndarray:
    """Unconditional full-schedule ancestral sampling from pure noise."""
    x = rng.standard_normal(shape)
    for t in range(s.n_train, 0, -1):
        x = ddpm_reverse_step(x, t, denoiser, s, rng)
    return x


def ddim_step(x_t: np.ndarray, t: int, t_prev: int, denoiser: DenoiserHandle,
              s: NoiseSchedule, eta: float, rng: Optional[np.random.Generator] = None,
              noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Non-Markovian reverse step; eta = 0 is deterministic, eta = 1 ancestral."""
    if not t > t_prev >= 0:
        raise OutOfRange(f"need t > t_prev >= 0, got ({t}, {t_prev})")
    if not 0.0 <= eta <= 1.0:
        raise OutOfRange(f"eta must be in [0, 1], got {eta}")
    x_t = np.asarray(x_t, dtype=np.float64)
    ab_t = s.alpha_bar_at(t)
    ab_prev = s.alpha_bar_at(t_prev)
    x0 = _denoise_x0(denoiser, x_t, t, s)
    eps_pred = eps_from_x0(x_t, x0, ab_t)
    sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    out = math.sqrt(ab_prev) * x0 + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps_pred
    if sigma > 0.0:
        out = out + sigma * _draw(rng, noise, x_t.shape)
    return out


def _dps_factor(t: int, s: NoiseSchedule, cfg: SamplerConfig, sigma_n: float) -> float:
    """Correction scale sigma_t^2 / (2 * lambda * sigma_n^2) with clamped sigma_n."""
    sigma_rel = s.sigma_rel_at(t)
    sn = max(sigma_n, cfg.sigma_floor)
    return sigma_rel**2 / (2.0 * cfg.lambda_ * sn * sn)


def dps_yt_step(x_t: np.ndarray, t: int, denoiser: DenoiserHandle,
                model: DegradationModel, y: np.ndarray, s: NoiseSchedule,
                cfg: SamplerConfig, rng: np.random.Generator,
                noise: Optional[np.ndarray] = None,
                meas_noise: Optional[np.ndarray] = None) -> np.ndarray:
    """Posterior-sampling step guided by the noised measurement y_{t-1}.

    After an unconditional reverse step z, the measurement is lifted to the
    same noise level (y_{t-1} = sqrt(ab) y + sqrt(1-ab) eps) and z descends
    along the analytic adjoint gradient of ||y_{t-1} - H(z)||^2.
    """
    z = ddpm_reverse_step(x_t, t, denoiser, s, rng, noise=noise)
    ab_prev = s.alpha_bar_at(t - 1)
    meas_noise = _draw(rng, meas_noise, y.shape)
    y_t = math.sqrt(ab_prev) * y + math.sqrt(1.0 - ab_prev) * meas_noise
    grad = -2.0 * degrade.apply_adjoint(model, y_t - degrade.apply_forward(model, z))
    return z - _dps_factor(t, s, cfg, model.sigma_n) * grad


def dps_y0_step(x_t: np.ndarray, t: int, denoiser: DenoiserHandle,
                model: DegradationModel, y: np.ndarray, s: NoiseSchedule,
                cfg: SamplerConfig, rng: np.random.Generator,
                noise: Optional[np.ndarray] = None, allow_fd: bool = True,
                fd_eps: float = 1e-4) -> np.ndarray:
    """Posterior-sampling step guided through the denoiser's clean estimate.

    The correction descends ||y - H(x0(z))||^2, differentiated through the
    denoiser: analytic priors supply an exact Jacobian-vector product, other
    denoisers fall back to a central finite difference along the single
    direction H^T(y - H(x0)) (two extra denoiser evaluations).
    """
    z = ddpm_reverse_step(x_t, t, denoiser, s, rng, noise=noise)
    t_eval = max(t - 1, 1)  # z approximates the state at t-1; clamp at the last step
    x0 = _denoise_x0(denoiser, z, t_eval, s)
    inner = -2.0 * degrade.apply_adjoint(model, y - degrade.apply_forward(model, x0))
    grad = denoiser.apply_x0_jacobian(z, t_eval, s, inner)
    if grad is None:
        if not allow_fd:
            raise NonDifferentiableDenoiser(
                "denoiser has no Jacobian path and finite differences are disabled")
        norm = float(np.linalg.norm(inner))
        if norm == 0.0:
            grad = np.zeros_like(z)
        else:
            d = inner / norm
            f_plus = _data_misfit(y, model, _denoise_x0(denoiser, z + fd_eps * d, t_eval, s))
            f_minus = _data_misfit(y, model, _denoise_x0(denoiser, z - fd_eps * d, t_eval, s))
            grad = ((f_plus - f_minus) / (2.0 * fd_eps)) * d
    return z - _dps_factor(t, s, cfg, model.sigma_n) * grad


def _data_misfit(y: np.ndarray, model: DegradationModel, x: np.ndarray) -> float:
    return float(np.sum((y - degrade.apply_forward(model, x)) ** 2))


def run_dps(y: np.ndarray, model: DegradationModel, denoiser: DenoiserHandle,
            s: NoiseSchedule, cfg: SamplerConfig, rng: Optional[np.random.Generator] = None,
            variant: str = "yt") -> tuple[np.ndarray, Trajectory]:
    """Run a DPS baseline over consecutive timesteps t_start..1."""
    if variant not in ("yt", "y0"):
        raise OutOfRange(f"variant must be 'yt' or 'y0', got {variant!r}")
    y = as_image(y)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    t_start = cfg.t_start or s.n_train
    init = default_initializer(y, model)
    if t_start >= s.n_train:
        x = rng.standard_normal(init.shape)
    else:
        x = forward_diffuse(init, t_start, s, rng)
    traj = Trajectory()
    step = dps_yt_step if variant == "yt" else dps_y0_step
    for t in range(t_start, 0, -1):
        x = step(x, t, denoiser, model, y, s, cfg, rng)
        traj.nfe += 1
    return x, traj


def dump_trajectory(traj: Trajectory, out_dir, y: np.ndarray,
                    model: DegradationModel) -> Path:
    """Write per-step PNG frames plus a JSON manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(traj.records):
        frames = {}
        for tag, img in (("x_t", rec.x_t), ("x0", rec.x0), ("x0_hat", rec.x0_hat)):
            name = f"step{i:04d}_t{rec.t:04d}_{tag}.png"
            imgcore.save_png(np.clip(img, 0.0, 1.0), out_dir / name)
            frames[tag] = name
        entries.append({"t": rec.t, "frames": frames, "residual": rec.residual})
    manifest = out_dir / "trajectory.json"
    manifest.write_text(json.dumps({"steps": entries, "nfe": traj.nfe}, indent=2))
    return manifest
