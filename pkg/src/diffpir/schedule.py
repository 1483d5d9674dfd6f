"""Noise schedules and sampling-timestep plans.

Timesteps are 1-based: ``beta[t-1]`` stores the variance added at step ``t``
for ``t`` in ``1..n_train``, and ``alpha_bar_at(0) == 1`` by convention so
that the final reverse step returns the clean estimate exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidRange, OutOfRange

__all__ = [
    "NoiseSchedule",
    "StepPlan",
    "build_linear_schedule",
    "sigma_bar",
    "rho",
    "quadratic_subsequence",
    "SIGMA_FLOOR",
]

# Effective measurement-noise floor so the data-prox weight stays finite and
# positive in the noiseless case.
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep variances beta_t with derived alpha_t and alpha_bar_t."""

    n_train: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        if not (len(self.beta) == len(self.alpha) == len(self.alpha_bar) == self.n_train):
            raise InvalidRange("schedule tables must all have n_train entries")
        if not np.all((self.beta > 0) & (self.beta < 1)):
            raise InvalidRange("beta values must lie strictly inside (0, 1)")
        if not np.array_equal(self.alpha, 1.0 - self.beta):
            raise InvalidRange("alpha must equal 1 - beta exactly")
        if not (np.all(np.diff(self.alpha_bar) < 0) or self.n_train == 1):
            raise InvalidRange("alpha_bar must be strictly decreasing")
        if not np.all((self.alpha_bar > 0) & (self.alpha_bar < 1)):
            raise InvalidRange("alpha_bar values must lie strictly inside (0, 1)")
        for arr in (self.beta, self.alpha, self.alpha_bar):
            arr.setflags(write=False)

    def _check(self, t: int, lo: int = 1) -> int:
        t = int(t)
        if not lo <= t <= self.n_train:
            raise OutOfRange(f"timestep {t} outside [{lo}, {self.n_train}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        t = self._check(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])

    def sigma_rel_at(self, t: int) -> float:
        """Relative noise level sqrt(beta_t / (1 - beta_t)) of one step."""
        b = self.beta_at(t)
        return math.sqrt(b / (1.0 - b))


@dataclass(frozen=True)
class StepPlan:
    """Strictly decreasing sampling timesteps, ending at 1."""

    timesteps: tuple[int, ...]
    t_start: int

    def __post_init__(self):
        ts = self.timesteps
        if not ts:
            raise InvalidRange("plan must contain at least one timestep")
        # multi-step plans always finish the chain; a degenerate length-1
        # plan may sit at any timestep
        if len(ts) > 1 and ts[-1] != 1:
            raise InvalidRange(f"plan must end at timestep 1, got {ts!r}")
        if ts[0] > self.t_start or ts[-1] < 1:
            raise InvalidRange(f"plan {ts!r} outside [1, {self.t_start}]")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise InvalidRange("plan timesteps must be strictly decreasing")

    def __len__(self) -> int:
        return len(self.timesteps)


def build_linear_schedule(n_train: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta schedule inclusive of both endpoints.

    The running product for alpha_bar is accumulated in double precision.
    Standard defaults elsewhere in the toolkit are (1000, 1e-4, 0.02).
    """
    if n_train < 1:
        raise InvalidRange(f"n_train must be >= 1, got {n_train}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRange(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, n_train, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(n_train=n_train, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def sigma_bar(s: NoiseSchedule, t: int) -> float:
    """Effective noise level sqrt((1 - alpha_bar_t) / alpha_bar_t); increasing in t."""
    ab = s.alpha_bar_at(s._check(t))
    return math.sqrt((1.0 - ab) / ab)


def rho(s: NoiseSchedule, t: int, lam: float, sigma_n: float, sigma_floor: float = SIGMA_FLOOR) -> float:
    """Data-prox weight lambda * sigma_n^2 / sigma_bar_t^2.

    sigma_n is clamped from below by sigma_floor so the weight never vanishes
    for noiseless measurements.
    """
    if lam <= 0:
        raise OutOfRange(f"lambda must be positive, got {lam}")
    if sigma_n < 0:
        raise OutOfRange(f"sigma_n must be >= 0, got {sigma_n}")
    sn = max(sigma_n, sigma_floor)
    sb = sigma_bar(s, t)
    return lam * sn * sn / (sb * sb)


def quadratic_subsequence(n_train: int, n_steps: int, t_start: int) -> StepPlan:
    """Sampling plan with quadratically spaced timesteps, denser near t=1.

    Spacing rule: t_i = 1 + round((i / (n_steps-1))^2 * (t_start-1)) for
    i = 0..n_steps-1. Rounding collisions at the dense end are resolved by
    pushing each duplicate up to the next free timestep, so the plan always
    holds exactly n_steps distinct entries (one denoiser evaluation each).
    n_steps == t_start requests every timestep; n_steps == 1 yields the
    single-step plan [t_start].
    """
    if not (1 <= n_steps <= t_start <= n_train):
        raise InvalidRange(
            f"need 1 <= n_steps <= t_start <= n_train, got ({n_steps}, {t_start}, {n_train})"
        )
    if n_steps == 1:
        return StepPlan(timesteps=(t_start,), t_start=t_start)
    if n_steps == t_start:
        ts = tuple(range(t_start, 0, -1))
        return StepPlan(timesteps=ts, t_start=t_start)
    frac = (np.arange(n_steps, dtype=np.float64) / (n_steps - 1)) ** 2
    # round half away from zero, so spacing is independent of bankers' rounding
    raw = 1 + np.floor(frac * (t_start - 1) + 0.5).astype(int)
    ordered: list[int] = []
    for value in raw:
        value = int(value)
        if ordered and value <= ordered[-1]:
            value = ordered[-1] + 1
        ordered.append(value)
    if ordered[-1] > t_start:
        raise InvalidRange(f"cannot place {n_steps} distinct timesteps below {t_start}")
    return StepPlan(timesteps=tuple(reversed(ordered)), t_start=t_start)
