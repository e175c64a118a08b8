"""Noise schedules and the forward/reverse diffusion kernels.

The forward kernel is the closed-form Gaussian corruption

    x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps,   abar_t = prod(1 - beta_s)

and the reverse step the standard noise-prediction mean

    x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_pred) / sqrt(1 - beta_t)
              + sigma_t * z.

All arithmetic is float64; operations are pure given explicit noise inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import DimensionError, ValidationError

NoisePredictor = Callable[[np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion coefficients for steps 1..T (index t-1 into the arrays).

    ``alphas_bar`` is strictly decreasing; ``abar(0)`` is 1 by convention.
    ``sigmas`` holds the reverse-noise scale per step, with sigma_1 = 0 so
    the terminal reverse step is deterministic.
    """

    T: int
    betas: np.ndarray
    alphas_bar: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        if self.T < 1 or len(self.betas) != self.T:
            raise ValidationError(f"schedule needs T>=1 betas, got T={self.T}")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ValidationError("betas must lie in (0, 1)")
        if np.any(np.diff(self.alphas_bar) >= 0) or self.alphas_bar[0] >= 1:
            raise ValidationError("alphas_bar must be strictly decreasing from below 1")
        if np.any(self.sigmas < 0):
            raise ValidationError("sigmas must be >= 0")

    def beta(self, t: int) -> float:
        self._check_step(t)
        return float(self.betas[t - 1])

    def abar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_step(t)
        return float(self.alphas_bar[t - 1])

    def sigma(self, t: int) -> float:
        self._check_step(t)
        return float(self.sigmas[t - 1])

    def deterministic(self) -> "NoiseSchedule":
        """Copy with all reverse-noise scales zeroed."""
        return replace(self, sigmas=np.zeros_like(self.sigmas))

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValidationError(f"step {t} outside [1, {self.T}]")


def make_linear_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas; sigma_t = sqrt(beta_t) except sigma_1 = 0."""
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas_bar = np.cumprod(1.0 - betas)
    sigmas = np.sqrt(betas)
    sigmas[0] = 0.0
    return NoiseSchedule(T=T, betas=betas, alphas_bar=alphas_bar, sigmas=sigmas)


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward sample at step ``t`` (t=0 returns x0 exactly)."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    if t == 0:
        return x0.copy()
    ab = sched.abar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_step(
    x_t: np.ndarray, eps_pred: np.ndarray, t: int, sched: NoiseSchedule, z: np.ndarray
) -> np.ndarray:
    """One reverse update from step ``t`` to ``t-1``; z=0 gives the mean."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if not (x_t.shape == eps_pred.shape == z.shape):
        raise DimensionError(
            f"shape mismatch: x_t {x_t.shape}, eps_pred {eps_pred.shape}, z {z.shape}"
        )
    beta = sched.beta(t)
    ab = sched.abar(t)
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_pred) / np.sqrt(1.0 - beta)
    sigma = sched.sigma(t)
    if sigma == 0.0:
        return mean
    return mean + sigma * z


def full_reverse(
    x_T: np.ndarray, predictor: NoisePredictor, sched: NoiseSchedule, seed: int = 0
) -> np.ndarray:
    """Iterate :func:`reverse_step` from step T down to 1.

    One standard-normal field is drawn per step (even where sigma_t is zero)
    so that any two chains sharing a seed consume identical noise streams.
    """
    x = np.asarray(x_T, dtype=np.float64).copy()
    rng = np.random.default_rng(seed)
    for t in range(sched.T, 0, -1):
        eps = np.asarray(predictor(x, t), dtype=np.float64)
        if eps.shape != x.shape:
            raise DimensionError(
                f"predictor returned shape {eps.shape}, expected {x.shape}"
            )
        z = rng.standard_normal(x.shape)
        x = reverse_step(x, eps, t, sched, z)
    return x
