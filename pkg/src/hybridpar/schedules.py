"""Variance-preserving noise schedules and single-step denoising updates.

Discrete timesteps are indexed t = 1..T with t = 0 reserved for the clean
sample. Arrays inside NoiseSchedule are stored for t = 1..T; accessors accept
t = 0 and return the clean-sample convention (alpha_bar = 1, sigma = 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ParameterError, ShapeError, StepUnderflowError

SCHEDULE_KINDS = ("linear", "scaled-linear")


@dataclass(frozen=True)
class NoiseSchedule:
    """Precomputed beta/alpha tables for a discrete VP schedule."""

    kind: str
    T: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)
    sigmas: np.ndarray = field(repr=False)

    def alpha_bar(self, t: int) -> float:
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def sigma(self, t: int) -> float:
        if t == 0:
            return 0.0
        self._check_t(t)
        return float(self.sigmas[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ParameterError(f"timestep t={t} outside [1, {self.T}]")

    def to_config(self) -> dict:
        """Round-trippable description (arrays are rebuilt, not stored)."""
        return {
            "kind": self.kind,
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }


@dataclass(frozen=True)
class GuidanceParams:
    """Classifier-free guidance strength; w = 0 disables the push term."""

    w: float

    def __post_init__(self):
        if not np.isfinite(self.w) or self.w < 0:
            raise ParameterError(f"guidance w must be finite and >= 0, got {self.w}")


@dataclass(frozen=True)
class LatentState:
    """A latent array paired with the timestep it lives at."""

    x: np.ndarray
    t: int

    def __post_init__(self):
        if self.t < 0:
            raise ParameterError(f"latent timestep must be >= 0, got {self.t}")


def build_schedule(kind: str, T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Construct a discrete VP schedule.

    Args:
        kind: "linear" (betas linearly spaced) or "scaled-linear"
            (sqrt-betas linearly spaced, then squared).
        T: number of denoising steps, >= 1.
        beta_start, beta_end: per-step variance bounds, each in (0, 1),
            with beta_start <= beta_end.
    """
    if kind not in SCHEDULE_KINDS:
        raise ParameterError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    if not isinstance(T, int) or T < 1:
        raise ParameterError(f"T must be an integer >= 1, got {T!r}")
    for name, b in (("beta_start", beta_start), ("beta_end", beta_end)):
        if not (0.0 < b < 1.0):
            raise ParameterError(f"{name} must lie in (0, 1), got {b}")
    if beta_start > beta_end:
        raise ParameterError(f"beta_start={beta_start} exceeds beta_end={beta_end}")

    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    else:
        betas = np.linspace(np.sqrt(beta_start), np.sqrt(beta_end), T) ** 2
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sigmas = np.sqrt(1.0 - alpha_bars)
    for arr in (betas, alphas, alpha_bars, sigmas):
        arr.flags.writeable = False
    return NoiseSchedule(kind, T, float(beta_start), float(beta_end),
                         betas, alphas, alpha_bars, sigmas)


def _check_pair(eps_c: np.ndarray, eps_u: np.ndarray) -> None:
    if eps_c.shape != eps_u.shape:
        raise ShapeError(f"branch outputs disagree: {eps_c.shape} vs {eps_u.shape}")
    if not (np.all(np.isfinite(eps_c)) and np.all(np.isfinite(eps_u))):
        raise NumericError("non-finite values in branch outputs")


def cfg_combine(eps_c: np.ndarray, eps_u: np.ndarray, g: GuidanceParams) -> np.ndarray:
    """Guided noise estimate: eps_c + w * (eps_c - eps_u)."""
    eps_c = np.asarray(eps_c, dtype=float)
    eps_u = np.asarray(eps_u, dtype=float)
    _check_pair(eps_c, eps_u)
    return eps_c + g.w * (eps_c - eps_u)


def ddpm_posterior_mean(x_t: np.ndarray, t: int, eps_cfg: np.ndarray,
                        sched: NoiseSchedule) -> np.ndarray:
    """Posterior mean of the ancestral update given a guided noise estimate.

    mu = (x_t - beta_t / sqrt(1 - alpha_bar_t) * eps) / sqrt(alpha_t)
    """
    if t == 0:
        raise StepUnderflowError("no update exists below t = 1")
    x_t = np.asarray(x_t, dtype=float)
    eps_cfg = np.asarray(eps_cfg, dtype=float)
    _check_pair(x_t, eps_cfg)
    beta = sched.beta(t)
    coeff = beta / np.sqrt(1.0 - sched.alpha_bar(t))
    return (x_t - coeff * eps_cfg) / np.sqrt(sched.alpha(t))


def ddim_step(state: LatentState, eps: np.ndarray, sched: NoiseSchedule) -> LatentState:
    """Deterministic (eta = 0) update from t to t - 1.

    Reconstructs x0_hat = (x_t - sigma_t * eps) / sqrt(alpha_bar_t) then
    re-noises it to the t - 1 marginal. At t = 1 this returns x0_hat itself
    because alpha_bar_0 = 1 and sigma_0 = 0.
    """
    if state.t == 0:
        raise StepUnderflowError("cannot step below t = 1")
    x_t = np.asarray(state.x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    _check_pair(x_t, eps)
    ab_t = sched.alpha_bar(state.t)
    x0_hat = (x_t - sched.sigma(state.t) * eps) / np.sqrt(ab_t)
    ab_prev = sched.alpha_bar(state.t - 1)
    x_prev = np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps
    return LatentState(x=x_prev, t=state.t - 1)


def fm_euler_step(x: np.ndarray, t_cont: float, v: np.ndarray, dt: float) -> np.ndarray:
    """One explicit Euler step of dx/dt = v integrated from t toward 0."""
    if not (0.0 < t_cont <= 1.0):
        raise ParameterError(f"continuous time must lie in (0, 1], got {t_cont}")
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    if t_cont - dt < -1e-12:
        raise StepUnderflowError(f"step dt={dt} would overshoot t = 0 from t = {t_cont}")
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_pair(x, v)
    return x - v * dt
