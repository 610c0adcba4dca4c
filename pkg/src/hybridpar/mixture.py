"""Analytic Gaussian-mixture model used as an exact stand-in for a denoiser.

All densities are diagonal-covariance mixtures, so scores, noised marginals,
posterior means, and branch noise predictions have closed forms. Shapes follow
the convention that the trailing axis is the data dimension d; batched inputs
are (B, d).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError, ShapeError
from .schedules import NoiseSchedule


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of K diagonal Gaussians in R^d.

    Attributes:
        weights: (K,) strictly positive, normalized to sum to 1 on construction.
        means: (K, d).
        variances: (K, d) strictly positive diagonal entries.
    """

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if w.ndim != 1 or m.ndim != 2 or v.ndim != 2:
            raise ShapeError("weights must be (K,), means and variances (K, d)")
        if m.shape != v.shape or m.shape[0] != w.shape[0]:
            raise ShapeError(f"inconsistent component shapes: weights {w.shape}, "
                             f"means {m.shape}, variances {v.shape}")
        if w.shape[0] < 1:
            raise ParameterError("mixture needs at least one component")
        if not np.all(np.isfinite(w)) or not np.all(np.isfinite(m)) or not np.all(np.isfinite(v)):
            raise NumericError("mixture parameters must be finite")
        if np.any(w <= 0):
            raise ParameterError("mixture weights must be strictly positive")
        if np.any(v <= 0):
            raise ParameterError("mixture variances must be strictly positive")
        w = w / w.sum()
        for arr in (w, m, v):
            arr.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", m)
        object.__setattr__(self, "variances", v)

    @property
    def n_components(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])


@dataclass(frozen=True)
class Condition:
    """A conditioning signal: a non-empty subset of component indices (0-based)."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ParameterError("condition subset must be non-empty")
        if len(set(idx)) != len(idx):
            raise ParameterError(f"condition subset has repeated indices: {idx}")
        if any(i < 0 for i in idx):
            raise ParameterError(f"condition indices must be >= 0: {idx}")
        object.__setattr__(self, "indices", idx)


@dataclass(frozen=True)
class ScoreEval:
    """Score vector together with the log-density at the same point."""

    score: np.ndarray
    log_density: np.ndarray


def conditional(gm: GaussianMixture, cond: Condition) -> GaussianMixture:
    """Restrict the mixture to a component subset and renormalize weights."""
    if max(cond.indices) >= gm.n_components:
        raise ParameterError(f"condition indices {cond.indices} exceed "
                             f"K={gm.n_components} components")
    idx = np.asarray(cond.indices, dtype=int)
    return GaussianMixture(weights=gm.weights[idx].copy(),
                           means=gm.means[idx].copy(),
                           variances=gm.variances[idx].copy())


def noised_mixture(gm: GaussianMixture, alpha_bar: float) -> GaussianMixture:
    """Marginal of x_t = sqrt(ab) x_0 + sqrt(1 - ab) eps when x_0 ~ gm.

    Component i maps to N(sqrt(ab) mu_i, ab var_i + (1 - ab)).
    """
    if not (0.0 < alpha_bar <= 1.0):
        raise ParameterError(f"alpha_bar must lie in (0, 1], got {alpha_bar}")
    return GaussianMixture(weights=gm.weights.copy(),
                           means=np.sqrt(alpha_bar) * gm.means,
                           variances=alpha_bar * gm.variances + (1.0 - alpha_bar))


def _prep_x(gm: GaussianMixture, x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("evaluation points must be finite")
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != gm.dim:
        raise ShapeError(f"x must be (d,) or (B, d) with d={gm.dim}, got {x.shape}")
    return x, squeezed


def _log_resp(gm: GaussianMixture, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-component log joint and the log marginal density, batched."""
    diff = x[:, None, :] - gm.means[None, :, :]                    # (B, K, d)
    v = gm.variances[None, :, :]
    log_joint = (np.log(gm.weights)[None, :]
                 - 0.5 * np.sum(diff * diff / v + np.log(2.0 * np.pi * v), axis=2))
    mx = log_joint.max(axis=1, keepdims=True)
    log_density = mx[:, 0] + np.log(np.exp(log_joint - mx).sum(axis=1))
    return log_joint, log_density


def score(gm: GaussianMixture, x: np.ndarray) -> ScoreEval:
    """Exact gradient of the mixture log-density, with the log-density itself.

    Responsibilities are computed with max-subtracted softmax, so points far
    from every component stay numerically stable.
    """
    xb, squeezed = _prep_x(gm, x)
    log_joint, log_density = _log_resp(gm, xb)
    r = np.exp(log_joint - log_density[:, None])                   # (B, K)
    pull = (gm.means[None, :, :] - xb[:, None, :]) / gm.variances[None, :, :]
    s = np.einsum("bk,bkd->bd", r, pull)
    if squeezed:
        return ScoreEval(score=s[0], log_density=log_density[0])
    return ScoreEval(score=s, log_density=log_density)


def eps_prediction(gm: GaussianMixture, cond: Condition | None, sched: NoiseSchedule,
                   x: np.ndarray, t: int) -> np.ndarray:
    """Oracle branch output at timestep t: eps = -sigma_t * score of the
    noised (conditional) mixture evaluated at x."""
    base = gm if cond is None else conditional(gm, cond)
    noised = noised_mixture(base, sched.alpha_bar(t))
    return -sched.sigma(t) * score(noised, x).score


def conditional_grad(gm: GaussianMixture, cond: Condition, sched: NoiseSchedule,
                     x: np.ndarray, t: int) -> np.ndarray:
    """Gradient of the log conditioning likelihood, s_c - s_u, at timestep t."""
    ab = sched.alpha_bar(t)
    s_c = score(noised_mixture(conditional(gm, cond), ab), x).score
    s_u = score(noised_mixture(gm, ab), x).score
    return s_c - s_u


def fm_velocity(gm: GaussianMixture, cond: Condition | None, x: np.ndarray,
                t_cont: float) -> np.ndarray:
    """Optimal straight-path velocity under x_t = x_0 + t * e.

    v(x, t) = (x - E[x_0 | x_t = x]) / t, where the posterior mean mixes the
    per-component shrinkage estimates (t^2 mu_i + var_i x) / (var_i + t^2)
    with responsibilities taken under N(mu_i, var_i + t^2).
    """
    if not (0.0 < t_cont <= 1.0):
        raise ParameterError(f"continuous time must lie in (0, 1], got {t_cont}")
    base = gm if cond is None else conditional(gm, cond)
    marginal = GaussianMixture(weights=base.weights.copy(),
                               means=base.means.copy(),
                               variances=base.variances + t_cont ** 2)
    xb, squeezed = _prep_x(marginal, x)
    log_joint, log_density = _log_resp(marginal, xb)
    r = np.exp(log_joint - log_density[:, None])                   # (B, K)
    v0 = base.variances[None, :, :]
    post_mean = (t_cont ** 2 * base.means[None, :, :] + v0 * xb[:, None, :]) / (v0 + t_cont ** 2)
    e_x0 = np.einsum("bk,bkd->bd", r, post_mean)
    v = (xb - e_x0) / t_cont
    return v[0] if squeezed else v


def sample_x0(gm: GaussianMixture, cond: Condition | None,
              rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw n exact samples, conditioning by subset restriction when given."""
    if n < 0:
        raise ParameterError(f"sample count must be >= 0, got {n}")
    base = gm if cond is None else conditional(gm, cond)
    comp = rng.choice(base.n_components, size=n, p=base.weights)
    noise = rng.standard_normal((n, base.dim))
    return base.means[comp] + np.sqrt(base.variances[comp]) * noise
