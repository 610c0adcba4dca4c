"""Branch-discrepancy monitoring and the adaptive stage-switch controller.

The measured series is keyed by the denoising timestep t, which descends
T, T-1, ..., 1 as sampling proceeds. The slope at t compares the current
value against the one recorded L iterations earlier, i.e. at key t + L.

Controller outputs (tau1, tau2) are denoising step counts, 1-based from the
start of sampling: step s processes timestep t = T - s + 1. Counting this way
keeps tau_cap a plain upper bound (tau1 <= tau_cap), makes tau2 = tau1 + k,
and gives the pipelined window exactly k steps regardless of where detection
fires.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateInputError, HistoryError, NumericError,
                     ParameterError, SequencingError, ShapeError)
from .mixture import Condition, GaussianMixture, conditional_grad, noised_mixture, score
from .schedules import NoiseSchedule


class Stage(enum.Enum):
    """Execution stage of a single denoising step."""

    WARM_UP = "warm_up"
    PARALLELISM = "parallelism"
    FULLY_CONNECTING = "fully_connecting"


@dataclass(frozen=True)
class SwitchConfig:
    """Switch-detection parameters.

    Attributes:
        L: slope window length in controller iterations, >= 1.
        g_slope: flatness threshold; detection fires when 0 <= G < g_slope.
        tau_cap: upper bound on tau1 in denoising steps; if no detection has
            fired by step tau_cap the switch is forced there.
        k: width of the pipelined window in steps. k = 0 collapses the window
            (every step runs exactly); the usual constraint 1 <= k < T - tau1
            is enforced where a plan is executed, not here.
    """

    L: int
    g_slope: float
    tau_cap: int
    k: int

    def __post_init__(self):
        if not isinstance(self.L, int) or self.L < 1:
            raise ParameterError(f"L must be an integer >= 1, got {self.L!r}")
        if not (math.isfinite(self.g_slope) and self.g_slope > 0):
            raise ParameterError(f"g_slope must be finite and > 0, got {self.g_slope}")
        if not isinstance(self.tau_cap, int) or self.tau_cap < 0:
            raise ParameterError(f"tau_cap must be an integer >= 0, got {self.tau_cap!r}")
        if not isinstance(self.k, int) or self.k < 0:
            raise ParameterError(f"k must be an integer >= 0, got {self.k!r}")


class DiscrepancySeries:
    """Ordered map timestep -> measured discrepancy, recorded descending.

    Gaps are allowed: steps executed inside the pipelined window do not
    evaluate both branches, so nothing is recorded for them.
    """

    def __init__(self):
        self._values: dict[int, float] = {}
        self._last_t: int | None = None

    def record(self, t: int, value: float) -> None:
        if t < 0:
            raise ParameterError(f"timestep must be >= 0, got {t}")
        if not math.isfinite(value):
            raise NumericError(f"discrepancy at t={t} is not finite")
        if self._last_t is not None and t >= self._last_t:
            raise SequencingError(f"t={t} recorded after t={self._last_t}; "
                                  "series must descend")
        self._values[t] = float(value)
        self._last_t = t

    def has(self, t: int) -> bool:
        return t in self._values

    def get(self, t: int) -> float:
        if t not in self._values:
            raise HistoryError(f"no value recorded at t={t}")
        return self._values[t]

    def items(self) -> list[tuple[int, float]]:
        """(t, value) pairs in recorded (descending-t) order."""
        return sorted(self._values.items(), key=lambda kv: -kv[0])

    def __len__(self) -> int:
        return len(self._values)


def rel_mae(eps_c: np.ndarray, eps_u: np.ndarray) -> float:
    """Relative mean absolute error between branch outputs.

    Computed as the ratio of batch-summed L1 norms, which equals the ratio of
    batch means; invariant to common rescaling of both inputs.
    """
    eps_c = np.asarray(eps_c, dtype=float)
    eps_u = np.asarray(eps_u, dtype=float)
    if eps_c.shape != eps_u.shape:
        raise ShapeError(f"branch outputs disagree: {eps_c.shape} vs {eps_u.shape}")
    if not (np.all(np.isfinite(eps_c)) and np.all(np.isfinite(eps_u))):
        raise NumericError("non-finite branch outputs")
    denom = np.abs(eps_u).sum()
    if denom == 0.0:
        raise DegenerateInputError("reference branch has zero L1 norm")
    return float(np.abs(eps_c - eps_u).sum() / denom)


def slope(series: DiscrepancySeries, t: int, L: int) -> float:
    """Windowed slope G at timestep t: (M_t - M_{t+L}) / L.

    The reference point is the measurement taken L controller iterations
    earlier, which in a descending traversal lives at key t + L. Negative
    while the curve decays, entering [0, g) once it flattens.
    """
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    if not series.has(t) or not series.has(t + L):
        raise HistoryError(f"slope at t={t} needs recorded values at t={t} and t={t + L}")
    return (series.get(t) - series.get(t + L)) / L


@dataclass
class StageState:
    """Mutable controller state; owned by exactly one execution engine."""

    tau1: int | None = None
    tau2: int | None = None
    stage: Stage = Stage.WARM_UP
    steps_done: int = 0
    last_t: int | None = field(default=None, repr=False)


def update_controller(state: StageState, series: DiscrepancySeries, t: int,
                      cfg: SwitchConfig) -> StageState:
    """Advance the controller by one denoising step (descending t).

    Sets tau1 the first time the flatness condition holds, or at step tau_cap
    if it never has; tau2 = tau1 + k. The step on which detection fires still
    runs as WARM_UP (its measurement was needed to decide), so the pipelined
    window occupies steps tau1+1 .. tau2 and stage labels are monotone:
    WARM_UP+ PARALLELISM^k FULLY_CONNECTING*.
    """
    if t < 0:
        raise ParameterError(f"timestep must be >= 0, got {t}")
    if state.last_t is not None and t != state.last_t - 1:
        raise SequencingError(f"controller called at t={t} after t={state.last_t}; "
                              "steps must descend by exactly 1")
    s = state.steps_done + 1

    if state.tau1 is None:
        fired = False
        if series.has(t) and series.has(t + cfg.L):
            g = slope(series, t, cfg.L)
            fired = 0.0 <= g < cfg.g_slope
        if fired:
            state.tau1 = min(s, cfg.tau_cap)
            state.tau2 = state.tau1 + cfg.k
        elif s >= cfg.tau_cap:
            # safety cap: force the switch even if the slope never flattened
            state.tau1 = cfg.tau_cap
            state.tau2 = state.tau1 + cfg.k
        label = Stage.WARM_UP
    elif s <= state.tau1:
        label = Stage.WARM_UP
    elif s <= state.tau2:
        label = Stage.PARALLELISM
    else:
        label = Stage.FULLY_CONNECTING

    _STAGE_ORDER = (Stage.WARM_UP, Stage.PARALLELISM, Stage.FULLY_CONNECTING)
    if _STAGE_ORDER.index(label) < _STAGE_ORDER.index(state.stage):
        raise SequencingError(f"stage regressed from {state.stage} to {label}")
    state.stage = label
    state.steps_done = s
    state.last_t = t
    return state


def replay_series(pairs: list[tuple[int, float]], cfg: SwitchConfig) -> tuple[StageState, list[Stage]]:
    """Run the controller over a fully recorded (t, M) sequence.

    Pairs must be in descending-t order, one per denoising step. Returns the
    final state and the per-step stage labels.
    """
    series = DiscrepancySeries()
    state = StageState()
    labels: list[Stage] = []
    for t, m in pairs:
        series.record(t, m)
        update_controller(state, series, t, cfg)
        labels.append(state.stage)
    return state, labels


def score_ratio_estimate(gm: GaussianMixture, cond: Condition, sched: NoiseSchedule,
                         x: np.ndarray, t: int) -> float:
    """Discrepancy predicted from scores alone.

    Ratio of batch-summed L1 norms of the conditioning gradient s_c - s_u and
    the unconditional score s_u, both at the noised marginal for timestep t.
    Identical to rel_mae of the two branch outputs because the sigma_t factor
    cancels.
    """
    grad = conditional_grad(gm, cond, sched, x, t)
    s_u = score(noised_mixture(gm, sched.alpha_bar(t)), x).score
    denom = np.abs(s_u).sum()
    if denom == 0.0:
        raise DegenerateInputError("unconditional score has zero L1 norm")
    return float(np.abs(grad).sum() / denom)


@dataclass(frozen=True)
class SlopeNoiseModel:
    """Bounded-noise model for per-step discrepancy measurements."""

    delta: float
    range_lo: float
    range_hi: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ParameterError(f"delta must be finite and > 0, got {self.delta}")
        if not (self.range_hi > self.range_lo):
            raise ParameterError(f"need range_hi > range_lo, got "
                                 f"[{self.range_lo}, {self.range_hi}]")


def hoeffding_false_alarm(L: int, model: SlopeNoiseModel) -> float:
    """Upper bound on P(|G - E[G]| > delta) for measurements bounded in
    [range_lo, range_hi]: 2 exp(-2 L delta^2 / (hi - lo)^2).

    Monotone decreasing in L; may exceed 1 (vacuous) for small L.
    """
    if L < 1:
        raise ParameterError(f"L must be >= 1, got {L}")
    width = model.range_hi - model.range_lo
    return 2.0 * math.exp(-2.0 * L * model.delta ** 2 / width ** 2)
