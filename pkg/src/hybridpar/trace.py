"""Virtual-clock event records produced by simulated runs.

The engine is a deterministic single-logical-thread simulation: device busy
intervals and message events are appended in execution order against a
virtual clock, never from real threads. Message arrival follows the affine
link model arrive = depart + base_latency + bytes / bandwidth; links are
contention-free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ParameterError


@dataclass(frozen=True)
class DeviceSpec:
    """One accelerator in a plan."""

    name: str
    branch_step_cost: float  # seconds for one full branch evaluation

    def __post_init__(self):
        if not (math.isfinite(self.branch_step_cost) and self.branch_step_cost > 0):
            raise ParameterError(f"branch_step_cost must be finite and > 0, "
                                 f"got {self.branch_step_cost}")


@dataclass(frozen=True)
class LinkSpec:
    """Affine point-to-point link; no contention modeling.

    base_latency_s may be zero so that ideal-interconnect arithmetic is exact;
    bandwidth may be math.inf for the same reason.
    """

    bandwidth_bytes_per_s: float
    base_latency_s: float
    message_bytes_latent: int
    message_bytes_activation: int

    def __post_init__(self):
        if not self.bandwidth_bytes_per_s > 0:
            raise ParameterError(f"bandwidth must be > 0, got {self.bandwidth_bytes_per_s}")
        if not (math.isfinite(self.base_latency_s) and self.base_latency_s >= 0):
            raise ParameterError(f"base_latency_s must be finite and >= 0, "
                                 f"got {self.base_latency_s}")
        for name in ("message_bytes_latent", "message_bytes_activation"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ParameterError(f"{name} must be an integer >= 1, got {v!r}")

    def transfer_time(self, nbytes: int) -> float:
        return self.base_latency_s + nbytes / self.bandwidth_bytes_per_s


@dataclass(frozen=True)
class BusyInterval:
    device: str
    start: float
    end: float
    step: int        # 1-based denoising step
    stage: str       # stage label, or "" for unstaged plans
    label: str       # what was computed


@dataclass(frozen=True)
class MessageEvent:
    src: str
    dst: str
    kind: str        # "latent" or "activation"
    nbytes: int
    depart: float
    arrive: float
    step: int


@dataclass
class RunTrace:
    """Everything that happened on the virtual clock during one run."""

    busy: list[BusyInterval] = field(default_factory=list)
    messages: list[MessageEvent] = field(default_factory=list)

    def makespan(self) -> float:
        ends = [b.end for b in self.busy] + [m.arrive for m in self.messages]
        return max(ends) if ends else 0.0

    def merge(self, other: "RunTrace") -> None:
        self.busy.extend(other.busy)
        self.messages.extend(other.messages)


class Timeline:
    """Append-only trace builder with per-device ready clocks."""

    def __init__(self, link: LinkSpec):
        self.link = link
        self.trace = RunTrace()
        self._free: dict[str, float] = {}

    def free_at(self, device: str) -> float:
        return self._free.get(device, 0.0)

    def busy(self, device: str, start: float, duration: float, step: int,
             stage: str, label: str) -> float:
        start = max(start, self.free_at(device))
        end = start + duration
        self.trace.busy.append(BusyInterval(device, start, end, step, stage, label))
        self._free[device] = end
        return end

    def send(self, src: str, dst: str, kind: str, depart: float, step: int) -> float:
        nbytes = (self.link.message_bytes_latent if kind == "latent"
                  else self.link.message_bytes_activation)
        arrive = depart + self.link.transfer_time(nbytes)
        self.trace.messages.append(MessageEvent(src, dst, kind, nbytes, depart, arrive, step))
        return arrive


def account_comm(trace: RunTrace) -> int:
    """Total bytes moved, each message counted once."""
    return sum(m.nbytes for m in trace.messages)
