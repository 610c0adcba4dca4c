"""Experiment configuration: defaults, presets, and JSON loading.

A config document is one JSON object; every key is optional and falls back to
the preset (which fills controller parameters and the per-step branch cost)
and then to the built-in defaults below. The default data model is a
four-component mixture with two well-separated coarse clusters that split
into nearby fine modes, picked so the measured discrepancy curve dips in the
middle of the schedule and rises again near the end.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .engine import ExecutionPlan, PlanVariant
from .errors import ParameterError
from .mixture import Condition, GaussianMixture
from .monitor import SwitchConfig
from .schedules import GuidanceParams, NoiseSchedule, build_schedule
from .trace import DeviceSpec, LinkSpec

PRESETS: dict[str, dict] = {
    # SDXL-scale cost model: 0.1649 s per branch step calibrated from the
    # 50-step serial reference of 16.49 s at batching factor 2
    "sdxl-like": {
        "branch_step_cost": 0.1649,
        "L": 12, "g_slope": 4e-4, "tau_cap": 15, "k": 5,
    },
    # SD3-scale: slower steps, later and stricter switch
    "sd3-like": {
        "branch_step_cost": 0.1936,
        "L": 15, "g_slope": 1e-4, "tau_cap": 40, "k": 5,
    },
}

# calibrated link residual: per-message setup cost only, no byte term; two
# latent messages per measured step add 0.005 s/step
DEFAULT_LINK = {
    "base_latency_s": 0.0025,
    "bandwidth_bytes_per_s": None,
    "latent_bytes": 4096,
    "activation_bytes": 16384,
}

DEFAULT_SCHEDULE = {"kind": "linear", "T": 50, "beta_start": 0.01, "beta_end": 0.12}
DEFAULT_GUIDANCE_W = 2.0
DEFAULT_CONDITION_BATCH = 64
DEFAULT_SEEDS = tuple(range(32))

_KNOWN_KEYS = frozenset({
    "preset", "variant", "seeds", "guidance_w", "schedule", "mixture",
    "conditions", "condition_batch", "switch", "devices", "link",
    "segment_fractions", "cfg_batching_factor", "out_dir",
})

_VARIANTS = {v.value: v for v in PlanVariant}


def default_mixture() -> GaussianMixture:
    """Two-scale testbed: coarse +/-3 split on axis 0, fine +/-0.2 on axis 1."""
    d, k = 8, 4
    means = np.zeros((k, d))
    for i in range(k):
        means[i, 0] = 3.0 if i < 2 else -3.0
        means[i, 1] = 0.2 if i % 2 == 0 else -0.2
    return GaussianMixture(weights=np.full(k, 0.25),
                           means=means,
                           variances=np.full((k, d), 0.15))


def default_conditions(n_components: int, batch: int) -> tuple[Condition, ...]:
    """Singleton conditions cycled over the batch, one component each."""
    return tuple(Condition((i % n_components,)) for i in range(batch))


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ParameterError(msg)


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved experiment; see from_dict for the JSON schema."""

    variant: PlanVariant
    preset: str
    schedule: NoiseSchedule
    mixture: GaussianMixture
    conditions: tuple[Condition, ...]
    guidance: GuidanceParams
    switch: SwitchConfig
    devices: tuple[DeviceSpec, ...]
    link: LinkSpec
    segment_fractions: tuple[float, ...] | None
    cfg_batching_factor: float
    seeds: tuple[int, ...]
    out_dir: str | None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        _require(isinstance(raw, dict), "config document must be a JSON object")
        unknown = set(raw) - _KNOWN_KEYS
        _require(not unknown, f"unknown config keys: {sorted(unknown)}")

        preset = raw.get("preset", "sdxl-like")
        _require(preset in PRESETS, f"preset must be one of {sorted(PRESETS)}, got {preset!r}")
        pre = PRESETS[preset]

        variant_name = raw.get("variant", "hybrid")
        _require(variant_name in _VARIANTS,
                 f"variant must be one of {sorted(_VARIANTS)}, got {variant_name!r}")
        variant = _VARIANTS[variant_name]

        sched_raw = {**DEFAULT_SCHEDULE, **raw.get("schedule", {})}
        schedule = build_schedule(sched_raw["kind"], sched_raw["T"],
                                  sched_raw["beta_start"], sched_raw["beta_end"])

        if "mixture" in raw:
            m = raw["mixture"]
            _require(isinstance(m, dict) and {"weights", "means", "variances"} <= set(m),
                     "mixture needs keys weights, means, variances")
            mixture = GaussianMixture(weights=np.asarray(m["weights"], dtype=float),
                                      means=np.asarray(m["means"], dtype=float),
                                      variances=np.asarray(m["variances"], dtype=float))
        else:
            mixture = default_mixture()

        batch = raw.get("condition_batch", DEFAULT_CONDITION_BATCH)
        _require(isinstance(batch, int) and batch >= 1,
                 f"condition_batch must be an integer >= 1, got {batch!r}")
        if "conditions" in raw:
            base = tuple(Condition(tuple(c)) for c in raw["conditions"])
            _require(len(base) > 0, "conditions must be nonempty")
            conditions = tuple(base[i % len(base)] for i in range(batch))
        else:
            conditions = default_conditions(mixture.n_components, batch)

        guidance = GuidanceParams(float(raw.get("guidance_w", DEFAULT_GUIDANCE_W)))

        sw_raw = raw.get("switch", {})
        switch = SwitchConfig(L=sw_raw.get("L", pre["L"]),
                              g_slope=sw_raw.get("g_slope", pre["g_slope"]),
                              tau_cap=sw_raw.get("tau_cap", pre["tau_cap"]),
                              k=sw_raw.get("k", pre["k"]))

        dev_raw = raw.get("devices", _default_device_count(variant))
        if isinstance(dev_raw, int):
            costs = [pre["branch_step_cost"]] * dev_raw
        else:
            _require(isinstance(dev_raw, list) and len(dev_raw) > 0,
                     "devices must be an integer count or a list of step costs")
            costs = [float(c) for c in dev_raw]
        devices = tuple(DeviceSpec(name=f"dev{i}", branch_step_cost=c)
                        for i, c in enumerate(costs))

        link_raw = {**DEFAULT_LINK, **raw.get("link", {})}
        bw = link_raw["bandwidth_bytes_per_s"]
        link = LinkSpec(bandwidth_bytes_per_s=float("inf") if bw is None else float(bw),
                        base_latency_s=float(link_raw["base_latency_s"]),
                        message_bytes_latent=int(link_raw["latent_bytes"]),
                        message_bytes_activation=int(link_raw["activation_bytes"]))

        fractions = raw.get("segment_fractions")
        if fractions is not None:
            fractions = tuple(float(f) for f in fractions)

        seeds = tuple(raw.get("seeds", DEFAULT_SEEDS))
        _require(len(seeds) > 0, "seeds must be nonempty")
        _require(all(isinstance(s, int) and s >= 0 for s in seeds),
                 "seeds must be integers >= 0")

        factor = float(raw.get("cfg_batching_factor", 2.0))

        out_dir = raw.get("out_dir")
        _require(out_dir is None or isinstance(out_dir, str),
                 "out_dir must be a string path")

        return cls(variant=variant, preset=preset, schedule=schedule,
                   mixture=mixture, conditions=conditions, guidance=guidance,
                   switch=switch, devices=devices, link=link,
                   segment_fractions=fractions, cfg_batching_factor=factor,
                   seeds=seeds, out_dir=out_dir)

    def to_plan(self, seed: int | None = None,
                variant: PlanVariant | None = None,
                k: int | None = None) -> ExecutionPlan:
        """Build the executable plan, optionally overriding seed/variant/k."""
        variant = variant or self.variant
        staged = variant in (PlanVariant.HYBRID, PlanVariant.LAYER_WISE,
                             PlanVariant.BATCH_LEVEL)
        switch = self.switch if k is None else SwitchConfig(
            L=self.switch.L, g_slope=self.switch.g_slope,
            tau_cap=self.switch.tau_cap, k=k)
        devices = self.devices
        if len(devices) < 2 and variant is not PlanVariant.SERIAL:
            # pad with clones of device 0 so variant overrides stay convenient
            devices = devices + tuple(
                DeviceSpec(name=f"dev{i}", branch_step_cost=devices[0].branch_step_cost)
                for i in range(len(devices), 2))
        if variant is PlanVariant.SERIAL:
            devices = devices[:1]
        elif variant in (PlanVariant.FULL_CONDITION_PARTITION, PlanVariant.HYBRID):
            devices = devices[:2]
        fractions = self.segment_fractions
        if variant not in (PlanVariant.HYBRID, PlanVariant.LAYER_WISE):
            fractions = None
        return ExecutionPlan(
            variant=variant, schedule=self.schedule, mixture=self.mixture,
            conditions=self.conditions, guidance=self.guidance,
            devices=devices, link=self.link,
            seed=self.seeds[0] if seed is None else seed,
            switch=switch if staged else None,
            segment_fractions=fractions,
            cfg_batching_factor=self.cfg_batching_factor)


def _default_device_count(variant: PlanVariant) -> int:
    return 1 if variant is PlanVariant.SERIAL else 2


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return ExperimentConfig.from_dict(raw)
