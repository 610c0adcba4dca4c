"""Command-line harness: simulate, curve, detect, sweep.

All commands exit 0 on success. Failures print one machine-readable JSON
object to stderr ({"error": <class>, "message": <text>, ...}) and exit 1.
Floats in CSV output carry 17 significant digits so files round-trip exactly.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .engine import (PlanVariant, RunResult, _branches, _condition_groups,
                     initial_latents, run_plan, run_serial)
from .errors import HybridparError, PlanError, SeriesParseError
from .metrics import compare_runs
from .mixture import conditional_grad, noised_mixture, score
from .monitor import DiscrepancySeries, rel_mae, replay_series
from .schedules import LatentState, cfg_combine, ddim_step

CURVE_HEADER = "t,rel_mae,score_ratio,band_lo,band_hi,is_argmin"
SWEEP_HEADER = "k,status,latency_s,speedup,fidelity_l1,psnr_analog"
TRACE_HEADER = "event,step,stage,device,src,dst,label,kind,start,end,nbytes"


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config)
    return ExperimentConfig.from_dict({})


def _json_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def cmd_simulate(args) -> int:
    cfg = _load(args)
    variant = PlanVariant(args.variant) if args.variant else None
    plan = cfg.to_plan(seed=args.seed, variant=variant)
    result = run_plan(plan)
    if plan.variant is PlanVariant.SERIAL:
        serial = result
    else:
        serial = run_serial(cfg.to_plan(seed=plan.seed, variant=PlanVariant.SERIAL))
    metrics = compare_runs(result, serial)

    out_dir = args.out or cfg.out_dir
    if out_dir is None:
        raise PlanError("simulate needs an output directory (--out or config out_dir)")
    os.makedirs(out_dir, exist_ok=True)
    payload = _json_dumps(metrics.to_dict())
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(payload)
    _write_trace(result, out_dir)
    sys.stdout.write(payload)
    return 0


def _write_trace(result: RunResult, out_dir: str) -> None:
    rows = [TRACE_HEADER]
    for b in result.trace.busy:
        rows.append(f"busy,{b.step},{b.stage},{b.device},,,{b.label},,"
                    f"{_fmt(b.start)},{_fmt(b.end)},")
    for m in result.trace.messages:
        rows.append(f"message,{m.step},,,{m.src},{m.dst},,{m.kind},"
                    f"{_fmt(m.depart)},{_fmt(m.arrive)},{m.nbytes}")
    with open(os.path.join(out_dir, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    structured = {
        "busy": [{"device": b.device, "start": b.start, "end": b.end,
                  "step": b.step, "stage": b.stage, "label": b.label}
                 for b in result.trace.busy],
        "messages": [{"src": m.src, "dst": m.dst, "kind": m.kind,
                      "nbytes": m.nbytes, "depart": m.depart,
                      "arrive": m.arrive, "step": m.step}
                     for m in result.trace.messages],
    }
    with open(os.path.join(out_dir, "trace.json"), "w", encoding="utf-8") as fh:
        fh.write(_json_dumps(structured))


def curve_rows(cfg: ExperimentConfig) -> list[tuple[int, float, float, float, float]]:
    """Serial-trajectory discrepancy curve: (t, rel_mae, score_ratio, band_lo,
    band_hi) per step, descending t.

    The band is mean +/- 2 sample standard deviations of the per-condition
    discrepancy ratios across the batch.
    """
    plan = cfg.to_plan(variant=PlanVariant.SERIAL)
    gm, sched = plan.mixture, plan.schedule
    groups = _condition_groups(plan.conditions)
    state = LatentState(initial_latents(plan), sched.T)
    rows = []
    for _ in range(sched.T):
        x, t = state.x, state.t
        eps_c, eps_u = _branches(plan, x, t)
        m = rel_mae(eps_c, eps_u)

        s_u = score(noised_mixture(gm, sched.alpha_bar(t)), x).score
        num = sum(float(np.abs(conditional_grad(gm, cond, sched, x[r], t)).sum())
                  for cond, r in groups)
        ratio = num / float(np.abs(s_u).sum())

        per_row = (np.abs(eps_c - eps_u).sum(axis=1)
                   / np.abs(eps_u).sum(axis=1))
        sd = float(per_row.std(ddof=1)) if per_row.size > 1 else 0.0
        rows.append((t, m, ratio, m - 2.0 * sd, m + 2.0 * sd))

        eps = cfg_combine(eps_c, eps_u, plan.guidance)
        state = ddim_step(state, eps, sched)
    return rows


def cmd_curve(args) -> int:
    cfg = _load(args)
    rows = curve_rows(cfg)
    arg_min = min(range(len(rows)), key=lambda i: rows[i][1])
    lines = [CURVE_HEADER]
    for i, (t, m, ratio, lo, hi) in enumerate(rows):
        lines.append(f"{t},{_fmt(m)},{_fmt(ratio)},{_fmt(lo)},{_fmt(hi)},"
                     f"{1 if i == arg_min else 0}")
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def read_series_csv(path: str) -> list[tuple[int, float]]:
    """Parse (t, discrepancy) pairs from a curve CSV or a bare two-column file.

    A header row is detected by non-numeric first field; the columns named
    t and rel_mae are used then, else columns 0 and 1.
    """
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    lines = [(i + 1, ln) for i, ln in enumerate(lines) if ln]
    if not lines:
        raise SeriesParseError("series file is empty")
    t_col, m_col = 0, 1
    first_fields = [f.strip() for f in lines[0][1].split(",")]
    try:
        float(first_fields[0])
        has_header = False
    except ValueError:
        has_header = True
    if has_header:
        try:
            t_col = first_fields.index("t")
            m_col = first_fields.index("rel_mae")
        except ValueError as exc:
            raise SeriesParseError(f"header must name columns t and rel_mae, "
                                   f"got {first_fields}", line=1) from exc
        lines = lines[1:]
    pairs = []
    for lineno, ln in lines:
        fields = [f.strip() for f in ln.split(",")]
        if len(fields) <= max(t_col, m_col):
            raise SeriesParseError(f"expected at least {max(t_col, m_col) + 1} "
                                   f"columns, got {len(fields)}", line=lineno)
        try:
            t = int(fields[t_col])
            m = float(fields[m_col])
        except ValueError as exc:
            raise SeriesParseError(f"bad numeric fields {fields[t_col]!r}, "
                                   f"{fields[m_col]!r}", line=lineno) from exc
        pairs.append((t, m))
    return pairs


def cmd_detect(args) -> int:
    cfg = _load(args)
    pairs = read_series_csv(args.series)
    state, labels = replay_series(pairs, cfg.switch)
    payload = {
        "tau1": state.tau1,
        "tau2": state.tau2,
        "stages": [lab.value for lab in labels],
    }
    sys.stdout.write(_json_dumps(payload))
    return 0


def _parse_k_list(text: str) -> list[int]:
    if not text.strip():
        return []
    try:
        return sorted({int(tok) for tok in text.replace(" ", "").split(",") if tok})
    except ValueError as exc:
        raise SeriesParseError(f"bad k list {text!r}; expected comma-separated "
                               "integers") from exc


def cmd_sweep(args) -> int:
    cfg = _load(args)
    k_values = _parse_k_list(args.k)
    serial_by_seed = {
        seed: run_serial(cfg.to_plan(seed=seed, variant=PlanVariant.SERIAL))
        for seed in cfg.seeds
    }
    lines = [SWEEP_HEADER]
    for k in k_values:
        try:
            plans = [cfg.to_plan(seed=seed, variant=PlanVariant.HYBRID, k=k)
                     for seed in cfg.seeds]
        except PlanError:
            lines.append(f"{k},infeasible,,,,")
            continue
        per_seed = [compare_runs(run_plan(p), serial_by_seed[p.seed]) for p in plans]
        lat = float(np.mean([m.latency_s for m in per_seed]))
        spd = float(np.mean([m.speedup for m in per_seed]))
        l1 = float(np.mean([m.fidelity_l1 for m in per_seed]))
        psnrs = [m.psnr_analog for m in per_seed if m.psnr_analog is not None]
        psnr = _fmt(float(np.mean(psnrs))) if psnrs else ""
        lines.append(f"{k},ok,{_fmt(lat)},{_fmt(spd)},{_fmt(l1)},{psnr}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridpar",
        description="Adaptive hybrid-parallel diffusion sampling on a "
                    "simulated device cluster.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one plan and write metrics + trace")
    p.add_argument("--config", help="experiment JSON; defaults apply if omitted")
    p.add_argument("--variant", choices=[v.value for v in PlanVariant],
                   help="override the config's plan variant")
    p.add_argument("--seed", type=int, help="override the first config seed")
    p.add_argument("--out", help="output directory (falls back to config out_dir)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("curve", help="emit the discrepancy curve CSV")
    p.add_argument("--config", help="experiment JSON; defaults apply if omitted")
    p.add_argument("--out", required=True, help="destination CSV path")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("detect", help="replay switch detection over a series CSV")
    p.add_argument("--series", required=True, help="CSV of (t, rel_mae) rows")
    p.add_argument("--config", help="experiment JSON supplying the switch config")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("sweep", help="sweep the pipelined-window width k")
    p.add_argument("--config", help="experiment JSON; defaults apply if omitted")
    p.add_argument("--k", required=True, help="comma-separated k values")
    p.add_argument("--out", help="destination CSV; stdout if omitted")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HybridparError as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SeriesParseError) and exc.line is not None:
            payload["line"] = exc.line
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return 1
    except (json.JSONDecodeError, OSError) as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
