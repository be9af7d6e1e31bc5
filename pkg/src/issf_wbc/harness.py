"""Scenario runner, baseline comparisons, parameter sweeps, metric aggregation.

Output layout (all UTF-8, CSV with header row and '.' decimals):

    <out>/<scenario>/<mode>/<alpha>_<epsilon>/trace.csv
    <out>/<scenario>/<mode>/<alpha>_<epsilon>/torques.csv
    <out>/<scenario>/<mode>/<alpha>_<epsilon>/summary.json
    <out>/<scenario>/<mode>/<alpha>_<epsilon>/constraints.csv   (--trace-constraints)
    <out>/<scenario>/sweep.csv

A collision event is one maximal contiguous interval with h < 0 on a
self- or object-collision pair (cycle counting would depend on dt); the
remaining-collision ratio divides a run's event count by the without-filter
reference count of the identical scenario.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import scale_link_masses
from .safety import BarrierKind, FilterMode
from .scenario import Scenario, load_scenario, resolve_input
from .sim import RunTrace, run_closed_loop

DEFAULT_OUT = "out"
COLLISION_KINDS = (BarrierKind.SELF_COLLISION.value, BarrierKind.OBJECT_COLLISION.value)


def output_root(out: str | Path | None = None) -> Path:
    if out is not None:
        return Path(out)
    return Path(os.environ.get("ISSF_WBC_OUT", DEFAULT_OUT))


def _num_label(x: float) -> str:
    return f"{x:g}"


def collision_events(trace: RunTrace) -> int:
    """Count maximal h<0 intervals over all self/object collision pairs."""
    total = 0
    for j, key in enumerate(trace.barrier_keys):
        if not key.startswith(COLLISION_KINDS):
            continue
        neg = trace.h[:, j] < 0.0
        if neg.size == 0:
            continue
        total += int(np.sum(neg[1:] & ~neg[:-1]) + (1 if neg[0] else 0))
    return total


def _min_h_per_kind(trace: RunTrace) -> dict[str, float]:
    mins: dict[str, float] = {}
    for j, key in enumerate(trace.barrier_keys):
        kind = key.split("|", 1)[0]
        value = float(trace.h[:, j].min()) if trace.cycles else math.inf
        mins[kind] = min(mins.get(kind, math.inf), value)
    return mins


def summarize(trace: RunTrace, *, mode: str, alpha: float | None, epsilon: float | None,
              seed: int, runtime_s: float) -> dict:
    dev = trace.qdot_safe - trace.qdot_des
    dt = float(trace.t[1] - trace.t[0]) if trace.cycles > 1 else 1.0
    jitter = (
        float(np.max(np.abs(np.diff(trace.qdot_safe, axis=0))) / dt)
        if trace.cycles > 1 else 0.0
    )
    return {
        "mode": mode,
        "alpha": alpha,
        "epsilon": epsilon,
        "seed": seed,
        "cycles": trace.cycles,
        "min_h_per_kind": _min_h_per_kind(trace),
        "min_h": float(trace.h.min()) if trace.h.size else math.inf,
        "dbar": trace.final_dbar(),
        "collision_events": collision_events(trace),
        "runtime_per_cycle_us": trace.runtime_per_cycle_us,
        "runtime_s": runtime_s,
        "mean_qdot_dev": float(np.mean(np.abs(dev))) if trace.cycles else 0.0,
        "jitter": jitter,
        "max_dynamics_residual": float(trace.dynamics_residual.max()) if trace.cycles else 0.0,
        "relaxed_cycles": int(trace.relaxed.sum()),
        "clamped_cycles": int(trace.clamped.any(axis=1).sum()) if trace.cycles else 0,
    }


@dataclass(frozen=True)
class RunResult:
    trace: RunTrace
    summary: dict
    out_dir: Path | None


def run_scenario(
    scenario: Scenario | str | Path,
    mode: FilterMode | str,
    alpha: float | None = None,
    epsilon: float | None = None,
    seed: int | None = None,
    out: str | Path | None = None,
    trace_constraints: bool = False,
    write: bool = True,
) -> RunResult:
    """One closed-loop run; persists trace.csv and summary.json unless write=False."""
    if not isinstance(scenario, Scenario):
        scenario = load_scenario(resolve_input(scenario), seed=seed)
    elif seed is not None and seed != scenario.sim.seed:
        raise ValueError("pass seed via load_scenario for Scenario objects")
    mode = FilterMode(mode) if isinstance(mode, str) else mode

    filter_config = scenario.filter_config.with_collision_params(alpha, epsilon)
    scenario = replace(scenario, filter_config=filter_config)
    plant = scale_link_masses(scenario.robot, scenario.sim.mass_scale)

    start = time.perf_counter()
    trace = run_closed_loop(scenario.robot, plant, scenario, mode=mode,
                            trace_constraints=trace_constraints)
    runtime_s = time.perf_counter() - start

    eff_alpha = (alpha if alpha is not None
                 else filter_config.alpha[BarrierKind.SELF_COLLISION])
    eff_eps = (epsilon if epsilon is not None
               else filter_config.epsilon[BarrierKind.SELF_COLLISION])
    summary = summarize(trace, mode=mode.value, alpha=eff_alpha, epsilon=eff_eps,
                        seed=scenario.sim.seed, runtime_s=runtime_s)

    out_dir = None
    if write:
        out_dir = (output_root(out) / scenario.name / mode.value
                   / f"{_num_label(eff_alpha)}_{_num_label(eff_eps)}")
        out_dir.mkdir(parents=True, exist_ok=True)
        trace.to_csv(out_dir / "trace.csv")
        trace.to_torque_csv(out_dir / "torques.csv")
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        if trace_constraints:
            trace.dump_constraints_csv(out_dir / "constraints.csv")
    return RunResult(trace=trace, summary=summary, out_dir=out_dir)


@dataclass(frozen=True)
class SweepPoint:
    mode: str
    alpha: float
    epsilon: float
    remaining_collision_ratio: float
    min_h: float
    mean_qdot_dev: float
    jitter: float
    dbar: float
    collision_events: int
    failed: bool = False


@dataclass(frozen=True)
class SweepResult:
    scenario: str
    reference_events: int
    points: tuple[SweepPoint, ...]
    csv_path: Path | None = None

    def point(self, mode: str, alpha: float, epsilon: float) -> SweepPoint:
        for p in self.points:
            if p.mode == mode and p.alpha == alpha and p.epsilon == epsilon:
                return p
        raise KeyError((mode, alpha, epsilon))


def _grid(modes, alphas, epsilons, ref_alpha, ref_eps):
    points = []
    for mode in modes:
        mode = FilterMode(mode) if isinstance(mode, str) else mode
        if mode is FilterMode.WITHOUT_CBF:
            points.append((mode, ref_alpha, ref_eps))
        else:
            for alpha in alphas:
                for eps in epsilons:
                    points.append((mode, float(alpha), float(eps)))
    return points


def _sweep_worker(args):
    path, mode, alpha, eps, seed, out = args
    result = run_scenario(path, mode, alpha=alpha, epsilon=eps, seed=seed, out=out)
    return (mode.value, alpha, eps, result.summary)


def run_sweep(
    scenario_path: str | Path,
    alphas: list[float],
    epsilons: list[float],
    modes: list[FilterMode | str],
    jobs: int = 1,
    seed: int | None = None,
    out: str | Path | None = None,
) -> SweepResult:
    """Grid of runs; the without-filter reference run anchors the ratios."""
    if not alphas or not epsilons or not modes:
        raise ValueError("alphas, epsilons and modes must be non-empty")
    path = resolve_input(scenario_path)
    scenario = load_scenario(path, seed=seed)
    ref_alpha = scenario.filter_config.alpha[BarrierKind.SELF_COLLISION]
    ref_eps = scenario.filter_config.epsilon[BarrierKind.SELF_COLLISION]

    reference = run_scenario(path, FilterMode.WITHOUT_CBF, seed=seed, out=out)
    ref_events = reference.summary["collision_events"]

    grid = _grid(modes, alphas, epsilons, ref_alpha, ref_eps)
    grid = [(m, a, e) for (m, a, e) in grid if m is not FilterMode.WITHOUT_CBF]
    tasks = [(path, m, a, e, seed, out) for (m, a, e) in grid]

    outcomes: dict[tuple, dict | None] = {}
    if jobs > 1 and tasks:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_sweep_worker, args): args for args in tasks}
            for future, args in futures.items():
                key = (args[1].value, args[2], args[3])
                try:
                    mode_v, a, e, summary = future.result()
                    outcomes[(mode_v, a, e)] = summary
                except Exception:  # partial failure: record and continue
                    outcomes[key] = None
    else:
        for args in tasks:
            key = (args[1].value, args[2], args[3])
            try:
                mode_v, a, e, summary = _sweep_worker(args)
                outcomes[(mode_v, a, e)] = summary
            except Exception:  # partial failure: record and continue
                outcomes[key] = None

    def ratio(events: int) -> float:
        if ref_events == 0:
            return 0.0 if events == 0 else math.inf
        return events / ref_events

    points = [SweepPoint(
        mode=FilterMode.WITHOUT_CBF.value, alpha=ref_alpha, epsilon=ref_eps,
        remaining_collision_ratio=ratio(ref_events),
        min_h=reference.summary["min_h"],
        mean_qdot_dev=reference.summary["mean_qdot_dev"],
        jitter=reference.summary["jitter"],
        dbar=reference.summary["dbar"],
        collision_events=ref_events,
    )] if any(FilterMode(m) is FilterMode.WITHOUT_CBF for m in modes) else []

    for (mode, a, e) in grid:
        summary = outcomes.get((mode.value, a, e))
        if summary is None:
            points.append(SweepPoint(mode=mode.value, alpha=a, epsilon=e,
                                     remaining_collision_ratio=math.nan, min_h=math.nan,
                                     mean_qdot_dev=math.nan, jitter=math.nan,
                                     dbar=math.nan, collision_events=-1, failed=True))
            continue
        points.append(SweepPoint(
            mode=mode.value, alpha=a, epsilon=e,
            remaining_collision_ratio=ratio(summary["collision_events"]),
            min_h=summary["min_h"],
            mean_qdot_dev=summary["mean_qdot_dev"],
            jitter=summary["jitter"],
            dbar=summary["dbar"],
            collision_events=summary["collision_events"],
        ))

    root = output_root(out) / scenario.name
    root.mkdir(parents=True, exist_ok=True)
    csv_path = root / "sweep.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mode,alpha,epsilon,remaining_collision_ratio,min_h,"
                 "mean_qdot_dev,jitter,dbar,collision_events,failed\n")
        for p in points:
            fh.write(f"{p.mode},{p.alpha!r},{p.epsilon!r},"
                     f"{p.remaining_collision_ratio!r},{p.min_h!r},"
                     f"{p.mean_qdot_dev!r},{p.jitter!r},{p.dbar!r},"
                     f"{p.collision_events},{int(p.failed)}\n")
    return SweepResult(scenario=scenario.name, reference_events=ref_events,
                       points=tuple(points), csv_path=csv_path)
