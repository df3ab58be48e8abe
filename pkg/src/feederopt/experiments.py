"""Scenario sweeps over inverter sizing, penetration, placement and controller."""

from __future__ import annotations

import csv
import itertools
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import StudyConfig, Study
from .controllers import ControllerKind, OptimizationResult, solve_controller
from .distflow import write_schedule_csv, write_state_csv
from .feeder import PlacementKind
from .metrics import ScenarioMetrics, energy_savings, voltage_variation

log = logging.getLogger(__name__)

RESULT_FIELDS = ["s_max", "a", "placement", "controller", "delta_v", "loss_pu", "savings", "status", "iters", "wall_ms"]
COMPARISON_FIELDS = [
    "s_max", "a", "controller", "delta_v_front", "delta_v_rear", "delta_v_gap",
    "savings_front", "savings_rear", "savings_gap", "rear_dominates", "skipped",
]
CLEAN_STATUSES = ("solved", "infeasible")


class PairingError(ValueError):
    """Front and rear results do not line up one to one."""


@dataclass(frozen=True)
class ScenarioSpec:
    s_max: float
    a: float
    placement: PlacementKind
    controller: ControllerKind
    seed: int


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    metrics: ScenarioMetrics
    status: str
    iterations: int
    wall_ms: float
    primal_residual: float = math.nan
    dual_residual: float = math.nan

    @property
    def solved(self) -> bool:
        return self.status == "solved"

    def row(self) -> dict:
        s = self.spec
        return {
            "s_max": s.s_max,
            "a": s.a,
            "placement": s.placement.value,
            "controller": s.controller.value,
            "delta_v": self.metrics.delta_v,
            "loss_pu": self.metrics.loss,
            "savings": self.metrics.savings,
            "status": self.status,
            "iters": self.iterations,
            "wall_ms": round(self.wall_ms, 3),
        }


def _status(res: OptimizationResult) -> str:
    if res.feasible:
        return "solved"
    if res.status == "max_iter":
        return "max_iter"
    return "infeasible"


def _cell_name(s_max, a, placement, controller=None) -> str:
    name = f"smax{s_max:g}_a{a:g}_{PlacementKind(placement).value}"
    return f"{name}_{ControllerKind(controller).value}" if controller else name


def run_cell(
    config: StudyConfig,
    s_max: float,
    a: float,
    placement: str,
    controllers,
    detail_dir: str | None = None,
) -> list[ScenarioResult]:
    """Solve every controller for one (s_max, a, placement) cell.

    The no-control baseline is solved once and reused for the savings of
    every other controller in the cell.
    """
    study = Study(config)
    profiles = study.node_profiles(a, placement, s_max)
    opts = config.control_options
    solved: dict[ControllerKind, tuple[OptimizationResult, float]] = {}

    def solve(kind: ControllerKind):
        if kind not in solved:
            t0 = time.perf_counter()
            res = solve_controller(kind, study.topology, profiles, study.b_max, options=opts)
            solved[kind] = (res, (time.perf_counter() - t0) * 1e3)
        return solved[kind]

    baseline, _ = solve(ControllerKind.NO_CONTROL)
    base_ok = baseline.feasible and baseline.loss > 0
    out = []
    for kind in map(ControllerKind, controllers):
        res, wall = solve(kind)
        status = _status(res)
        savings = math.nan
        if kind is ControllerKind.NO_CONTROL and base_ok:
            savings = 0.0
        elif base_ok and res.feasible:
            savings = energy_savings(baseline.loss, res.loss)
        dv = voltage_variation(res.state) if res.feasible else math.nan
        rep = res.solver_report
        iters, prim, dual = (rep.iterations, rep.primal_residual, rep.dual_residual) if rep else (0, 0.0, 0.0)
        spec = ScenarioSpec(s_max, a, PlacementKind(placement), kind, config.seed)
        out.append(ScenarioResult(spec, ScenarioMetrics(dv, res.loss, savings), status, iters, wall, prim, dual))
        if detail_dir is not None:
            d = Path(detail_dir)
            d.mkdir(parents=True, exist_ok=True)
            name = _cell_name(s_max, a, placement, kind)
            write_state_csv(res.state, d / f"{name}_state.csv")
            write_schedule_csv(res.schedule, d / f"{name}_schedule.csv")
    if detail_dir is not None:
        with open(Path(detail_dir) / f"{_cell_name(s_max, a, placement)}_solver.csv", "w") as fh:
            fh.write("controller,status,iterations,primal_res,dual_res\n")
            for kind in map(ControllerKind, controllers):
                fh.write(solved[kind][0].report_line() + "\n")
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_sweep(
    config: StudyConfig,
    s_max_grid=None,
    a_grid=None,
    placements=None,
    controllers=None,
    *,
    workers: int | None = None,
    out_csv=None,
    detail_dir=None,
) -> list[ScenarioResult]:
    """Evaluate the Cartesian product of the grids on one shared feeder.

    Rows come back (and are streamed to ``out_csv``) in grid order
    s_max -> a -> placement -> controller, whatever the completion order.
    """
    s_max_grid = list(config.s_max_grid if s_max_grid is None else s_max_grid)
    a_grid = list(config.penetration_grid if a_grid is None else a_grid)
    placements = [PlacementKind(p).value for p in (config.placements if placements is None else placements)]
    controllers = [ControllerKind(c).value for c in (config.controllers if controllers is None else controllers)]
    if not (s_max_grid and a_grid and placements and controllers):
        raise ValueError("every sweep grid must be non-empty")
    workers = config.workers if workers is None else workers
    detail = str(detail_dir) if detail_dir is not None else None
    cells = [
        (config, s, a, p, controllers, detail)
        for s, a, p in itertools.product(s_max_grid, a_grid, placements)
    ]

    fh = writer = None
    if out_csv is not None:
        Path(out_csv).parent.mkdir(parents=True, exist_ok=True)
        fh = open(out_csv, "w", newline="")
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
    results: list[ScenarioResult] = []
    try:
        if workers > 1:
            pool = ProcessPoolExecutor(max_workers=workers)
            rows_iter = pool.map(_run_cell_args, cells)
        else:
            pool = None
            rows_iter = map(_run_cell_args, cells)
        for rows in rows_iter:
            for r in rows:
                log.info("%s a=%g s_max=%g %s: %s", r.spec.placement.value, r.spec.a, r.spec.s_max,
                         r.spec.controller.value, r.status)
                if writer is not None:
                    writer.writerow(r.row())
            if fh is not None:
                fh.flush()
            results.extend(rows)
        if pool is not None:
            pool.shutdown()
    finally:
        if fh is not None:
            fh.close()
    return results


@dataclass
class PlacementComparison:
    s_max: float
    a: float
    controller: ControllerKind
    delta_v_front: float
    delta_v_rear: float
    savings_front: float
    savings_rear: float
    rear_dominates: bool | None
    skipped: int = 0

    @property
    def delta_v_gap(self) -> float:
        return self.delta_v_front - self.delta_v_rear

    @property
    def savings_gap(self) -> float:
        return self.savings_rear - self.savings_front

    def row(self) -> dict:
        return {
            "s_max": self.s_max,
            "a": self.a,
            "controller": self.controller.value,
            "delta_v_front": self.delta_v_front,
            "delta_v_rear": self.delta_v_rear,
            "delta_v_gap": self.delta_v_gap,
            "savings_front": self.savings_front,
            "savings_rear": self.savings_rear,
            "savings_gap": self.savings_gap,
            "rear_dominates": "" if self.rear_dominates is None else self.rear_dominates,
            "skipped": self.skipped,
        }


def compare_placements(results, tol: float = 1e-9) -> list[PlacementComparison]:
    """Pair front/rear rows per (s_max, a, controller) and test rear dominance.

    Rear dominates when its voltage variation is no larger and its savings
    no smaller than front's (within ``tol``). Pairs with a non-solved row are
    not compared; they are counted in ``skipped``.
    """
    groups: dict[tuple, dict[PlacementKind, list[ScenarioResult]]] = defaultdict(lambda: defaultdict(list))
    order = []
    for r in results:
        key = (r.spec.s_max, r.spec.a, r.spec.controller)
        if key not in groups:
            order.append(key)
        groups[key][r.spec.placement].append(r)
    out = []
    for key in order:
        front = groups[key][PlacementKind.FRONT]
        rear = groups[key][PlacementKind.REAR]
        if len(front) != len(rear):
            raise PairingError(f"{len(front)} front vs {len(rear)} rear rows for s_max={key[0]}, a={key[1]}, {key[2].value}")
        for f, r in zip(front, rear):
            if not (f.solved and r.solved):
                out.append(PlacementComparison(*key, math.nan, math.nan, math.nan, math.nan, None, skipped=1))
                continue
            dom = (
                r.metrics.delta_v <= f.metrics.delta_v + tol
                and r.metrics.savings >= f.metrics.savings - tol
            )
            out.append(
                PlacementComparison(
                    *key, f.metrics.delta_v, r.metrics.delta_v, f.metrics.savings, r.metrics.savings, dom
                )
            )
    return out


def write_comparison_csv(rows: list[PlacementComparison], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARISON_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(r.row())


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
