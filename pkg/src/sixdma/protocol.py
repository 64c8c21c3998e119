"""Three-stage simulation harness.

Stage I   training: surfaces visit the training poses and record sample
          covariances of every user.
Stage II  design: multipath recovery per user, rotation optimisation and
          collision-free placement.
Stage III evaluation: Monte Carlo and surrogate rates at the designed
          array, computed from the true multipath.

All randomness comes from :func:`sixdma.seeding.stream` keyed by the
master seed, the stage and per-stage indices.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import seeding
from .benchmarks import fixed_sector_state, mc_ao_optimize, pso_optimize_paa, InstantaneousDraws, instantaneous_rates
from .channel import ArrayState, sci_matrix
from .config import ExperimentConfig
from .errors import ConfigError, InvalidInputError
from .geometry import SurfacePose, fibonacci_directions, rotation_with_normal, surface_normal
from .placement import place_all
from .rate import LinkBudget, RateReport, jensen_lower_surrogate, monte_carlo_rate
from .rotation_opt import RotationContext, optimize_rotations
from .scenario import generate_ground_truth, normalized_sci_error
from .sci_estimation import (
    CovarianceDictionary,
    DoaGrid,
    estimate_mpc,
    make_training_plan,
    simulate_substage_measurements,
)

REFERENCE_SURFACES = 48
SCHEME_INDEX = {"proposed": 0, "fa": 1, "paa": 2, "mcao": 3}


class StageError(RuntimeError):
    """A protocol stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class SchemeResult:
    scheme: str
    per_user: list
    sum_log_rate: float
    std_error: list
    surrogate_per_user: list | None = None
    surrogate_sum_log_rate: float | None = None
    wall_time: float = 0.0
    poses: list | None = None
    trace: list | None = None
    extra: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    split_rule: str
    perfect_sci: bool
    exact_covariance: bool
    stage_times: dict
    sci_error: float | None
    estimated_paths: list | None
    schemes: dict
    placement: dict | None

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None if np.isnan(x) else ("inf" if x > 0 else "-inf")
    return x


def _pose_dicts(poses) -> list:
    return [{"position": list(map(float, p.position)), "rotation": list(map(float, p.rotation.as_array()))} for p in poses]


def reference_state(hardware, radius: float, count: int = REFERENCE_SURFACES) -> ArrayState:
    """Surfaces facing ``count`` Fibonacci directions; used to score SCI estimates."""
    poses = [SurfacePose(radius * d, rotation_with_normal(d, hardware.template)) for d in fibonacci_directions(count)]
    return hardware.state(poses)


def _evaluate(state: ArrayState, truth, budget: LinkBudget, W: int, rng) -> tuple[RateReport, np.ndarray]:
    scis = [sci_matrix(state, ps) for ps in truth]
    return monte_carlo_rate(scis, budget, W, rng), jensen_lower_surrogate(scis, budget)


def _scheme_result(name, rep: RateReport, surrogate, wall, poses=None, trace=None, **extra) -> SchemeResult:
    sur = np.asarray(surrogate, dtype=float) if surrogate is not None else None
    return SchemeResult(
        scheme=name,
        per_user=rep.per_user.tolist(),
        sum_log_rate=rep.sum_log_rate,
        std_error=rep.std_error.tolist() if rep.std_error is not None else [],
        surrogate_per_user=None if sur is None else sur.tolist(),
        surrogate_sum_log_rate=None if sur is None else RateReport.from_rates(sur).sum_log_rate,
        wall_time=wall,
        poses=None if poses is None else _pose_dicts(poses),
        trace=trace,
        extra=extra,
    )


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (InvalidInputError, ConfigError, ValueError, RuntimeError, MemoryError) as exc:
        raise StageError(name, exc) from exc


def estimate_sci(cfg: ExperimentConfig, seed: int, exact_covariance: bool = False, truth=None):
    """Stages I and II-a: training measurements and multipath recovery.

    Returns ``(ground_truth, estimated_path_sets, sci_error, times)``.
    """
    dep = cfg.scenario.deployment()
    hw = cfg.array.hardware(dep.wavelength)
    if truth is None:
        truth = _stage("setup", generate_ground_truth, dep, seeding.stream(seed, seeding.STAGE_GROUND_TRUTH))
    radius = cfg.training.radius if cfg.training.radius is not None else cfg.optimizer.inscribed_radius
    t0 = time.perf_counter()
    plan = _stage("I", make_training_plan, cfg.training.M, cfg.array.n_surfaces, cfg.training.T, radius, hw.template,
                  cfg.training.grouping)
    covs = _stage(
        "I", simulate_substage_measurements, plan, truth.path_sets, hw,
        rng_for=lambda k, s: seeding.stream(seed, seeding.STAGE_TRAINING, k, s), exact=exact_covariance,
    )
    t1 = time.perf_counter()
    grid = DoaGrid.fibonacci(cfg.training.grid_size)
    dictionary = _stage("II", CovarianceDictionary.build, plan, grid, hw)
    estimates = tuple(
        _stage("II", estimate_mpc, c, plan, grid, hw, ps.n_paths, dictionary) for c, ps in zip(covs, truth.path_sets)
    )
    t2 = time.perf_counter()
    ref = reference_state(hw, radius)
    err = normalized_sci_error([sci_matrix(ref, p) for p in truth.path_sets], [sci_matrix(ref, p) for p in estimates])
    return truth, estimates, err, {"stage_I": t1 - t0, "stage_II_estimation": t2 - t1}


def run_protocol(cfg: ExperimentConfig, seed: int, perfect_sci: bool = False, exact_covariance: bool = False,
                 schemes=None) -> RunRecord:
    """One full protocol run for ``seed``; benchmarks follow ``cfg.benchmarks`` unless ``schemes`` is given."""
    if schemes is None:
        schemes = ["proposed"] + [s for s in ("fa", "paa", "mcao") if getattr(cfg.benchmarks, s)]
    unknown = set(schemes) - set(SCHEME_INDEX)
    if unknown:
        raise ConfigError(f"unknown scheme(s) {sorted(unknown)}")
    dep = _stage("setup", cfg.scenario.deployment)
    hw = cfg.array.hardware(dep.wavelength)
    budget = LinkBudget(dep.powers, dep.noise_power)
    truth = _stage("setup", generate_ground_truth, dep, seeding.stream(seed, seeding.STAGE_GROUND_TRUTH))
    times: dict = {}
    sci_error = None
    estimates = None
    if perfect_sci:
        design_paths = truth.path_sets
    else:
        _, estimates, sci_error, t = estimate_sci(cfg, seed, exact_covariance, truth)
        times.update(t)
        design_paths = estimates
    W = cfg.rate.samples
    results: dict = {}
    placement = None

    def eval_rng(name):
        return seeding.stream(seed, seeding.STAGE_EVALUATION, SCHEME_INDEX[name])

    if "proposed" in schemes:
        t0 = time.perf_counter()
        ctx = RotationContext(design_paths, hw, budget, cfg.array.n_surfaces)
        rot = _stage("II", optimize_rotations, ctx, cfg.optimizer)
        t1 = time.perf_counter()
        rots = rot.rotations
        normals = np.array([surface_normal(r, hw.template) for r in rots])
        rep = _stage("II", place_all, normals, hw.template.cer_diameter / 2.0, rots, hw.template,
                     region_edge=cfg.array.region_edge)
        t2 = time.perf_counter()
        poses = [SurfacePose(q, r) for q, r in zip(rep.positions, rep.rotations)]
        times["stage_II_rotation"] = t1 - t0
        times["stage_II_placement"] = t2 - t1
        mc, sur = _stage("III", _evaluate, hw.state(poses), truth.path_sets, budget, W, eval_rng("proposed"))
        times["stage_III"] = time.perf_counter() - t2
        results["proposed"] = _scheme_result("proposed", mc, sur, t2 - t0, poses, rot.trace)
        placement = placement_dict(rep)
    if "fa" in schemes:
        t0 = time.perf_counter()
        state = fixed_sector_state()
        mc, sur = _stage("III", _evaluate, state, truth.path_sets, budget, W, eval_rng("fa"))
        results["fa"] = _scheme_result("fa", mc, sur, time.perf_counter() - t0, state.poses)
    if "paa" in schemes:
        t0 = time.perf_counter()
        rng = seeding.stream(seed, seeding.STAGE_BENCHMARK, SCHEME_INDEX["paa"])
        draws = InstantaneousDraws.draw(truth.path_sets, rng, 1)
        res = _stage("benchmark", pso_optimize_paa, truth.path_sets, budget, cfg.benchmarks.pso, rng, draws=draws)
        fa_inst = instantaneous_rates(fixed_sector_state(), draws, budget)
        rep = RateReport.from_rates(res.rates)
        results["paa"] = _scheme_result("paa", rep, None, time.perf_counter() - t0, None, res.trace,
                                        fa_instantaneous_sum_log_rate=RateReport.from_rates(fa_inst).sum_log_rate,
                                        feasible=res.feasible)
    if "mcao" in schemes:
        t0 = time.perf_counter()
        rng = seeding.stream(seed, seeding.STAGE_BENCHMARK, SCHEME_INDEX["mcao"])
        res = _stage("benchmark", mc_ao_optimize, design_paths, hw, budget, cfg.array.n_surfaces, cfg.benchmarks.mc_ao, rng)
        wall = time.perf_counter() - t0
        mc, sur = _stage("III", _evaluate, hw.state(res.poses), truth.path_sets, budget, W, eval_rng("mcao"))
        results["mcao"] = _scheme_result("mcao", mc, sur, wall, res.poses, res.trace,
                                         design_objective=res.objective, feasible=res.feasible,
                                         init_objectives=res.init_objectives)
    return RunRecord(
        config_hash=cfg.hash(),
        seed=int(seed),
        split_rule=seeding.SPLIT_RULE,
        perfect_sci=perfect_sci,
        exact_covariance=exact_covariance,
        stage_times=times,
        sci_error=sci_error,
        estimated_paths=None if estimates is None else [
            {"doas": p.doas.tolist(), "powers": p.powers.tolist()} for p in estimates
        ],
        schemes={k: asdict(v) for k, v in results.items()},
        placement=placement,
    )


def placement_dict(rep) -> dict:
    rots = rep.rotations or []
    return {
        "positions": rep.positions.tolist(),
        "normals": rep.normals.tolist(),
        "rotations": [list(map(float, r.as_array())) for r in rots],
        "cer_radius": rep.cer_radius,
        "order": list(rep.order),
        "branches": list(rep.branches),
        "cer_pairs_ok": bool(rep.cer_pairs_ok),
        "polygon_pairs_ok": rep.polygon_pairs_ok,
        "growth_ok": bool(rep.growth_ok),
        "bounding_edge": rep.bounding_edge,
        "bound": rep.bound,
        "bound_ok": bool(rep.bound_ok),
    }


# --------------------------------------------------------------------------- sweeps

SWEEP_AXES = ("M", "power", "T")
CSV_HEADER = ("axis", "axis_value", "seed", "scheme", "metric", "value")


def _axis_config(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "M":
        return cfg.replace(**{"training.M": int(value)})
    if axis == "T":
        return cfg.replace(**{"training.T": int(value)})
    if axis == "power":
        return cfg.replace(**{"scenario.user_power": float(value)})
    raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")


def _rows_for(axis, value, seed, rec: RunRecord) -> list:
    rows = []
    if rec.sci_error is not None:
        rows.append((axis, value, seed, "estimation", "sci_error", rec.sci_error))
    for name, res in sorted(rec.schemes.items()):
        rows.append((axis, value, seed, name, "sum_log_rate", res["sum_log_rate"]))
        if res.get("surrogate_sum_log_rate") is not None:
            rows.append((axis, value, seed, name, "surrogate_sum_log_rate", res["surrogate_sum_log_rate"]))
        for k, r in enumerate(res["per_user"]):
            rows.append((axis, value, seed, name, f"rate_user{k}", r))
    return rows


def _run_cell(args):
    axis, value, seed, cfg, perfect_sci, exact_covariance, schemes = args
    try:
        rec = run_protocol(cfg, seed, perfect_sci, exact_covariance, schemes)
    except StageError as exc:
        return [(axis, value, seed, "all", "failed", 1.0)], {"axis_value": value, "seed": seed, "error": str(exc)}
    return _rows_for(axis, value, seed, rec), None


def sweep(cfg: ExperimentConfig, axis: str, perfect_sci: bool = False, exact_covariance: bool = False,
          schemes=None, values=None, workers: int = 1) -> tuple[list, list]:
    """Run every (axis value, seed) cell; returns ``(rows, failures)``.

    A failing cell is recorded with a ``failed`` metric and the sweep moves
    on.  Cells are independent, so ``workers > 1`` runs them in a process
    pool; rows keep the serial order either way.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    values = tuple(getattr(cfg.sweep, axis)) if values is None else tuple(values)
    if not values:
        raise ConfigError(f"sweep.{axis} lists no values")
    cells = []
    for value in values:
        cell_cfg = _axis_config(cfg, axis, value)
        cells.extend((axis, value, seed, cell_cfg, perfect_sci, exact_covariance, schemes) for seed in cell_cfg.seeds)
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            outcomes = list(pool.map(_run_cell, cells))
    else:
        outcomes = [_run_cell(c) for c in cells]
    rows, failures = [], []
    for cell_rows, failure in outcomes:
        rows.extend(cell_rows)
        if failure is not None:
            failures.append(failure)
    return rows, failures


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for axis, value, seed, scheme, metric, v in rows:
        w.writerow((axis, repr(value) if isinstance(value, float) else value, seed, scheme, metric, repr(float(v))))
    return buf.getvalue()


# --------------------------------------------------------------------------- placement reports

REPORT_KEYS = ("positions", "normals", "rotations", "cer_pairs_ok", "polygon_pairs_ok", "bounding_edge", "bound")


def emit_placement_report(record, path: str | Path) -> Path:
    """Write the placement section of a run record as JSON."""
    data = record.to_dict() if isinstance(record, RunRecord) else record
    placement = (data or {}).get("placement")
    if not placement:
        raise InvalidInputError("record carries no placement to report")
    missing = [k for k in REPORT_KEYS if k not in placement]
    if missing:
        raise InvalidInputError(f"placement record lacks {missing}")
    report = {"config_hash": data.get("config_hash"), "seed": data.get("seed"), **placement}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(report), indent=2, sort_keys=True))
    return path


def read_placement_report(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
