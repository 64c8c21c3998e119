"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime or invariant failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, dump_config, load_config
from .errors import ConfigError, InvalidInputError, InvariantViolation, PlacementError
from .protocol import (
    SWEEP_AXES,
    StageError,
    emit_placement_report,
    estimate_sci,
    rows_to_csv,
    run_protocol,
    sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("sixdma")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config (defaults apply when omitted)")
    p.add_argument("--seed", type=int, action="append",
                   help="master seed; repeat for several (default: the config's seeds)")
    p.add_argument("--out", type=Path, help="output directory (default: the config's output_dir)")
    p.add_argument("--perfect-sci", action="store_true", help="design with the true multipath, skipping estimation")
    p.add_argument("--exact-covariance", action="store_true", help="train on exact instead of sample covariances")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sixdma", description="6D movable-antenna simulation pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="full three-stage run per seed"))

    p = sub.add_parser("sweep", help="sweep one axis over the config's seeds and write a tidy CSV")
    _common(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--workers", type=int, default=1, help="parallel cells")

    p = sub.add_parser("placement-report", help="write the placement report of a run")
    _common(p)
    p.add_argument("--record", type=Path, help="existing run JSON; when omitted a fresh run is made")

    _common(sub.add_parser("estimate-sci", help="training and multipath recovery only"))

    p = sub.add_parser("benchmark", help="evaluate one benchmark array")
    _common(p)
    p.add_argument("scheme", choices=("fa", "paa", "mcao"))
    return parser


def _seeds(args, cfg: ExperimentConfig) -> list[int]:
    return list(args.seed) if args.seed else list(cfg.seeds)


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _summary(rec) -> str:
    parts = [f"seed={rec.seed}"]
    if rec.sci_error is not None:
        parts.append(f"sci_error={rec.sci_error:.4g}")
    parts += [f"{k}={v['sum_log_rate']:.4f}" for k, v in sorted(rec.schemes.items())]
    return " ".join(parts)


def _cmd_run(args, cfg, out: Path) -> int:
    _write(out / "config.yaml", dump_config(cfg))
    for seed in _seeds(args, cfg):
        rec = run_protocol(cfg, seed, args.perfect_sci, args.exact_covariance)
        _write(out / f"run_seed{seed}.json", rec.to_json())
        emit_placement_report(rec, out / f"placement_seed{seed}.json")
        print(_summary(rec))
    return EXIT_OK


def _cmd_sweep(args, cfg, out: Path) -> int:
    if args.seed:
        cfg = cfg.replace(seeds=tuple(args.seed))
    rows, failures = sweep(cfg, args.axis, args.perfect_sci, args.exact_covariance, workers=args.workers)
    path = _write(out / f"sweep_{args.axis}.csv", rows_to_csv(rows))
    print(f"wrote {len(rows)} rows to {path}")
    if failures:
        _write(out / f"sweep_{args.axis}_failures.json", json.dumps(failures, indent=2))
        print(f"{len(failures)} cell(s) failed; see sweep_{args.axis}_failures.json", file=sys.stderr)
        if all(r[4] == "failed" for r in rows):
            return EXIT_RUNTIME
    return EXIT_OK


def _cmd_placement(args, cfg, out: Path) -> int:
    if args.record is not None:
        try:
            data = json.loads(args.record.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read record {args.record}: {exc}") from exc
        path = emit_placement_report(data, out / f"placement_seed{data.get('seed')}.json")
        print(f"wrote {path}")
        return EXIT_OK
    for seed in _seeds(args, cfg):
        rec = run_protocol(cfg, seed, args.perfect_sci, args.exact_covariance, schemes=["proposed"])
        path = emit_placement_report(rec, out / f"placement_seed{seed}.json")
        print(f"wrote {path} (bounding edge {rec.placement['bounding_edge']:.3f} m)")
    return EXIT_OK


def _cmd_estimate(args, cfg, out: Path) -> int:
    for seed in _seeds(args, cfg):
        truth, est, err, times = estimate_sci(cfg, seed, args.exact_covariance)
        payload = {
            "config_hash": cfg.hash(),
            "seed": seed,
            "sci_error": err,
            "stage_times": times,
            "estimated": [{"doas": p.doas.tolist(), "powers": p.powers.tolist()} for p in est],
            "true": [{"doas": p.doas.tolist(), "powers": p.powers.tolist()} for p in truth.path_sets],
        }
        _write(out / f"sci_seed{seed}.json", json.dumps(payload, indent=2))
        print(f"seed={seed} sci_error={err:.4g}")
    return EXIT_OK


def _cmd_benchmark(args, cfg, out: Path) -> int:
    for seed in _seeds(args, cfg):
        rec = run_protocol(cfg, seed, args.perfect_sci, args.exact_covariance, schemes=[args.scheme])
        _write(out / f"{args.scheme}_seed{seed}.json", rec.to_json())
        print(_summary(rec))
    return EXIT_OK


COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "placement-report": _cmd_placement,
    "estimate-sci": _cmd_estimate,
    "benchmark": _cmd_benchmark,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        out = args.out if args.out is not None else Path(cfg.output_dir)
        return COMMANDS[args.command](args, cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, InvariantViolation, PlacementError, InvalidInputError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
