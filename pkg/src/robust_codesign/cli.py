"""Command-line front end: ``robust-codesign <subcommand> --config run.json [flags]``.

Exit codes: 0 success, 2 usage or configuration error (including missing
artifacts of an earlier stage), 3 compute failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, RunConfig
from .empc import SizingParams, closed_loop, save_closed_loop
from .pipeline import MissingArtifact, Pipeline, StageFailure, parallel_map

SUBCOMMANDS = ("synth", "simulate", "tune", "subsample", "cluster", "codesign", "validate", "report")

log = logging.getLogger("robust_codesign")


def _ints(text: str, n: int, flag: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects {n} comma-separated integers") from None
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{flag} expects {n} comma-separated integers")
    return vals


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-codesign", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="run configuration (JSON)")
    ap.add_argument("--seed", type=int, help="override the master seed")
    ap.add_argument("--out", help="output directory (default: config 'out', relative to the config file)")
    ap.add_argument("--p", type=lambda s: _ints(s, 2, "--p"), help="battery_units,pv_units")
    ap.add_argument("--pc", type=lambda s: _ints(s, 3, "--pc"), help="n_s,n_x,n_f")
    ap.add_argument("--n-c", type=int, dest="n_c", help="number of clusters (bypasses d_max)")
    ap.add_argument("--d-max", type=float, dest="d_max", help="max point-to-medoid distance")
    ap.add_argument("--skip-tuning", action="store_true", help="use the fixed controller from the config")
    ap.add_argument("--risk", choices=("mean", "max"))
    ap.add_argument("--parallel", type=int, help="worker processes")
    ap.add_argument("--span", type=float, help="simulate: hours to simulate (default subsampling.sim_hours)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    over: dict = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.parallel is not None:
        over["parallel"] = args.parallel
    sub = {k: v for k, v in (("n_c", args.n_c), ("d_max", args.d_max)) if v is not None}
    if sub:
        over["subsampling"] = sub
    if args.skip_tuning:
        over["controller"] = {"skip_tuning": True}
    if args.pc is not None and args.command != "simulate":
        over.setdefault("controller", {}).update({"skip_tuning": True, "fixed": args.pc})
    if args.risk is not None:
        over["codesign"] = {"risk": args.risk}
    return cfg.with_overrides(**over) if over else cfg


def _simulate(pipe: Pipeline, cfg: RunConfig, args) -> None:
    if args.p is None:
        raise ConfigError("simulate needs --p battery_units,pv_units")
    pc = cfg.pc(args.pc) if args.pc is not None else cfg.fixed_pc()
    p = SizingParams(*args.p)
    model = cfg.model()
    try:
        p.check(model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    series = pipe.series()
    span = args.span or cfg.raw["subsampling"]["sim_hours"]
    r = closed_loop(model.initial_state(), series, p, pc, span, model)
    d = pipe.stage_dir("simulate")
    save_closed_loop(r, d / "trajectory.csv")
    print(f"total closed-loop cost: {r.total_cost!r} GBP over {span:g} h "
          f"({r.n_solves} solves, {r.recovery_samples} in recovery mode)")


def run(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        out = Path(args.out) if args.out else cfg.out_dir()
        pipe = Pipeline(cfg, out)
        workers = int(cfg.raw["parallel"])
        with parallel_map(workers) as pmap:
            pipe.data()
            cmd = args.command
            if cmd == "synth":
                print(out / "data" / "train.csv")
            elif cmd == "simulate":
                _simulate(pipe, cfg, args)
            elif cmd == "tune":
                pipe.tune(pmap)
                print(f"pc_star = {pipe.pc_star()}")
            elif cmd == "subsample":
                pipe.subsample(pmap)
                print(out / "subsample" / "importance.csv")
            elif cmd == "cluster":
                pipe.cluster()
                cm = pipe.clusters()
                print(f"n_c = {cm.n_c}, representatives = {cm.representative_ids}")
            elif cmd == "codesign":
                pipe.run_all(pmap)
                print(f"p_star = {pipe.p_star()}, pc_star = {pipe.pc_star('retune')}")
            elif cmd == "validate":
                p = SizingParams(*args.p) if args.p is not None else pipe.p_star()
                if cfg.raw["heldout"] is None:
                    raise ConfigError("validate needs a 'heldout' data section")
                print(pipe.validate_only(p))
            elif cmd == "report":
                pipe.report()
                pipe.manifest()
                print(out / "report" / "report.csv")
    except (ConfigError, MissingArtifact) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"compute failure: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"compute failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
