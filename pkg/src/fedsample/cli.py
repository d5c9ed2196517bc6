"""Command-line entry point: ``fedsample {optimize,pilot,train,experiment}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from fedsample.config import Config, load_config
from fedsample.convergence import ConvergenceConstants
from fedsample.errors import ConfigError, FedSampleError
from fedsample.experiment import (
    BASELINES,
    baseline_q,
    build_federation,
    run_experiment,
    run_pilot,
    run_scheme,
)
from fedsample.optimizer import optimize
from fedsample.system import SamplingVector


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n")


def _load(args) -> Config:
    cfg = load_config(args.config)
    if args.f_tot is not None:
        cfg.fleet = cfg.fleet.with_bandwidth(args.f_tot)
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_optimize(args) -> int:
    cfg = _load(args)
    if args.constants:
        consts = ConvergenceConstants.from_dict(json.loads(Path(args.constants).read_text()))
    elif cfg.constants is not None:
        consts = cfg.constants
    else:
        raise ConfigError("optimize needs constants: pass --constants or add a 'constants' section")
    res = optimize(consts, cfg.fleet, cfg.optimizer)
    out = _out_dir(args)
    _write_json(out / "q_star.json", {**res.to_dict(), "client_ids": cfg.fleet.ids.tolist(),
                                      "constants": consts.to_dict()})
    res.write_grid_csv(out / "grid.csv")
    q = res.q_star.probs
    print(f"M* = {res.m_star:.6g}  predicted time = {res.objective:.6g} s  "
          f"E[participants] = {q.sum():.3f}")
    print(f"{'client':>6} {'tau':>8} {'t':>10} {'q':>10}")
    for c, qn in zip(cfg.fleet.clients, q):
        print(f"{c.id:>6} {c.compute_time:>8.3g} {c.comm_time_unit_bw:>10.4g} {qn:>10.4g}")
    return 0


def cmd_pilot(args) -> int:
    cfg = _load(args)
    out = _out_dir(args)
    plan = cfg.plan(args.seeds)
    for seed in plan.seeds:
        fed = build_federation(cfg.task, cfg.fleet, seed)
        try:
            pilot = run_pilot(fed, cfg.task, seed, plan.pilot_rounds, plan.pilot_cap_factor)
        except FedSampleError as exc:
            exc.stage = f"pilot:seed{seed}"
            raise
        c = pilot.constants
        _write_json(out / f"constants_seed{seed}.json", {**c.to_dict(), "F_s": pilot.F_s})
        pilot.full.write_csv(out / f"pilot_full_seed{seed}.csv")
        pilot.uniform.write_csv(out / f"pilot_uniform_seed{seed}.csv")
        print(f"seed {seed}: R1={c.pilot.R1} R2={c.pilot.R2} alpha={c.alpha:.6g} "
              f"beta={c.beta:.6g} F_s={pilot.F_s:.6g}")
    return 0


def cmd_train(args) -> int:
    cfg = _load(args)
    plan = cfg.plan(args.seeds)
    model = cfg.fleet
    if args.q_file:
        raw = json.loads(Path(args.q_file).read_text())
        q = SamplingVector(raw["q_star"] if isinstance(raw, dict) else raw)
        if len(q) != model.n:
            raise ConfigError(f"{args.q_file} has {len(q)} probabilities, fleet has {model.n} clients")
        scheme = "custom"
    else:
        scheme = args.scheme
        q = baseline_q(scheme, model, plan.fixed_p)
    out = _out_dir(args)
    for seed in plan.seeds:
        fed = build_federation(cfg.task, model, seed)
        run = run_scheme(fed, scheme, q, cfg.task, cfg.target, plan.max_rounds, seed)
        run.trace.write_csv(out / f"trace_{scheme}_seed{seed}.csv")
        reached = "not reached" if run.rounds is None else f"{run.rounds} rounds, {run.time:.1f} s"
        print(f"seed {seed} {scheme}: target {reached} ({len(run.trace)} rounds run, "
              f"{run.trace.total_time:.1f} s simulated)")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load(args)
    plan = cfg.plan(args.seeds)
    report = run_experiment(plan)
    out = _out_dir(args)
    _write_json(out / "summary.json", report.to_dict())
    for s in report.seeds:
        s.optimizer.write_grid_csv(out / f"grid_seed{s.seed}.csv")
        s.pilot.full.write_csv(out / f"pilot_full_seed{s.seed}.csv")
        s.pilot.uniform.write_csv(out / f"pilot_uniform_seed{s.seed}.csv")
        for name, run in s.runs.items():
            run.trace.write_csv(out / f"trace_{name}_seed{s.seed}.csv")
    print(report.format_table())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsample", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML config file")
    common.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    common.add_argument("--seeds", type=int, nargs="+", help="master seeds (overrides the config)")
    common.add_argument("--f-tot", type=float, help="total bandwidth override")

    p = sub.add_parser("optimize", parents=[common], help="fleet + constants -> q*")
    p.add_argument("--constants", help="JSON file with alpha and beta (e.g. from `pilot`)")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("pilot", parents=[common], help="fleet + task -> fitted constants")
    p.set_defaults(func=cmd_pilot)

    p = sub.add_parser("train", parents=[common], help="fleet + q -> trace CSV")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--scheme", choices=BASELINES, default="full")
    group.add_argument("--q-file", help="JSON list of probabilities or a q_star.json from `optimize`")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment", parents=[common], help="full comparison -> report")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FedSampleError as exc:
        stage = f" [{exc.stage}]" if getattr(exc, "stage", None) else ""
        print(f"error{stage}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
