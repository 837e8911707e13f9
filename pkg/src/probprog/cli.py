"""Command-line entry point: run programs, the test battery, and benchmarks."""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

from .engines import ENGINES, DegenerateSweep, run_engine
from .interp import EvalError
from .metrics import (PARTICLE_LADDER, ExperimentConfig, corpus_path, run_experiment,
                      write_curves_csv)
from .sexpr import LexError, ParseError, ValidationError, load_program, validate


def _json_value(v):
    if isinstance(v, tuple):
        return [_json_value(x) for x in v]
    if isinstance(v, float) and v.is_integer() and abs(v) < 2 ** 53:
        return int(v)
    if isinstance(v, (bool, int, float, str)) or v is None:
        return v
    return repr(v)


def _seed(args) -> int:
    env = os.environ.get("TRACE_SEED")
    return int(env) if env not in (None, "") else args.seed


def _program_path(name: str) -> str:
    # bare corpus names such as "hmm.ang" resolve to the bundled programs
    if os.path.exists(name) or os.sep in name:
        return name
    bundled = corpus_path(name[:-4] if name.endswith(".ang") else name)
    return str(bundled) if bundled.exists() else name


def cmd_run(args) -> int:
    try:
        program = load_program(_program_path(args.program))
        diags = validate(program)
        if diags:
            raise ValidationError(diags)
    except FileNotFoundError:
        print(f"error: no such program file: {args.program}", file=sys.stderr)
        return 1
    except (LexError, ParseError) as exc:
        print(f"error: {args.program}: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        for d in exc.diagnostics:
            print(f"error: {args.program}: {d}", file=sys.stderr)
        return 1
    seed = _seed(args)
    options = {"fork_every_directive": True} if args.fork_every_directive and args.engine == "pg" else {}
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    writer = None
    if args.format == "csv":
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["sweep", "sim", "label", "value", "applies", "t_ns"])
    last = None
    evidence = []
    try:
        try:
            stream = run_engine(args.engine, program, particles=args.particles, sweeps=args.sweeps,
                                seed=seed, threads=args.threads, **options)
            for sweep in stream:
                last = sweep
                if sweep.log_evidence is not None:
                    evidence.append(sweep.log_evidence)
                t_ns = sweep.t_ns if args.wall_clock else 0
                for particle in sweep.predicts:
                    for label, value in particle:
                        if writer is not None:
                            writer.writerow([sweep.sweep, sweep.simulations, label,
                                             json.dumps(_json_value(value)), sweep.applies, t_ns])
                        else:
                            out.write(json.dumps({"sweep": sweep.sweep, "sim": sweep.simulations,
                                                  "label": label, "value": _json_value(value),
                                                  "applies": sweep.applies, "t_ns": t_ns}) + "\n")
        except DegenerateSweep as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except (EvalError, ValidationError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    finally:
        if out is not sys.stdout:
            out.close()
        else:
            out.flush()
    if last is not None:
        summary = (f"engine={args.engine} seed={seed} simulations={last.simulations} "
                   f"applies={last.applies} wall_clock_s={last.t_ns / 1e9:.3f}")
        if evidence:
            summary += f" log_evidence={evidence[-1]:.6f}"
        print(summary, file=sys.stderr)
    return 0


def cmd_test(args) -> int:
    from .battery import conditional_tier, measure_tier, unit_tier
    tiers = ["unit", "measure", "conditional"] if args.tier == "all" else [args.tier]
    failed = False
    seed = _seed(args)
    for tier in tiers:
        t0 = time.perf_counter()
        if tier == "unit":
            checks = unit_tier()
        elif tier == "measure":
            checks = measure_tier(seed=seed)
        else:
            checks = conditional_tier(seed=seed, golden_dir=args.golden_dir, scale=args.scale)
        ok = all(c.passed for c in checks)
        failed |= not ok
        n_pass = sum(c.passed for c in checks)
        print(f"== {tier} tier: {'PASS' if ok else 'FAIL'} ({n_pass}/{len(checks)}, "
              f"{time.perf_counter() - t0:.1f}s)")
        for c in checks:
            if args.verbose or not c.passed or tier != "unit":
                print("  " + c.line())
    return 1 if failed else 0


_FIGURE_DEFAULTS = {
    # figure -> (seeds, simulations)
    1: (25, 100_000),
    2: (1, 100_000),
    3: (25, 50_000),
}


def cmd_bench(args) -> int:
    seeds_default, sims_default = _FIGURE_DEFAULTS[args.figure]
    n_seeds = args.seeds if args.seeds is not None else seeds_default
    sims = args.simulations if args.simulations is not None else sims_default
    base = _seed(args)
    seeds = tuple(range(base, base + n_seeds))
    if args.figure == 1:
        cfg = ExperimentConfig(args.program, engines=(("pg", args.particles), ("rdb", None)),
                               seeds=seeds, simulations=sims, workers=args.threads)
    elif args.figure == 2:
        cfg = ExperimentConfig(args.program, engines=(("pg", args.particles), ("rdb", None)),
                               seeds=seeds, simulations=sims, permutations=args.permutations,
                               workers=args.threads)
    else:
        cfg = ExperimentConfig(args.program, seeds=seeds, simulations=sims,
                               particle_ladder=PARTICLE_LADDER, workers=args.threads)
    summaries = run_experiment(cfg)
    write_curves_csv(args.output or sys.stdout, summaries, wall_clock=args.wall_clock)
    bad = 0
    for s in summaries:
        for seed, err in s.errors.items():
            bad += 1
            print(f"cell {s.engine} {s.program} seed={seed} failed: {err}", file=sys.stderr)
        finals = sorted(s.final_values())
        if finals:
            print(f"{s.engine:>8} {s.program}: median final {finals[len(finals) // 2]:.4g} "
                  f"over {len(finals)} seed(s)", file=sys.stderr)
    return 2 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probprog", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a program under an inference engine")
    run.add_argument("program", help="path to a .ang program, or a bundled program name")
    run.add_argument("--engine", choices=ENGINES, default="pg")
    run.add_argument("--particles", type=int, default=100)
    run.add_argument("--sweeps", type=int, default=1000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--output", "-o")
    run.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--fork-every-directive", action="store_true",
                     help="pg: fork before every directive instead of only after observes")
    run.add_argument("--wall-clock", action="store_true",
                     help="fill t_ns with engine time (output is then not reproducible)")
    run.set_defaults(func=cmd_run)

    test = sub.add_parser("test", help="run the unit, measure and conditional test tiers")
    test.add_argument("--tier", choices=("all", "unit", "measure", "conditional"), default="all")
    test.add_argument("--seed", type=int, default=0)
    test.add_argument("--golden-dir", help="directory of oracle CSV files to test against")
    test.add_argument("--scale", type=float, default=1.0,
                      help="multiply the conditional tier's simulation budgets")
    test.add_argument("--verbose", "-v", action="store_true")
    test.set_defaults(func=cmd_test)

    bench = sub.add_parser("bench", help="convergence curves for the comparison experiments")
    bench.add_argument("--figure", type=int, choices=(1, 2, 3), required=True,
                       help="1: PG vs RDB, 2: line permutations, 3: particle ladder")
    bench.add_argument("--program", choices=("hmm", "dp-mixture", "branching", "marsaglia"),
                       required=True)
    bench.add_argument("--particles", type=int, default=100)
    bench.add_argument("--seeds", type=int)
    bench.add_argument("--seed", type=int, default=0, help="first seed")
    bench.add_argument("--simulations", type=int)
    bench.add_argument("--permutations", type=int, default=25)
    bench.add_argument("--threads", type=int, default=1, help="worker processes for cells")
    bench.add_argument("--output", "-o")
    bench.add_argument("--wall-clock", action="store_true",
                       help="fill wall_clock_ns with engine time (output is then not reproducible)")
    bench.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
