"""Command-line front end.

Subcommands: ``run`` (replay a stream file through an estimator and write a
per-step CSV), ``attack`` (adaptive attack trials, JSON summary), ``params``
(sizing table), ``flipnum`` (flip number of a stream's exact trace) and
``gen`` (write a random stream file).  Outputs depend only on the arguments,
so equal invocations produce byte-identical files.

Exit codes: 0 success, 2 bad input, 3 stream-model violation,
4 budget exhausted during a robust run.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import statistics
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .adversary import (ExactAlgorithm, ObliviousAlgorithm, ReplayAdversary,
                        f2_probe_attack, play_game, relative_error)
from .errors import BudgetExhausted, ModelViolation, ParameterError, StreamFormatError
from .robust import (AnalysisRegimeWarning, EstimateGrid, RobustConfig,
                     privacy_accounting, robust_init)
from .sketches import (FrequencyVector, INSERTION_ONLY, TAU_BOUNDED, TURNSTILE,
                       AmsF2Sketch, KmvSketch, StreamModel, exact_trace, flip_indices)
from .streamio import read_stream, write_stream

log = logging.getLogger("robust_streaming")

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_BUDGET = 0, 2, 3, 4
CSV_HEADER = ("i", "estimate", "exact", "within_alpha")


@dataclass
class RunReport:
    config: dict
    csv_path: str | None
    rounds: int = 0
    max_rel_error: float = 0.0
    recomputations: int | None = None
    budget_remaining: int | None = None
    halted: bool = False
    wall_time_s: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = asdict(self)
        if doc["wall_time_s"] is None:
            del doc["wall_time_s"]
        if not doc["extra"]:
            del doc["extra"]
        return json.dumps(doc, sort_keys=True, indent=2)


def _auto_int(text: str) -> int | None:
    if text == "auto":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer or 'auto'")
    return value


def _model(args, default: str = INSERTION_ONLY) -> StreamModel:
    kind = args.model or default
    return StreamModel(kind, args.tau if kind == TAU_BOUNDED else None)


def derive_int(seed: int, *path: int) -> int:
    """A 63-bit integer seed for the branch ``path`` below ``seed``."""
    state = np.random.SeedSequence(seed, spawn_key=path).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def make_config(args, m: int, n: int, max_value: float | None = None) -> RobustConfig:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AnalysisRegimeWarning)
        cfg = RobustConfig.auto(args.alpha, args.eps, args.delta, m, n, _model(args),
                                lam=args.lam, k=args.k, C=args.C,
                                lambda_constant=args.lambda_constant,
                                max_value=max_value)
    if cfg.epsilon > 0.01:
        log.info("epsilon=%s is outside the analysed regime (<= 0.01)", cfg.epsilon)
    return cfg


# --- run ---------------------------------------------------------------------


def cmd_run(args) -> int:
    updates = read_stream(args.stream)
    # exact and oblivious replays accept any turnstile stream unless told otherwise
    model = _model(args, INSERTION_ONLY if args.mode == "robust" else TURNSTILE)
    args.model, args.tau = model.kind, model.tau
    n = args.n or max((u.item for u in updates), default=1)
    fv = FrequencyVector(n)
    for line, u in enumerate(updates, start=1):
        try:
            model.check(u, n)
        except ModelViolation as exc:
            raise ModelViolation(f"update {line}: {exc}") from None
        fv.update(*u)
        if model.kind == TAU_BOUNDED and not fv.tau_ok(model.tau):
            raise ModelViolation(f"update {line} breaks the tau={model.tau} bound")

    m = max(len(updates), 1)
    config = {"stream": args.stream, "functionality": args.functionality,
              "mode": args.mode, "alpha": args.alpha, "seed": args.seed, "n": n,
              "model": model.kind, "tau": model.tau}
    robust = None
    if args.mode == "exact":
        alg = ExactAlgorithm(args.functionality, n)
    elif args.mode == "oblivious":
        a = args.copy_alpha or args.alpha
        if args.functionality == "f2":
            sk = AmsF2Sketch(args.seed, a, n)
        else:
            sk = KmvSketch(args.seed, math.ceil(6 / a ** 2), n)
        alg = ObliviousAlgorithm(sk)
    else:
        total = sum(abs(u.weight) for u in updates)
        bound = float(total) ** 2 if args.functionality == "f2" else float(n)
        cfg = make_config(args, m, n, max_value=max(bound, 1.0))
        print(f"sizing: lambda={cfg.lam} k={cfg.k} eps0={cfg.epsilon0:.6g}", file=sys.stderr)
        config.update(eps=cfg.epsilon, delta=cfg.delta, lam=cfg.lam, k=cfg.k,
                      C=cfg.sizing_constant, c=cfg.c)
        robust = alg = robust_init(cfg, args.seed, functionality=args.functionality,
                                   copy_alpha=args.copy_alpha)

    start = time.perf_counter()
    tr = play_game(alg, ReplayAdversary(updates, model), len(updates), n=n,
                   functionality=args.functionality, alpha=args.alpha) if updates else None
    elapsed = time.perf_counter() - start
    rounds = tr.rounds if tr else []

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rounds:
        w.writerow((r.i, repr(r.output), r.exact, int(r.ok)))
    report = RunReport(config, args.out, rounds=len(rounds),
                       max_rel_error=max((relative_error(r.output, r.exact) for r in rounds),
                                         default=0.0),
                       halted=bool(tr and tr.halted),
                       wall_time_s=round(elapsed, 6) if args.timing else None)
    if robust is not None:
        report.recomputations = robust.recomputations
        report.budget_remaining = robust.outer_budget
    _emit(buf.getvalue(), args.out, report.to_json())
    return EXIT_BUDGET if report.halted else EXIT_OK


def _emit(csv_text: str, out: str | None, summary: str) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
        print(summary)
    else:
        sys.stdout.write(csv_text)
        print(summary, file=sys.stderr)


# --- attack ------------------------------------------------------------------


@dataclass(frozen=True)
class AttackSetup:
    target: str
    n: int
    m: int
    alpha: float
    probe_batch: int = 1
    reuse_cap: int = 16
    config: RobustConfig | None = None


def attack_trial(setup: AttackSetup, trial_seed: int) -> dict:
    """One adaptive game; algorithm and adversary seeds both derive from ``trial_seed``."""
    alg_seed = derive_int(trial_seed, 0)
    adv = f2_probe_attack(setup.n, setup.m, setup.probe_batch, derive_int(trial_seed, 1),
                          setup.reuse_cap)
    robust = None
    if setup.target == "ams":
        alg = ObliviousAlgorithm(AmsF2Sketch(alg_seed, setup.alpha, setup.n))
    elif setup.target == "robust":
        robust = alg = robust_init(setup.config, alg_seed)
    elif setup.target == "exact":
        alg = ExactAlgorithm("f2", setup.n)
    else:
        raise ParameterError(f"unknown attack target {setup.target!r}")
    tr = play_game(alg, adv, setup.m, n=setup.n, alpha=setup.alpha)
    return {"seed": trial_seed, "failure_round": tr.failure_round,
            "max_rel_error": tr.max_rel_error, "final_rel_error": tr.final_rel_error,
            "rounds": len(tr), "halted": tr.halted,
            "recomputations": None if robust is None else robust.recomputations}


def _trial_star(job):
    return attack_trial(*job)


def run_attack(setup: AttackSetup, seed: int, trials: int, jobs: int = 1) -> dict:
    seeds = [derive_int(seed, t) for t in range(trials)]
    work = [(setup, s) for s in seeds]
    if jobs > 1 and trials > 1:
        with ProcessPoolExecutor(jobs) as pool:
            rows = list(pool.map(_trial_star, work))
    else:
        rows = [attack_trial(*w) for w in work]
    failures = sum(r["failure_round"] is not None for r in rows)
    cfg = {"target": setup.target, "n": setup.n, "m": setup.m, "alpha": setup.alpha,
           "probe_batch": setup.probe_batch, "reuse_cap": setup.reuse_cap,
           "seed": seed, "trials": trials}
    if setup.config is not None:
        c = setup.config
        cfg.update(eps=c.epsilon, delta=c.delta, lam=c.lam, k=c.k, C=c.sizing_constant,
                   c=c.c)
    return {"config": cfg, "trials": rows,
            "failure_rate": failures / trials if trials else None,
            "median_worst_error": (statistics.median(r["max_rel_error"] for r in rows)
                                   if rows else None)}


def cmd_attack(args) -> int:
    cfg = None
    if args.target == "robust":
        args.model, args.tau = INSERTION_ONLY, None
        cfg = make_config(args, args.m, args.n)
        print(f"sizing: lambda={cfg.lam} k={cfg.k} eps0={cfg.epsilon0:.6g}", file=sys.stderr)
    setup = AttackSetup(args.target, args.n, args.m, args.alpha, args.probe_batch,
                        args.reuse_cap, cfg)
    doc = run_attack(setup, args.seed, args.trials, args.jobs)
    text = json.dumps(doc, sort_keys=True, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return EXIT_OK


# --- params ------------------------------------------------------------------

PARAM_COLUMNS = ("alpha", "eps", "delta", "m", "model", "tau", "lambda", "eps0", "k",
                 "grid_size", "eps_composed", "delta_composed")


def params_rows(alphas, epss, deltas, ms, model_kind, taus, n=None, C=1.0,
                lambda_constant=4.0) -> list[dict]:
    rows = []
    taus = taus if model_kind == TAU_BOUNDED else [None]
    for alpha, eps, delta, m, tau in itertools.product(alphas, epss, deltas, ms, taus):
        model = StreamModel(model_kind, tau)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AnalysisRegimeWarning)
            cfg = RobustConfig.auto(alpha, eps, delta, m, n or m, model, C=C,
                                    lambda_constant=lambda_constant)
        acct = privacy_accounting(cfg)
        rows.append({"alpha": alpha, "eps": eps, "delta": delta, "m": m,
                     "model": model_kind, "tau": tau, "lambda": cfg.lam,
                     "eps0": cfg.epsilon0, "k": cfg.k,
                     "grid_size": len(EstimateGrid.build(alpha, cfg.n, cfg.c)),
                     "eps_composed": acct.epsilon, "delta_composed": acct.delta})
    return rows


def cmd_params(args) -> int:
    if args.model == TURNSTILE:
        raise ParameterError("no flip-number bound for general turnstile streams")
    rows = params_rows(args.alpha, args.eps, args.delta, args.m, args.model,
                       args.tau_list or [None], args.n, args.C, args.lambda_constant)
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, PARAM_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        text = buf.getvalue()
    else:
        def fmt(v):
            return f"{v:.6g}" if isinstance(v, float) else str(v)
        table = [PARAM_COLUMNS] + [tuple(fmt(r[c]) for c in PARAM_COLUMNS) for r in rows]
        widths = [max(len(row[i]) for row in table) for i in range(len(PARAM_COLUMNS))]
        text = "".join("  ".join(v.rjust(wd) for v, wd in zip(row, widths)) + "\n"
                       for row in table)
    _write_text(text, args.out)
    return EXIT_OK


def _write_text(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- flipnum / gen -------------------------------------------------------------


def cmd_flipnum(args) -> int:
    updates = read_stream(args.stream)
    trace = exact_trace(updates, args.functionality)
    idx = [i + 1 for i in flip_indices(trace, args.alpha)]
    doc = {"stream": args.stream, "functionality": args.functionality, "alpha": args.alpha,
           "rounds": len(trace), "flip_number": len(idx), "flip_rounds": idx}
    _write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    from .adversary import random_stream
    model = _model(args)
    updates = random_stream(model, args.n, args.m, args.seed, args.deletion_prob)
    write_stream(args.out, updates,
                 header=f"model={model.kind} n={args.n} m={args.m} seed={args.seed}")
    return EXIT_OK


# --- parser --------------------------------------------------------------------


def _add_privacy(p: argparse.ArgumentParser) -> None:
    p.add_argument("--eps", type=float, default=1.0, help="privacy parameter epsilon")
    p.add_argument("--delta", type=float, default=0.05, help="failure probability delta")
    p.add_argument("--lambda", dest="lam", type=_auto_int, default=None,
                   help="outer-loop budget, or 'auto' (default)")
    p.add_argument("--k", type=_auto_int, default=None, help="copy count, or 'auto' (default)")
    p.add_argument("--C", type=float, default=1.0, help="sizing constant for k=auto")
    p.add_argument("--lambda-constant", type=float, default=4.0,
                   help="constant in the flip-number bound for lambda=auto")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=(INSERTION_ONLY, TURNSTILE, TAU_BOUNDED), default=None,
                   help="stream model (default: insertion_only for robust runs, "
                        "turnstile otherwise)")
    p.add_argument("--tau", type=float, default=None, help="tau for the tau_bounded model")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-streaming", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="replay a stream file through an estimator")
    p.add_argument("stream")
    p.add_argument("--functionality", choices=("f2", "distinct"), default="f2")
    p.add_argument("--mode", choices=("oblivious", "robust", "exact"), default="robust")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--copy-alpha", type=float, default=None,
                   help="accuracy each oblivious copy is sized for (default: alpha)")
    p.add_argument("--n", type=int, default=None, help="domain size (default: max item)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="per-step CSV path (default: stdout)")
    p.add_argument("--timing", action="store_true", help="add wall time to the summary")
    _add_privacy(p)
    _add_model(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("attack", help="adaptive F2 attack trials")
    p.add_argument("--target", choices=("ams", "robust", "exact"), default="robust")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--m", type=int, default=4000)
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--probe-batch", type=int, default=1)
    p.add_argument("--reuse-cap", type=int, default=16)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None)
    _add_privacy(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("params", help="sizing table for the robust estimator")
    p.add_argument("--alpha", type=float, nargs="+", default=[0.3])
    p.add_argument("--eps", type=float, nargs="+", default=[1.0])
    p.add_argument("--delta", type=float, nargs="+", default=[0.05])
    p.add_argument("--m", type=int, nargs="+", default=[10_000])
    p.add_argument("--n", type=int, default=None, help="domain size (default: m)")
    p.add_argument("--model", choices=(INSERTION_ONLY, TURNSTILE, TAU_BOUNDED),
                   default=INSERTION_ONLY)
    p.add_argument("--tau", dest="tau_list", type=float, nargs="+", default=None)
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--lambda-constant", type=float, default=4.0)
    p.add_argument("--format", choices=("table", "csv", "json"), default="table")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("flipnum", help="flip number of a stream's exact trace")
    p.add_argument("stream")
    p.add_argument("--functionality", choices=("f2", "distinct"), default="f2")
    p.add_argument("--alpha", type=float, default=0.3)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flipnum)

    p = sub.add_parser("gen", help="write a random stream file")
    p.add_argument("out")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--m", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deletion-prob", type=float, default=0.0)
    _add_model(p)
    p.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (StreamFormatError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ModelViolation as exc:
        print(f"model violation: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except BudgetExhausted as exc:
        print(f"budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET


if __name__ == "__main__":
    sys.exit(main())
