"""Command line interface: ``tegta gen|coarsen|run|estimate|bounds|plot``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path

from . import games
from .abstraction import CoarseningSpec, CoarsenError, check_certificate, coarsen
from .bounds import BoundInputs, c_histogram, hoeffding_eps, variance_proxy
from .estimation import EmpiricalGame, InsufficientDataError, ModelStructure
from .experiments import PRESETS, Variant, preset, run_experiment
from .game_tree import InvalidGameError, load_game, profile_from_labels, save_game
from .games import SimulationTrace
from .plotting import curves_from_summary, emit_plot

FIXTURES = {
    "kuhn": games.kuhn_poker,
    "matching-pennies": games.matching_pennies,
    "worked-example": games.worked_example_tree,
    "coarsen-fixture": games.coarsen_fixture,
    "dominant": games.dominant_game,
}
GENERATED = ("game1", "game2", "game3", "game3-small")


def cmd_gen(args) -> int:
    if args.game in FIXTURES:
        tree = FIXTURES[args.game]()
    else:
        tree = games.generate(args.game, args.seed)
    save_game(tree, args.out)
    print(f"wrote {tree!r} to {args.out}")
    return 0


def cmd_coarsen(args) -> int:
    tree = load_game(args.game, require_payoffs=False)
    spec = CoarseningSpec.load(args.spec)
    result = coarsen(tree, spec, condense=not args.no_condense)
    errs = check_certificate(tree, result)
    if errs:
        print("certificate check failed:\n  " + "\n  ".join(errs), file=sys.stderr)
        return 1
    save_game(result.game, args.out)
    if args.certificate:
        with open(args.certificate, "w", encoding="utf-8") as fh:
            json.dump({"certificate": result.certificate,
                       "origins": {str(k): list(v) for k, v in result.origins.items()}}, fh, indent=2)
    print(f"wrote {result.game!r} to {args.out}")
    return 0


def _plan_from_args(args):
    name = args.plan or (args.game if args.game in PRESETS else None)
    if name is None:
        raise ValueError(f"no default plan for game {args.game!r}; pass --plan")
    plan = preset(name, samples=args.samples, repetitions=args.reps, seed=args.seed, mss=args.mss,
                  br=args.br, max_iters=args.max_iters)
    if args.game and args.game != plan.game:
        plan = replace(plan, game=args.game)
    if args.model or args.obs_events is not None:
        models = [args.model] if args.model else ["nf", "te"]
        variants = []
        for m in models:
            if m == "nf":
                variants.append(Variant("nf"))
            elif args.obs_events is not None:
                variants.append(Variant("te", args.obs_events))
            else:
                variants.extend(v for v in plan.variants if v.model == "te")
        plan = replace(plan, variants=tuple(variants))
    return plan


def cmd_run(args) -> int:
    plan = _plan_from_args(args)
    result = run_experiment(plan, args.out)
    for v, run in result.runs.items():
        done = [s for s in run.summaries if s.error is None]
        if not done:
            print(f"{v.label}: every repetition failed")
            continue
        final = sum(sum(s.player_regrets) for s in done) / len(done)
        iters = sum(s.iterations for s in done) / len(done)
        print(f"{v.label}: {len(done)} repetitions, mean final regret {final:.6g}, mean iterations {iters:.3g}")
    if result.failures:
        print(f"{len(result.failures)} repetition(s) failed; see manifest.json")
    print(f"wrote run directory {result.out_dir}")
    return 0


def parse_profile_id(tree, text: str, profiles: dict | None):
    """A profile id is a key of ``profiles`` or per-player action indices like ``0.1|2.0``."""
    if profiles is not None and text in profiles:
        return tuple(profile_from_labels(tree, j, labels) for j, labels in enumerate(profiles[text], start=1))
    try:
        parts = [tuple(int(a) for a in p.split(".")) if p else () for p in text.split("|")]
    except ValueError:
        raise ValueError(f"unknown profile id {text!r}") from None
    if len(parts) != tree.players:
        raise ValueError(f"profile id {text!r} names {len(parts)} players, game has {tree.players}")
    return tuple(parts)


def read_trace_log(path: str | Path):
    """Yield (profile id, observation labels, payoff decimals) per non-empty line.

    Fields are tab separated; observation labels are separated by spaces
    and payoffs by commas.
    """
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ValueError(f"{path}:{n}: expected 3 tab-separated fields, found {len(fields)}")
            try:
                payoffs = tuple(Decimal(x.strip()) for x in fields[2].split(","))
            except InvalidOperation:
                raise ValueError(f"{path}:{n}: payoffs must be decimal numbers") from None
            yield fields[0].strip(), tuple(fields[1].split()), payoffs


def cmd_estimate(args) -> int:
    tree = load_game(args.game, require_payoffs=False)
    profiles = None
    if args.profiles:
        with open(args.profiles, encoding="utf-8") as fh:
            profiles = json.load(fh)
    events = args.obs_events if args.obs_events is not None else max(
        (len(obs) for _, obs, _ in read_trace_log(args.traces)), default=0)
    emp = EmpiricalGame(ModelStructure(tree, events), exact=not args.float)
    order: list[tuple[str, tuple]] = []
    for pid, obs, pay in read_trace_log(args.traces):
        prof = parse_profile_id(tree, pid, profiles)
        if len(pay) != tree.players:
            raise ValueError(f"trace of {pid!r} has {len(pay)} payoffs, game has {tree.players} players")
        if args.float:
            pay = tuple(float(p) for p in pay)
        emp.ingest(SimulationTrace(tuple((obs[:i], o) for i, o in enumerate(obs)), pay), prof)
        if (pid, prof) not in order:
            order.append((pid, prof))
    models = [args.model] if args.model else ["nf", "te"]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["profile", "model", "player", "estimate"])
    for pid, prof in order:
        for m in models:
            try:
                est = emp.nf_estimate(prof) if m == "nf" else emp.te_estimate(prof, args.on_missing)
            except InsufficientDataError as exc:
                print(f"{pid}: {exc}", file=sys.stderr)
                continue
            for j, v in enumerate(est, start=1):
                w.writerow([pid, m, j, _decimal_text(v)])
    return 0


def _decimal_text(v) -> str:
    if isinstance(v, Fraction):
        return format((Decimal(v.numerator) / Decimal(v.denominator)).normalize(), "f")
    return str(v)


def cmd_bounds(args) -> int:
    run = Path(args.run)
    with open(run / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    with open(run / "finals.json", encoding="utf-8") as fh:
        finals = json.load(fh)
    plan = manifest["plan"]
    variance = args.variance if args.variance is not None else plan["noise_variance"]
    if args.range_proxy:
        variance = variance_proxy(games.payoff_range(plan["game"]), plan["noise_variance"])
    print(f"variance proxy {variance:.6g}, delta {args.delta}")
    for label, reps in finals.items():
        done = [r for r in reps if r["error"] is None]
        if not done:
            print(f"{label}: no completed repetitions")
            continue
        players = len(done[0]["player_regrets"])
        hist: dict[int, int] = {}
        for r in done:
            for k, v in r["c_histogram"].items():
                hist[int(k)] = hist.get(int(k), 0) + v
        print(f"{label}")
        print(f"  c histogram (all repetitions): {c_histogram([k for k, v in hist.items() for _ in range(v)])}")
        for r in done:
            n_terms = players * r["n_profiles"]
            c = r["min_c"] if label.startswith("TE") and r["min_c"] else 1
            base = BoundInputs(args.delta, plan["samples"], variance, n_terms)
            e_nf = hoeffding_eps("nf", base)
            e_te = hoeffding_eps("te", replace(base, c=c))
            status = "PASS" if r["bound_passed"] else "FAIL"
            regs = ", ".join(f"{x:.4g}" for x in r["player_regrets"])
            bound = 2 * (r["linf"] or 0.0) + (r["gamma"] or 0.0)
            print(f"  rep {r['repetition']:>3}: eps_NF={e_nf:.6g} eps_TE={e_te:.6g} (c={c}) "
                  f"regrets [{regs}] <= 2*linf+gamma={bound:.6g}: {status}")
    return 0


def cmd_plot(args) -> int:
    run = Path(args.run)
    metric = args.metric
    curves = curves_from_summary(run / "summary.csv", metric)
    if not curves:
        print(f"no rows for metric {metric!r} in {run / 'summary.csv'}", file=sys.stderr)
        return 1
    out = Path(args.out) if args.out else run / f"{metric}.svg"
    emit_plot(curves, out, title=metric.replace("_", " "), ylabel=metric.replace("_", " "))
    print(f"wrote {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tegta", description="Tree-exploiting empirical game-theoretic analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a benchmark game or fixture as a game file")
    g.add_argument("--game", required=True, choices=GENERATED + tuple(FIXTURES))
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    c = sub.add_parser("coarsen", help="abstract chance nodes out of a game file")
    c.add_argument("--game", required=True)
    c.add_argument("--spec", required=True, help="JSON map from chance-node id to removed outcome labels")
    c.add_argument("--out", required=True)
    c.add_argument("--certificate")
    c.add_argument("--no-condense", action="store_true", help="keep tuple actions instead of binary chains")
    c.set_defaults(func=cmd_coarsen)

    r = sub.add_parser("run", help="run a PSRO experiment plan and write a run directory")
    r.add_argument("--plan", choices=sorted(PRESETS))
    r.add_argument("--game", choices=GENERATED)
    r.add_argument("--model", choices=("nf", "te"))
    r.add_argument("--obs-events", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--reps", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--mss", choices=("nash", "cfr", "uniform"))
    r.add_argument("--br", choices=("exact", "qlearn"))
    r.add_argument("--max-iters", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("estimate", help="re-estimate profile payoffs from a trace log")
    e.add_argument("--game", required=True)
    e.add_argument("--traces", required=True, help="lines of: profile id TAB observations TAB payoffs")
    e.add_argument("--profiles", help="JSON map from profile id to per-player {infoset: action} maps")
    e.add_argument("--model", choices=("nf", "te"))
    e.add_argument("--obs-events", type=int)
    e.add_argument("--on-missing", choices=("raise", "renormalize"), default="raise")
    e.add_argument("--float", action="store_true", help="floating-point instead of exact decimal arithmetic")
    e.set_defaults(func=cmd_estimate)

    b = sub.add_parser("bounds", help="concentration bounds and regret-bound report for a run directory")
    b.add_argument("--run", required=True)
    b.add_argument("--delta", type=float, default=0.05)
    b.add_argument("--variance", type=float, help="sub-Gaussian variance proxy (default: the plan's noise variance)")
    b.add_argument("--range-proxy", action="store_true",
                   help="use payoff range squared / 4 plus noise variance as the proxy")
    b.set_defaults(func=cmd_bounds)

    pl = sub.add_parser("plot", help="render a metric of a run directory as SVG")
    pl.add_argument("--run", required=True)
    pl.add_argument("--metric", default="estimation_error")
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InvalidGameError, CoarsenError, ValueError, OSError) as exc:
        print(f"tegta {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
