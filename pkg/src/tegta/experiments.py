"""Experiment plans, run directories, summary statistics and significance tests.

A run directory holds

* ``metrics.csv``: one row per (variant, repetition, iteration, metric),
* ``summary.csv``: mean and standard error per iteration across repetitions,
* ``tests.csv``: one-sided Welch tests of each TE variant against NF,
* ``finals.json``: final values and iteration counts per repetition,
* ``manifest.json``: plan, seeds, package versions, timings and failures,
* ``est-error.svg`` and ``regret.svg``.

Curves of repetitions that stop early are padded with their last value so
every repetition contributes at every iteration.
"""

from __future__ import annotations

import csv
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .bounds import c_histogram
from .plotting import Curve, curve_label, emit_plot
from .psro import PsroConfig, RunMetrics, run_psro
from .rng import derive_seed
from .solvers import QConfig

CSV_COLUMNS = ("experiment", "game", "model", "obs_events", "repetition", "iteration", "metric", "value")
SUMMARY_COLUMNS = ("experiment", "game", "model", "obs_events", "iteration", "metric", "n", "mean", "sem")
TEST_COLUMNS = ("experiment", "game", "metric", "model", "obs_events", "baseline", "n", "mean",
                "baseline_mean", "t_statistic", "p_value")

EXPERIMENT_OF = {
    "estimation_error": "est-error",
    "shadow_error": "est-error",
    "linf": "est-error",
    "regret": "regret",
    "empirical_regret": "regret",
}


@dataclass(frozen=True)
class Variant:
    """One empirical-game model of a plan: NF, or TE with ``obs_events`` modeled events."""

    model: str
    obs_events: int | None = None

    @property
    def label(self) -> str:
        return curve_label(self.model, self.obs_events)


@dataclass(frozen=True)
class ExperimentPlan:
    name: str
    game: str
    variants: tuple[Variant, ...]
    samples: int = 500
    repetitions: int = 25
    mss: str = "nash"
    br: str = "exact"
    max_iters: int = 20
    seed: int = 0
    noise_variance: float = 0.1
    cfr_iterations: int = 1000
    qlearn: QConfig = field(default_factory=QConfig)

    def config(self, variant: Variant) -> PsroConfig:
        return PsroConfig(
            model=variant.model, game=self.game, obs_events=variant.obs_events, mss=self.mss, br=self.br,
            samples=self.samples, max_iters=self.max_iters, repetitions=self.repetitions, seed=self.seed,
            noise_variance=self.noise_variance, cfr_iterations=self.cfr_iterations, qlearn=self.qlearn,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["variants"] = [asdict(v) for v in self.variants]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentPlan":
        data = dict(data)
        data["variants"] = tuple(Variant(**v) for v in data["variants"])
        if "qlearn" in data:
            data["qlearn"] = QConfig(**data["qlearn"])
        return cls(**data)


NF = Variant("nf")


def _te(*events: int | None) -> tuple[Variant, ...]:
    return tuple(Variant("te", k) for k in events)


PRESETS: dict[str, ExperimentPlan] = {
    "game1": ExperimentPlan("game1", "game1", (NF,) + _te(None)),
    "game2": ExperimentPlan("game2", "game2", (NF,) + _te(1, 2)),
    "game2-cfr": ExperimentPlan("game2-cfr", "game2", (NF,) + _te(1, 2), mss="cfr"),
    "game3": ExperimentPlan("game3", "game3", (NF,) + _te(1, 2, 3), samples=5000, mss="cfr", br="qlearn"),
    "game3-desk": ExperimentPlan("game3-desk", "game3", (NF,) + _te(1, 2, 3), samples=1000,
                                  repetitions=10, mss="cfr", br="exact", max_iters=10),
    "game1-m100": ExperimentPlan("game1-m100", "game1", (NF,) + _te(None), samples=100),
    "game1-m200": ExperimentPlan("game1-m200", "game1", (NF,) + _te(None), samples=200),
    "game2-m100": ExperimentPlan("game2-m100", "game2", (NF,) + _te(1, 2), samples=100),
    "game2-m200": ExperimentPlan("game2-m200", "game2", (NF,) + _te(1, 2), samples=200),
}


def preset(name: str, **overrides) -> ExperimentPlan:
    try:
        plan = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown plan {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(plan, **{k: v for k, v in overrides.items() if v is not None})


def t_test_one_sided(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch t statistic and p-value for the null hypothesis mean(a) >= mean(b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two values")
    if np.var(a) == 0 and np.var(b) == 0:
        raise ValueError("both samples have zero variance")
    res = stats.ttest_ind(a, b, equal_var=False, alternative="less")
    return float(res.statistic), float(res.pvalue)


def sem(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Standard error of the mean: sample standard deviation over sqrt(n)."""
    n = values.shape[axis]
    if n < 2:
        return np.zeros(np.delete(values.shape, axis))
    return np.std(values, axis=axis, ddof=1) / math.sqrt(n)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(x))
    return "" if x is None else str(x)


METRICS = ("estimation_error", "shadow_error", "linf", "regret", "empirical_regret")


def _record_metrics(n_players: int) -> tuple[str, ...]:
    extra = tuple(f"player_regret_{j}" for j in range(1, n_players + 1))
    sizes = tuple(f"set_size_{j}" for j in range(1, n_players + 1))
    return METRICS + extra + sizes + ("simulations",)


def _experiment(metric: str) -> str:
    if metric.startswith("player_regret_"):
        return "regret"
    return EXPERIMENT_OF.get(metric, "psro")


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    out_dir: Path
    runs: dict[Variant, RunMetrics]
    failures: list[dict]


def _write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _versions() -> dict[str, str]:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "matplotlib"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = "unknown"
    from . import __version__
    out["tegta"] = __version__
    return out


def run_experiment(plan: ExperimentPlan, out_dir: str | Path, workers: int | None = None) -> ExperimentResult:
    """Run every variant of ``plan`` and write the run directory."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from None

    runs: dict[Variant, RunMetrics] = {}
    timings: dict[str, float] = {}
    failures: list[dict] = []
    for v in plan.variants:
        t0 = time.perf_counter()
        runs[v] = run_psro(plan.config(v), workers=workers, keep_going=True)
        timings[v.label] = round(time.perf_counter() - t0, 3)
        for s in runs[v].summaries:
            if s.error is not None:
                failures.append({"variant": v.label, "repetition": s.repetition, "error": s.error})

    write_outputs(plan, out, runs)
    manifest = {
        "plan": plan.to_dict(),
        "seeds": {
            "master": plan.seed,
            "instances": [derive_seed(plan.seed, 11, rep) for rep in range(plan.repetitions)],
        },
        "versions": _versions(),
        "timings_seconds": timings,
        "failures": failures,
        "files": ["metrics.csv", "summary.csv", "tests.csv", "finals.json", "est-error.svg", "regret.svg"],
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return ExperimentResult(plan, out, runs, failures)


def _ok(run: RunMetrics) -> bool:
    return bool(run.records)


def write_outputs(plan: ExperimentPlan, out: Path, runs: dict[Variant, RunMetrics]) -> None:
    """Write the CSV, JSON and SVG outputs of finished runs."""
    n_players = next((len(r.records[0].set_sizes) for r in runs.values() if r.records), 2)
    metrics = _record_metrics(n_players)
    rows = []
    for v, run in runs.items():
        obs = "" if v.model == "nf" else (v.obs_events if v.obs_events is not None else "all")
        for r in run.records:
            for m in metrics:
                rows.append((_experiment(m), plan.game, v.model, obs, r.repetition, r.iteration, m,
                             _metric_value(r, m)))
    _write_csv(out / "metrics.csv", CSV_COLUMNS, rows)

    length = 1 + max((r.iteration for run in runs.values() for r in run.records), default=0)
    curves: dict[tuple[Variant, str], np.ndarray] = {}
    summary_rows = []
    for v, run in runs.items():
        if not _ok(run):
            continue
        obs = "" if v.model == "nf" else (v.obs_events if v.obs_events is not None else "all")
        for m in metrics:
            c = run.curve(m, length)
            curves[(v, m)] = c
            mu, se = c.mean(axis=0), sem(c)
            for it in range(length):
                summary_rows.append((_experiment(m), plan.game, v.model, obs, it, m, c.shape[0],
                                     float(mu[it]), float(se[it])))
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows)

    test_rows = []
    base = next((v for v in runs if v.model == "nf"), None)
    for v in runs:
        if v.model != "te" or base is None or (v, "regret") not in curves or (base, "regret") not in curves:
            continue
        obs = v.obs_events if v.obs_events is not None else "all"
        for m in ("estimation_error", "regret"):
            a, b = curves[(v, m)][:, -1], curves[(base, m)][:, -1]
            try:
                t, p = t_test_one_sided(a, b)
            except ValueError:
                t = p = float("nan")
            test_rows.append((_experiment(m), plan.game, m, v.model, obs, "nf", len(a), float(a.mean()),
                              float(b.mean()), t, p))
    _write_csv(out / "tests.csv", TEST_COLUMNS, test_rows)

    finals = {}
    for v, run in runs.items():
        finals[v.label] = [
            {"repetition": s.repetition, "converged": s.converged, "iterations": s.iterations,
             "regret": float(sum(s.player_regrets)) if s.player_regrets else None,
             "player_regrets": list(s.player_regrets), "linf": _json_float(s.linf),
             "shadow_linf": _json_float(s.shadow_linf), "gamma": _json_float(s.gamma),
             "bound_passed": s.bound_passed, "min_c": min(s.c_values) if s.c_values else None,
             "c_histogram": {str(k): v for k, v in c_histogram(s.c_values).items()},
             "n_profiles": s.n_profiles, "error": s.error}
            for s in run.summaries
        ]
    with open(out / "finals.json", "w", encoding="utf-8") as fh:
        json.dump(finals, fh, indent=2, sort_keys=True)

    for name, metric, ylabel in (("est-error", "estimation_error", "mean absolute payoff error"),
                                 ("regret", "regret", "true-game regret")):
        plot = [Curve(v.label, np.arange(length), curves[(v, metric)].mean(axis=0), sem(curves[(v, metric)]))
                for v in runs if (v, metric) in curves]
        if plot:
            emit_plot(plot, out / f"{name}.svg", title=f"{plan.name}: {ylabel}", ylabel=ylabel)


def _metric_value(r, m: str) -> float | int:
    if m.startswith("set_size_"):
        return r.set_sizes[int(m.rsplit("_", 1)[1]) - 1]
    if m.startswith("player_regret_"):
        return r.player_regrets[int(m.rsplit("_", 1)[1]) - 1]
    return getattr(r, m)


def _json_float(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)
