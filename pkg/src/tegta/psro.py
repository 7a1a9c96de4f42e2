"""Policy-space response oracles over normal-form or tree-exploiting empirical games.

One repetition runs the loop

1. solve the restricted empirical game with the meta-strategy solver,
2. compute each player's best response to that solution,
3. add novel responses to the restricted sets,
4. simulate every new combination of restricted strategies ``m`` times,

until no player has a novel response or the iteration cap is reached.
Both estimators are fed the same traces; the configured ``model`` drives
the loop and the other one is recorded alongside as a shadow error.
"""

from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .bounds import regret_bound_check
from .estimation import EmpiricalGame, ModelStructure, PureProfile
from .game_tree import (
    GameTree,
    StrategyProfile,
    best_response,
    canonical_pure,
    leaf_reach,
    mixture_to_behavioral,
    pure_to_flat,
    random_pure,
    regret,
)
from .games import ObservationModel, Simulator, generate
from .rng import TAG_INIT, TAG_PROFILE, TAG_QLEARN, derive_seed, hash_key, stream
from .solvers import (
    QConfig,
    RestrictedNormalForm,
    SolverError,
    nash_equilibrium,
    q_learning_br,
    regret_matching,
    uniform_mss,
)

MODELS = ("nf", "te")
MSS_CHOICES = ("nash", "cfr", "uniform")
BR_CHOICES = ("exact", "qlearn")


@dataclass(frozen=True)
class PsroConfig:
    model: str = "te"
    game: str = "game1"
    obs_events: int | None = None
    mss: str = "nash"
    br: str = "exact"
    samples: int = 500
    max_iters: int = 20
    repetitions: int = 1
    seed: int = 0
    noise_variance: float = 0.1
    cfr_iterations: int = 1000
    qlearn: QConfig = field(default_factory=QConfig)
    te_expansion: str = "profiles"
    on_missing: str = "renormalize"

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.mss not in MSS_CHOICES:
            raise ValueError(f"mss must be one of {MSS_CHOICES}")
        if self.br not in BR_CHOICES:
            raise ValueError(f"br must be one of {BR_CHOICES}")
        if self.samples < 1:
            raise ValueError("samples must be at least 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.te_expansion not in ("profiles", "families"):
            raise ValueError("te_expansion must be 'profiles' or 'families'")


@dataclass(frozen=True)
class IterationRecord:
    repetition: int
    iteration: int
    estimation_error: float
    shadow_error: float
    linf: float
    regret: float
    player_regrets: tuple[float, ...]
    empirical_regret: float
    set_sizes: tuple[int, ...]
    simulations: int
    wall_time: float


@dataclass(frozen=True)
class RepetitionSummary:
    repetition: int
    converged: bool
    iterations: int
    linf: float
    shadow_linf: float
    gamma: float
    player_regrets: tuple[float, ...]
    c_values: tuple[int, ...]
    n_profiles: int
    bound_passed: bool
    error: str | None = None


@dataclass
class RunMetrics:
    config: PsroConfig
    records: list[IterationRecord]
    summaries: list[RepetitionSummary]

    def curve(self, metric: str, length: int | None = None) -> np.ndarray:
        """Per-repetition series of ``metric``, padded by carrying the last value forward."""
        reps = sorted({r.repetition for r in self.records})
        if not reps:
            raise ValueError("no completed repetitions")
        by_rep = {rep: [r for r in self.records if r.repetition == rep] for rep in reps}
        if length is None:
            length = self.config.max_iters + 1
        out = np.full((len(reps), length), np.nan)
        for i, rep in enumerate(reps):
            rows = sorted(by_rep[rep], key=lambda r: r.iteration)
            vals = [_metric(r, metric) for r in rows]
            vals = vals[:length] + [vals[-1]] * max(0, length - len(vals))
            out[i] = vals
        return out


def _metric(r: IterationRecord, metric: str) -> float:
    if metric.startswith("set_size_"):
        return float(r.set_sizes[int(metric.rsplit("_", 1)[1]) - 1])
    if metric.startswith("player_regret_"):
        return float(r.player_regrets[int(metric.rsplit("_", 1)[1]) - 1])
    return float(getattr(r, metric))


def instance_for(config: PsroConfig, rep: int, game: GameTree | None = None) -> GameTree:
    if game is not None:
        return game
    return generate(config.game, derive_seed(config.seed, 11, rep))


def total_chance_events(tree: GameTree) -> int:
    c = tree.c
    return int(c.chance_pos[c.leaves].max()) if len(c.leaves) else 0


class TrueGameOracle:
    """Exact payoffs of restricted profiles in the true game."""

    def __init__(self, tree: GameTree):
        self.tree = tree
        self._reach: dict[tuple[int, tuple[int, ...]], np.ndarray] = {}
        c = tree.c
        self._weighted = c.chance_reach[c.leaves][:, None] * tree.leaf_utilities()

    def reach(self, j: int, pure: tuple[int, ...]) -> np.ndarray:
        key = (j, pure)
        r = self._reach.get(key)
        if r is None:
            r = self._reach[key] = leaf_reach(self.tree, j, pure_to_flat(self.tree, j, pure))
        return r

    def tensor(self, sets: Sequence[Sequence[tuple[int, ...]]]) -> np.ndarray:
        """True payoffs of every combination, shape (k_1, ..., k_n, n)."""
        n = len(sets)
        letters = "abcdefghijklmnop"[:n]
        reach = [np.array([self.reach(j, p) for p in sets[j - 1]]) for j in range(1, n + 1)]
        subs = ",".join(f"{x}z" for x in letters) + f",zy->{letters}y"
        return np.einsum(subs, *reach, self._weighted, optimize=True)

    def payoff(self, profile: PureProfile) -> np.ndarray:
        r = np.ones(len(self.tree.c.leaves))
        for j, p in enumerate(profile, start=1):
            r = r * self.reach(j, p)
        return r @ self.tree.leaf_utilities()


def lift(tree: GameTree, sets, weights) -> StrategyProfile:
    """Behavioral profile equivalent to mixtures over restricted pure strategies."""
    return StrategyProfile(tuple(mixture_to_behavioral(tree, j, sets[j - 1], weights[j - 1])
                                 for j in range(1, tree.players + 1)))


def true_game_regret(tree: GameTree, sets, weights) -> float:
    """Total regret in the full game of a solution over the restricted sets."""
    for w, s in zip(weights, sets):
        if len(w) != len(s):
            raise ValueError("solution support lies outside the restricted sets")
    _, total = regret(tree, lift(tree, sets, weights))
    return total


def estimate_tensor(emp: EmpiricalGame, sets, model: str, on_missing: str) -> np.ndarray:
    sizes = tuple(len(s) for s in sets)
    out = np.empty(sizes + (len(sets),))
    for idx in itertools.product(*(range(k) for k in sizes)):
        prof = tuple(sets[j][i] for j, i in enumerate(idx))
        if model == "nf":
            out[idx] = emp.nf_estimate(prof)
        else:
            out[idx] = emp.te_estimate(prof, on_missing)
    return out


def solve_mss(rnf: RestrictedNormalForm, mss: str, cfr_iterations: int) -> tuple[tuple[np.ndarray, ...], float]:
    """Meta-strategy solution and its regret in the restricted game."""
    if mss == "nash":
        w = nash_equilibrium(rnf).weights
    elif mss == "cfr":
        w, _ = regret_matching(rnf, cfr_iterations)
    else:
        w = uniform_mss(rnf)
    return w, float(rnf.regrets(w).max())


def expand_te_model(emp: EmpiricalGame, new_brs: Sequence[tuple[int, ...] | None], old_sets, m: int,
                    sampler) -> list[PureProfile]:
    """Simulate the per-decision-point combination families of new best responses.

    For each player ``j`` with a new response and each of its model
    decision points ``g``, the family pairs every old strategy of ``j``
    with its choices at ``g`` replaced by the response, against every old
    strategy of the other players. One more family combines all the new
    responses with each other. ``sampler(profile, family)`` simulates
    ``m`` traces of a profile and returns them as a batch. Returns the
    simulated profiles in order.
    """
    st = emp.structure
    tree = st.tree
    n = tree.players
    done: list[PureProfile] = []
    family = 0
    for j in range(1, n + 1):
        br = new_brs[j - 1]
        if br is None:
            continue
        pi = tree.player(j)
        groups = sorted(st.infoset_groups(j), key=lambda g: min(pi.index[i] for i in g))
        for g in groups:
            idx = [pi.index[i] for i in g]
            hybrids = []
            for old in old_sets[j - 1]:
                h = list(old)
                for i in idx:
                    h[i] = br[i]
                h = canonical_pure(tree, j, h)
                if h not in hybrids:
                    hybrids.append(h)
            pools = [list(old_sets[k]) if k != j - 1 else hybrids for k in range(n)]
            for prof in itertools.product(*pools):
                emp.ingest_batch(sampler(prof, family), prof)
                done.append(prof)
            family += 1
    combo = tuple(new_brs[k] if new_brs[k] is not None else None for k in range(n))
    if all(b is not None for b in combo):
        emp.ingest_batch(sampler(combo, family), combo)
        done.append(combo)
    return done


def run_repetition(config: PsroConfig, rep: int, game: GameTree | None = None) -> tuple[list[IterationRecord], RepetitionSummary]:
    """Run one PSRO repetition with its own game instance and random streams."""
    t0 = time.perf_counter()
    tree = instance_for(config, rep, game)
    n = tree.players
    K = total_chance_events(tree) if config.obs_events is None else config.obs_events
    sim = Simulator(tree, ObservationModel(K), config.noise_variance)
    emp = EmpiricalGame(ModelStructure(tree, K))
    oracle = TrueGameOracle(tree)
    init_rng = stream(config.seed, TAG_INIT, rep)
    sets: list[list[tuple[int, ...]]] = [[canonical_pure(tree, j, random_pure(tree, j, init_rng))] for j in range(1, n + 1)]
    shadow = "nf" if config.model == "te" else "te"
    simulated: set[PureProfile] = set()
    sims = 0

    def sample(prof: PureProfile, family: int = -1):
        rng = stream(config.seed, TAG_PROFILE, rep, family + 1, *hash_key(prof))
        return sim.sample(StrategyProfile.from_pure(tree, prof), config.samples, rng)

    def simulate_new():
        nonlocal sims
        for prof in itertools.product(*sets):
            if prof not in simulated:
                emp.ingest_batch(sample(prof), prof)
                simulated.add(prof)
                sims += config.samples

    records: list[IterationRecord] = []
    simulate_new()
    it = 0
    converged = False
    while True:
        est = estimate_tensor(emp, sets, config.model, config.on_missing)
        est_shadow = estimate_tensor(emp, sets, shadow, config.on_missing)
        true_t = oracle.tensor(sets)
        try:
            weights, gamma = solve_mss(RestrictedNormalForm(est), config.mss, config.cfr_iterations)
        except SolverError as exc:
            raise SolverError(f"iteration {it}: {exc}") from exc
        profile = lift(tree, sets, weights)
        per, total = regret(tree, profile)
        err = np.abs(est - true_t)
        records.append(IterationRecord(
            repetition=rep, iteration=it,
            estimation_error=float(err.mean()),
            shadow_error=float(np.abs(est_shadow - true_t).mean()),
            linf=float(err.max()),
            regret=float(total), player_regrets=tuple(float(x) for x in per),
            empirical_regret=gamma,
            set_sizes=tuple(len(s) for s in sets), simulations=sims,
            wall_time=time.perf_counter() - t0,
        ))
        if it >= config.max_iters:
            break
        new_brs: list[tuple[int, ...] | None] = []
        for j in range(1, n + 1):
            if config.br == "exact":
                br = best_response(tree, j, profile)
            else:
                opp = [(sets[k - 1], weights[k - 1]) if k != j else None for k in range(1, n + 1)]
                br = q_learning_br(sim, j, opp, config.qlearn, stream(config.seed, TAG_QLEARN, rep, it, j))
            br = canonical_pure(tree, j, br)
            new_brs.append(br if br not in sets[j - 1] else None)
        if all(b is None for b in new_brs):
            converged = True
            break
        old_sets = [list(s) for s in sets]
        for j, br in enumerate(new_brs):
            if br is not None:
                sets[j].append(br)
        simulate_new()
        if config.model == "te" and config.te_expansion == "families":
            full = [b if b is not None else None for b in new_brs]
            done = expand_te_model(emp, full, old_sets, config.samples, sample)
            sims += config.samples * len(done)
        it += 1

    last = records[-1]
    c_vals = tuple(sorted(emp.compute_c(leaf) for leaf in emp.leaves))
    shadow_err = np.abs(est_shadow - true_t)
    summary = RepetitionSummary(
        repetition=rep, converged=converged, iterations=last.iteration,
        linf=last.linf, shadow_linf=float(shadow_err.max()), gamma=last.empirical_regret,
        player_regrets=last.player_regrets, c_values=c_vals,
        n_profiles=int(np.prod([len(s) for s in sets])),
        bound_passed=regret_bound_check(last.linf, last.empirical_regret, last.player_regrets).passed,
    )
    return records, summary


def _worker(args):
    config, rep, game, keep_going = args
    if not keep_going:
        return run_repetition(config, rep, game)
    try:
        return run_repetition(config, rep, game)
    except Exception as exc:  # recorded in the summary; the run continues
        nan = float("nan")
        return [], RepetitionSummary(rep, False, 0, nan, nan, nan, (), (), 0, False, f"{type(exc).__name__}: {exc}")


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("TEGTA_THREADS", "1")))
    except ValueError:
        return 1


def run_psro(config: PsroConfig, game: GameTree | None = None, workers: int | None = None,
             keep_going: bool = False) -> RunMetrics:
    """Run every repetition of ``config`` and collect the metrics.

    ``game`` pins one fixed tree for all repetitions instead of generating
    a fresh instance per repetition. Repetitions run in a process pool of
    size ``workers`` (default: the ``TEGTA_THREADS`` environment variable).
    With ``keep_going`` a failing repetition contributes no records and a
    summary carrying the error message instead of aborting the run.
    """
    workers = worker_count() if workers is None else workers
    jobs = [(config, rep, game, keep_going) for rep in range(config.repetitions)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    records = [r for recs, _ in results for r in recs]
    records.sort(key=lambda r: (r.repetition, r.iteration))
    return RunMetrics(config, records, [s for _, s in results])

