"""Meta-strategy solvers and best-response oracles.

* :func:`nash_support_enumeration` finds equilibria of two-player
  restricted games by enumerating support pairs.
* :func:`cfr` runs vanilla counterfactual regret minimisation on a game
  tree; :func:`regret_matching` is the same dynamics specialised to a
  two-player payoff matrix.
* :func:`uniform_mss` mixes every restricted strategy equally.
* :func:`q_learning_br` learns a best response from simulated episodes.
"""

from __future__ import annotations

import bisect
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .game_tree import GameTree, StrategyProfile, edge_probabilities, node_values, regret
from .games import Simulator, TreeBuilder


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class RestrictedNormalForm:
    """Payoff tensor over restricted pure strategies.

    ``payoffs`` has shape ``(k_1, ..., k_n, n)``.
    """

    payoffs: np.ndarray
    strategies: tuple[tuple, ...] | None = None

    def __post_init__(self):
        p = np.asarray(self.payoffs, dtype=float)
        if p.ndim < 2 or p.shape[-1] != p.ndim - 1:
            raise ValueError(f"payoff tensor shape {p.shape} is not (k_1, ..., k_n, n)")
        if not np.all(np.isfinite(p)):
            raise ValueError("payoff tensor has missing or non-finite entries")
        object.__setattr__(self, "payoffs", p)

    @property
    def players(self) -> int:
        return self.payoffs.ndim - 1

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.payoffs.shape[:-1]

    @classmethod
    def bimatrix(cls, A, B) -> "RestrictedNormalForm":
        return cls(np.stack([np.asarray(A, float), np.asarray(B, float)], axis=-1))

    def expected(self, weights: Sequence[np.ndarray]) -> np.ndarray:
        t = self.payoffs
        for w in weights:
            t = np.tensordot(np.asarray(w, float), t, axes=(0, 0))
        return t

    def deviation_values(self, weights: Sequence[np.ndarray], j: int) -> np.ndarray:
        """Player ``j``'s payoff for each of its pure strategies against the others' mixtures."""
        t = np.moveaxis(self.payoffs[..., j - 1], j - 1, 0)
        for k, w in enumerate(weights, start=1):
            if k != j:
                t = np.tensordot(t, np.asarray(w, float), axes=(1, 0))
        return t

    def regrets(self, weights: Sequence[np.ndarray]) -> np.ndarray:
        base = self.expected(weights)
        return np.array([max(0.0, self.deviation_values(weights, j).max() - base[j - 1])
                         for j in range(1, self.players + 1)])

    def to_tree(self) -> GameTree:
        """The restricted game as a tree where no player sees earlier moves."""
        n = self.players
        b = TreeBuilder(n)
        root = b.decision(1, "1:", [f"s{i}" for i in range(self.sizes[0])])
        frontier = [(root, ())]
        for j in range(1, n + 1):
            nxt = []
            for h, idx in frontier:
                for i in range(self.sizes[j - 1]):
                    if j < n:
                        c = b.decision(j + 1, f"{j + 1}:", [f"s{x}" for x in range(self.sizes[j])])
                    else:
                        c = b.terminal(self.payoffs[idx + (i,)])
                    b.link(h, f"s{i}", c)
                    nxt.append((c, idx + (i,)))
            frontier = nxt
        return b.build()


@dataclass(frozen=True)
class Equilibrium:
    weights: tuple[np.ndarray, ...]
    supports: tuple[tuple[int, ...], ...]
    payoffs: np.ndarray

    @property
    def welfare(self) -> float:
        return float(self.payoffs.sum())

    @property
    def size(self) -> int:
        return sum(len(s) for s in self.supports)


def _indifference_square(M: np.ndarray) -> np.ndarray | None:
    """Mixture over columns making every row of ``M`` equal; None if singular."""
    k = M.shape[0]
    sys = np.zeros((k + 1, k + 1))
    sys[:k, :k] = M
    sys[:k, k] = -1.0
    sys[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(sys, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)) or np.abs(sys @ sol - rhs).max() > 1e-9 or np.abs(sol[:k]).max() > 1e9:
        return None
    return sol[:k]


def _solvable(M: np.ndarray, tol: float) -> bool:
    """Whether some column weights summing to one make every row of ``M`` equal."""
    k, l = M.shape
    sys = np.zeros((k + 1, l + 1))
    sys[:k, :l] = M
    sys[:k, l] = -1.0
    sys[k, :l] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(sys, rhs, rcond=None)[0]
    return bool(np.abs(sys @ sol - rhs).max() <= max(tol, 1e-9))


def _indifference_lp(payoff: np.ndarray, rows: Sequence[int], cols: Sequence[int], tol: float) -> np.ndarray | None:
    """Column mixture on ``cols`` making ``rows`` best responses in ``payoff``; LP feasibility."""
    n_rows = payoff.shape[0]
    k = len(cols)
    # variables: y (k), v
    c = np.zeros(k + 1)
    others = [r for r in range(n_rows) if r not in rows]
    A_eq = np.zeros((len(rows) + 1, k + 1))
    A_eq[:len(rows), :k] = payoff[np.ix_(rows, cols)]
    A_eq[:len(rows), k] = -1.0
    A_eq[-1, :k] = 1.0
    b_eq = np.zeros(len(rows) + 1)
    b_eq[-1] = 1.0
    A_ub = b_ub = None
    if others:
        A_ub = np.zeros((len(others), k + 1))
        A_ub[:, :k] = payoff[np.ix_(others, cols)]
        A_ub[:, k] = -1.0
        b_ub = np.zeros(len(others))
    bounds = [(0, None)] * k + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        return None
    return res.x[:k]


def _clean(w: np.ndarray, tol: float) -> np.ndarray | None:
    if np.any(w < -tol):
        return None
    w = np.clip(w, 0.0, None)
    s = w.sum()
    if s <= 0:
        return None
    return w / s


def nash_support_enumeration(rnf: RestrictedNormalForm, all_equilibria: bool = False,
                             max_pairs: int = 2_000_000, tol: float = 1e-10) -> list[Equilibrium]:
    """Nash equilibria of a two-player restricted game by support enumeration.

    Support pairs are visited by increasing total size, then by size
    difference. Unless ``all_equilibria`` is set, the search stops after the
    first size class that contains an equilibrium. The result is sorted by
    the selection rule: smallest total support, then lexicographically
    smallest supports, then highest welfare.
    """
    if rnf.players != 2:
        raise SolverError("support enumeration needs exactly two players")
    A = rnf.payoffs[..., 0]
    B = rnf.payoffs[..., 1]
    m, n = A.shape
    scale = max(1.0, float(np.abs(rnf.payoffs).max()))
    eps = tol * scale
    found: list[Equilibrium] = []
    seen: set[tuple] = set()
    pairs = 0
    for total in range(2, m + n + 1):
        sizes = sorted(((k, total - k) for k in range(1, m + 1) if 1 <= total - k <= n),
                       key=lambda kl: (abs(kl[0] - kl[1]), kl))
        for k, l in sizes:
            for S1 in itertools.combinations(range(m), k):
                for S2 in itertools.combinations(range(n), l):
                    pairs += 1
                    if pairs > max_pairs:
                        raise SolverError(f"support enumeration exceeded {max_pairs} support pairs")
                    eq = _try_support(A, B, S1, S2, eps)
                    if eq is not None:
                        key = tuple(np.round(np.concatenate(eq.weights), 9))
                        if key not in seen:
                            seen.add(key)
                            found.append(eq)
        if found and not all_equilibria:
            break
    if not found:
        raise SolverError("no equilibrium found")
    found.sort(key=lambda e: (e.size, e.supports, -round(e.welfare, 9)))
    return found


def _try_support(A, B, S1, S2, eps) -> Equilibrium | None:
    m, n = A.shape
    k, l = len(S1), len(S2)
    if k == 1 and l == 1:
        i, j = S1[0], S2[0]
        if A[i, j] >= A[:, j].max() - eps and B[i, j] >= B[i, :].max() - eps:
            x = np.zeros(m)
            y = np.zeros(n)
            x[i] = y[j] = 1.0
            return Equilibrium((x, y), (S1, S2), np.array([A[i, j], B[i, j]]))
        return None
    y_s = x_s = None
    if k == l:
        y_s = _indifference_square(A[np.ix_(S1, S2)])
        x_s = _indifference_square(B[np.ix_(S1, S2)].T)
        if y_s is not None and x_s is not None:
            # nonsingular systems have a unique solution; negative weights rule the pair out
            y_s = _clean(y_s, eps)
            x_s = _clean(x_s, eps)
            if y_s is None or x_s is None:
                return None
        else:
            y_s = x_s = None
    if y_s is None:
        # with unequal supports one side is overdetermined; rule it out cheaply first
        if k > l and not _solvable(A[np.ix_(S1, S2)], eps):
            return None
        if l > k and not _solvable(B[np.ix_(S1, S2)].T, eps):
            return None
        y_s = _indifference_lp(A, list(S1), list(S2), eps)
        if y_s is None:
            return None
        x_s = _indifference_lp(B.T, list(S2), list(S1), eps)
        if x_s is None:
            return None
        y_s = _clean(y_s, eps)
        x_s = _clean(x_s, eps)
        if y_s is None or x_s is None:
            return None
    x = np.zeros(m)
    y = np.zeros(n)
    x[list(S1)] = x_s
    y[list(S2)] = y_s
    # supports must be exactly the positive entries, and no profitable deviations
    if np.any(x_s <= eps) or np.any(y_s <= eps):
        return None
    u1 = A @ y
    u2 = x @ B
    v1 = float(x @ u1)
    v2 = float(u2 @ y)
    if u1.max() > v1 + 10 * eps or u2.max() > v2 + 10 * eps:
        return None
    return Equilibrium((x, y), (S1, S2), np.array([v1, v2]))


def _lex_min_row(T: np.ndarray, enter: int, slack_cols: Sequence[int], tol: float = 1e-12) -> int:
    """Leaving row of a pivot by the lexicographic minimum ratio rule."""
    col = T[:, enter]
    rows = np.flatnonzero(col > tol)
    if len(rows) == 0:
        raise SolverError("unbounded pivot in Lemke-Howson")
    for c in [T.shape[1] - 1, *slack_cols]:
        ratios = T[rows, c] / col[rows]
        best = ratios.min()
        rows = rows[ratios <= best + tol * max(1.0, abs(best))]
        if len(rows) == 1:
            break
    return int(rows[0])


def lemke_howson(rnf: RestrictedNormalForm, label: int = 0, max_pivots: int = 10_000) -> Equilibrium:
    """One Nash equilibrium of a bimatrix game by complementary pivoting.

    ``label`` (0..m+n-1) is the initially dropped label. The lexicographic
    ratio rule keeps the path well defined in degenerate games.
    """
    if rnf.players != 2:
        raise SolverError("Lemke-Howson needs exactly two players")
    A = rnf.payoffs[..., 0]
    B = rnf.payoffs[..., 1]
    m, n = A.shape
    if not 0 <= label < m + n:
        raise ValueError(f"label must lie in 0..{m + n - 1}")
    A1 = A - A.min() + 1.0
    B1 = B - B.min() + 1.0
    # variables are indexed by label: 0..m-1 player-1 strategies, m..m+n-1 player-2 strategies
    TP = np.zeros((n, m + n + 1))  # B1^T x + s = 1, slacks carry labels m..m+n-1
    TP[:, :m] = B1.T
    TP[:, m:m + n] = np.eye(n)
    TP[:, -1] = 1.0
    TQ = np.zeros((m, m + n + 1))  # r + A1 y = 1, slacks carry labels 0..m-1
    TQ[:, :m] = np.eye(m)
    TQ[:, m:m + n] = A1
    TQ[:, -1] = 1.0
    basis = {"P": list(range(m, m + n)), "Q": list(range(m))}
    tabs = {"P": TP, "Q": TQ}
    slacks = {"P": list(range(m, m + n)), "Q": list(range(m))}
    enter = label
    side = "P" if label < m else "Q"
    for _ in range(max_pivots):
        T = tabs[side]
        row = _lex_min_row(T, enter, slacks[side])
        T[row] /= T[row, enter]
        others = np.arange(T.shape[0]) != row
        T[others] -= np.outer(T[others, enter], T[row])
        leaving = basis[side][row]
        basis[side][row] = enter
        if leaving == label:
            break
        enter = leaving
        side = "Q" if side == "P" else "P"
    else:
        raise SolverError("Lemke-Howson exceeded the pivot limit")
    x = np.zeros(m)
    y = np.zeros(n)
    for r, lab in enumerate(basis["P"]):
        if lab < m:
            x[lab] = TP[r, -1]
    for r, lab in enumerate(basis["Q"]):
        if lab >= m:
            y[lab - m] = TQ[r, -1]
    if x.sum() <= 0 or y.sum() <= 0:
        raise SolverError("Lemke-Howson ended at the artificial equilibrium")
    x = np.clip(x, 0.0, None) / x.sum()
    y = np.clip(y, 0.0, None) / y.sum()
    supports = (tuple(np.flatnonzero(x > 0).tolist()), tuple(np.flatnonzero(y > 0).tolist()))
    return Equilibrium((x, y), supports, np.array([x @ A @ y, x @ B @ y]))


def nash_equilibrium(rnf: RestrictedNormalForm, max_pairs: int = 5000, tol: float = 1e-9) -> Equilibrium:
    """Selected equilibrium of a two-player game.

    Support enumeration with the usual selection rule runs first; when it
    would need more than ``max_pairs`` support pairs, Lemke-Howson paths
    from each starting label are tried in order and the first verified
    equilibrium is returned.
    """
    try:
        return nash_support_enumeration(rnf, max_pairs=max_pairs)[0]
    except SolverError as exc:
        if "exceeded" not in str(exc):
            raise
    m, n = rnf.payoffs.shape[:2]
    scale = max(1.0, float(np.abs(rnf.payoffs).max()))
    for label in range(m + n):
        try:
            eq = lemke_howson(rnf, label)
        except SolverError:
            continue
        if rnf.regrets(eq.weights).max() <= tol * scale:
            return eq
    raise SolverError("no equilibrium found by support enumeration or Lemke-Howson")


def uniform_mss(rnf_or_sizes) -> tuple[np.ndarray, ...]:
    """Uniform mixture over each player's restricted strategies."""
    sizes = rnf_or_sizes.sizes if isinstance(rnf_or_sizes, RestrictedNormalForm) else tuple(rnf_or_sizes)
    if any(k < 1 for k in sizes):
        raise ValueError("empty restricted strategy set")
    return tuple(np.full(k, 1.0 / k) for k in sizes)


@dataclass
class CfrResult:
    profile: StrategyProfile
    exploitability: np.ndarray
    iterations: int


def _regret_matching(reg: np.ndarray, offsets: np.ndarray, n_actions: np.ndarray) -> np.ndarray:
    pos = np.maximum(reg, 0.0)
    sums = np.add.reduceat(pos, offsets[:-1]) if len(pos) else pos
    rep = np.repeat(sums, n_actions)
    uniform = np.repeat(1.0 / n_actions, n_actions)
    return np.where(rep > 0, pos / np.where(rep > 0, rep, 1.0), uniform)


def cfr(tree: GameTree, iterations: int) -> CfrResult:
    """Vanilla counterfactual regret minimisation with simultaneous updates.

    Returns the average strategy and each player's regret against it in
    ``tree`` (its exploitability there).
    """
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    c = tree.c
    n = tree.players
    pis = c.players
    reg = [np.zeros(pi.n_flat) for pi in pis]
    ssum = [np.zeros(pi.n_flat) for pi in pis]
    edge_parent = [c.parent[pi.edges] for pi in pis]
    edge_flat = [c.edge_flat[pi.edges] for pi in pis]
    others = [[k for k in range(n + 1) if k != pi.player] for pi in pis]
    owner_col = np.where(c.owner >= 0, c.owner, 0)
    R = np.ones((c.n_nodes, n + 1))
    for _ in range(iterations):
        sigma = StrategyProfile(tuple(_regret_matching(reg[i], pi.offsets, pi.n_actions) for i, pi in enumerate(pis)))
        ep = edge_probabilities(tree, sigma)
        for a, b in c.levels[1:]:
            par = c.parent[a:b]
            R[a:b] = R[par]
            R[np.arange(a, b), owner_col[par]] *= ep[a:b]
        V = node_values(tree, sigma, ep)
        for i, pi in enumerate(pis):
            if not pi.n_flat:
                continue
            par = edge_parent[i]
            opp = R[par][:, others[i]].prod(axis=1)
            q = np.bincount(edge_flat[i], weights=opp * V[pi.edges, i], minlength=pi.n_flat)
            s = sigma.probs[i]
            vI = np.add.reduceat(s * q, pi.offsets[:-1])
            reg[i] += q - np.repeat(vI, pi.n_actions)
            ssum[i] += np.bincount(edge_flat[i], weights=R[par, pi.player] * ep[pi.edges], minlength=pi.n_flat)
    avg = StrategyProfile(tuple(_regret_matching(s, pi.offsets, pi.n_actions) for s, pi in zip(ssum, pis)))
    per, _ = regret(tree, avg)
    return CfrResult(avg, per, iterations)


def regret_matching(rnf: RestrictedNormalForm, iterations: int) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    """CFR on a two-player matrix game: simultaneous regret matching, averaged.

    Returns the average mixtures and their regrets in ``rnf``.
    """
    if iterations <= 0:
        raise ValueError("iterations must be positive")
    if rnf.players != 2:
        tree = rnf.to_tree()
        res = cfr(tree, iterations)
        w = tuple(res.profile.player(j)[: rnf.sizes[j - 1]] for j in range(1, rnf.players + 1))
        return w, rnf.regrets(w)
    A = rnf.payoffs[..., 0]
    B = rnf.payoffs[..., 1]
    m, n = A.shape
    r1 = np.zeros(m)
    r2 = np.zeros(n)
    s1 = np.zeros(m)
    s2 = np.zeros(n)
    for _ in range(iterations):
        p1 = np.maximum(r1, 0)
        x = p1 / p1.sum() if p1.sum() > 0 else np.full(m, 1.0 / m)
        p2 = np.maximum(r2, 0)
        y = p2 / p2.sum() if p2.sum() > 0 else np.full(n, 1.0 / n)
        u1 = A @ y
        u2 = x @ B
        r1 += u1 - x @ u1
        r2 += u2 - u2 @ y
        s1 += x
        s2 += y
    w = (s1 / s1.sum(), s2 / s2.sum())
    return w, rnf.regrets(w)


# Q-learning best response ----------------------------------------------------


@dataclass(frozen=True)
class QConfig:
    alpha: float = 0.1
    epsilon: float = 0.1
    episodes: int = 10_000
    discount: float = 1.0


class _PyTables:
    """Plain-list view of a compiled tree for fast episode walks."""

    def __init__(self, tree: GameTree):
        c = tree.c
        self.owner = c.owner.tolist()
        self.child_start = c.child_start.tolist()
        self.n_children = c.n_children.tolist()
        self.infoset = c.node_infoset.tolist()
        self.leaf = c.leaf_index.tolist()
        self.cum: dict[int, list[float]] = {}
        for x in np.flatnonzero(c.owner == 0):
            s, k = c.child_start[x], c.n_children[x]
            cum = np.cumsum(c.edge_chance[s:s + k])
            cum[-1] = 1.0 + 1e-12
            self.cum[int(x)] = cum.tolist()
        self.depth = int(c.depth.max())
        self.utilities = tree.leaf_utilities().tolist()


_TABLES: dict[int, tuple[GameTree, _PyTables]] = {}


def _py_tables(tree: GameTree) -> _PyTables:
    hit = _TABLES.get(id(tree))
    if hit is None or hit[0] is not tree:
        if len(_TABLES) > 8:
            _TABLES.clear()
        hit = (tree, _PyTables(tree))
        _TABLES[id(tree)] = hit
    return hit[1]


def q_learning_br(sim: Simulator, j: int, opponents, config: QConfig, rng: np.random.Generator) -> tuple[int, ...]:
    """Tabular epsilon-greedy Q-learning best response for player ``j``.

    ``opponents`` is a sequence with one entry per player (the entry for
    ``j`` is ignored): either a pure strategy tuple or a pair
    ``(strategies, weights)`` from which one pure strategy is drawn per
    episode. Only the final reward is nonzero, so each visited (infoset,
    action) moves towards the best next-infoset value, or the reward at
    the last decision. Infosets never visited keep action 0.
    """
    if config.episodes <= 0:
        raise ValueError("episode budget must be positive")
    tree = sim.tree
    t = _py_tables(tree)
    pi = tree.player(j)
    offsets = pi.offsets.tolist()
    flat_inf = pi.flat_infoset.tolist()
    n_act = pi.n_actions.tolist()
    Q = [0.0] * pi.n_flat
    visited = [False] * pi.n_infosets
    E = config.episodes
    n = tree.players
    draws = []
    for k in range(1, n + 1):
        if k == j:
            draws.append(None)
            continue
        o = opponents[k - 1]
        if isinstance(o, tuple) and o and isinstance(o[0], (int, np.integer)):
            draws.append([list(o)])
            continue
        strategies, weights = o
        w = np.asarray(weights, float)
        idx = rng.choice(len(strategies), size=E, p=w / w.sum())
        draws.append((strategies, idx.tolist()))
    slots = t.depth + 1
    U = rng.random((E, slots)).tolist()
    X = rng.random((E, slots)).tolist()
    noise = (rng.normal(0.0, sim.noise_sd, size=E) if sim.noise_sd > 0 else np.zeros(E)).tolist()
    alpha, eps, gamma = config.alpha, config.epsilon, config.discount
    owner, cs, nc, inf, cum = t.owner, t.child_start, t.n_children, t.infoset, t.cum
    for ep in range(E):
        strat = []
        for k in range(n):
            d = draws[k]
            if d is None:
                strat.append(None)
            elif len(d) == 1:
                strat.append(d[0])
            else:
                strat.append(d[0][d[1][ep]])
        u_row = U[ep]
        x_row = X[ep]
        x = 0
        step = 0
        trail = []
        while nc[x]:
            o = owner[x]
            if o == 0:
                i = bisect.bisect_right(cum[x], u_row[step])
            elif o == j:
                I = inf[x]
                off = offsets[I]
                na = n_act[I]
                if x_row[step] < eps:
                    i = min(int(u_row[step] * na), na - 1)
                else:
                    seg = Q[off:off + na]
                    i = seg.index(max(seg))
                trail.append(off + i)
                visited[I] = True
            else:
                i = strat[o - 1][inf[x]]
            x = cs[x] + i
            step += 1
        reward = t.utilities[t.leaf[x]][j - 1] + noise[ep]
        last = len(trail) - 1
        for s, f in enumerate(trail):
            if s < last:
                nf = trail[s + 1]
                I2 = flat_inf[nf]
                off = offsets[I2]
                target = gamma * max(Q[off:off + n_act[I2]])
            else:
                target = reward
            Q[f] += alpha * (target - Q[f])
    out = []
    for I in range(pi.n_infosets):
        if not visited[I]:
            out.append(0)
            continue
        seg = Q[offsets[I]:offsets[I] + n_act[I]]
        out.append(seg.index(max(seg)))
    return tuple(out)
