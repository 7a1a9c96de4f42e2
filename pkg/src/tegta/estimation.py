"""Normal-form and tree-exploiting payoff estimation from simulation traces.

The tree-exploiting model cuts every play at the revealed chance events.
Between two revealed events (a *segment*), each player's contribution is
summarised by a model action: the player's choices at the infosets that
can occur in that segment, given the revealed outcomes so far and the
player's own earlier choices. A model path alternates model actions and
revealed outcomes::

    (actions_0, e_1, actions_1, e_2, ..., actions_K)

Paths that share a prefix share the chance node at its end, so outcome
frequencies are pooled across every strategy profile that reaches it.
Leaves are full paths; hidden chance events are averaged into the leaf
means. The estimate of a pure profile walks its own model paths and
weighs leaf means by the empirical outcome ratios ``m_he / m_h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .game_tree import GameTree, consistent_infosets
from .games import ObservationModel, SimulationTrace, TraceBatch

Pure = tuple[int, ...]
PureProfile = tuple[Pure, ...]


class InsufficientDataError(LookupError):
    """The requested profile reaches a part of the model that was never simulated."""


def _as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (Decimal, int, str)):
        return Fraction(x)
    return Fraction(Decimal(repr(float(x))))


def nf_estimate(samples, player: int | None = None):
    """Mean of the payoff samples of one profile.

    ``samples`` is a sequence of payoff scalars or payoff vectors. Decimal
    or Fraction inputs give an exact Fraction result.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no samples")
    first = samples[0]
    exact = isinstance(first, (Decimal, Fraction)) or (
        isinstance(first, (tuple, list)) and first and isinstance(first[0], (Decimal, Fraction)))
    if exact:
        if isinstance(first, (tuple, list)):
            cols = list(zip(*samples))
            means = [sum(map(_as_fraction, col), Fraction(0)) / len(col) for col in cols]
            return means if player is None else means[player - 1]
        return sum(map(_as_fraction, samples), Fraction(0)) / len(samples)
    arr = np.asarray(samples, dtype=float)
    if arr.ndim == 1:
        return math.fsum(arr) / len(arr)
    means = np.array([math.fsum(col) for col in arr.T]) / len(arr)
    return means if player is None else float(means[player - 1])


class LeafStats:
    """Running count and compensated per-player payoff sums."""

    __slots__ = ("count", "total", "comp", "exact")

    def __init__(self, players: int, exact: bool = False):
        self.count = 0
        self.exact = exact
        if exact:
            self.total = [Fraction(0)] * players
            self.comp = None
        else:
            self.total = np.zeros(players)
            self.comp = np.zeros(players)

    def add(self, payoffs) -> None:
        """Add a block of payoff vectors, shape (k, players)."""
        if self.exact:
            for row in payoffs:
                self.total = [t + _as_fraction(x) for t, x in zip(self.total, row)]
                self.count += 1
            return
        block = np.asarray(payoffs, dtype=float)
        if block.ndim == 1:
            block = block[None, :]
        s = block.sum(axis=0)
        t = self.total + s
        big = np.abs(self.total) >= np.abs(s)
        self.comp += np.where(big, (self.total - t) + s, (s - t) + self.total)
        self.total = t
        self.count += len(block)

    def merge(self, other: "LeafStats") -> None:
        if self.exact:
            self.total = [a + b for a, b in zip(self.total, other.total)]
            self.count += other.count
            return
        self.add_sum(other.total + other.comp, other.count)

    def add_sum(self, s: np.ndarray, count: int) -> None:
        t = self.total + s
        big = np.abs(self.total) >= np.abs(s)
        self.comp += np.where(big, (self.total - t) + s, (s - t) + self.total)
        self.total = t
        self.count += count

    def mean(self):
        if self.count == 0:
            raise InsufficientDataError("no samples")
        if self.exact:
            return [t / self.count for t in self.total]
        return (self.total + self.comp) / self.count


class ModelStructure:
    """Segment layout of a true game under a revealed-prefix observation model.

    This is the abstraction level of a tree-exploiting model: it fixes
    which chance events the model conditions on (the first ``events`` on
    every path) and marginalises the rest.
    """

    def __init__(self, tree: GameTree, events: int):
        self.tree = tree
        self.events = int(events)
        c = tree.c
        N = c.n_nodes
        seg = np.zeros(N, dtype=np.int64)
        prefix: list[tuple[str, ...]] = [()] * N
        for a, b in c.levels[1:]:
            for x in range(a, b):
                p = int(c.parent[x])
                if c.owner[p] == 0 and c.chance_pos[p] < self.events:
                    seg[x] = seg[p] + 1
                    prefix[x] = prefix[p] + (c.edge_label[x],)
                else:
                    seg[x] = seg[p]
                    prefix[x] = prefix[p]
        self.contexts: list[dict[tuple[int, tuple[str, ...]], np.ndarray]] = []
        for pi in c.players:
            table: dict[tuple[int, tuple[str, ...]], set[int]] = {}
            for x in pi.nodes:
                table.setdefault((int(seg[x]), prefix[x]), set()).add(int(c.node_infoset[x]))
            self.contexts.append({k: np.array(sorted(v), dtype=np.int64) for k, v in table.items()})
        self.root_player = int(c.owner[0])
        self._labels: list[dict[tuple, int]] = [{} for _ in c.players]
        self._label_list: list[list[tuple]] = [[] for _ in c.players]

    @classmethod
    def for_observation(cls, tree: GameTree, obs: ObservationModel) -> "ModelStructure":
        return cls(tree, obs.events)

    def label(self, j: int, pure: Pure, cons: np.ndarray, k: int, revealed: tuple[str, ...]) -> int:
        """Interned model action of player ``j`` in segment ``k`` after ``revealed``."""
        infs = self.contexts[j - 1].get((k, revealed))
        if infs is None or not len(infs):
            key: tuple = ()
        else:
            key = tuple((int(i), int(pure[i])) for i in infs if cons[i])
        table = self._labels[j - 1]
        lid = table.get(key)
        if lid is None:
            lid = len(self._label_list[j - 1])
            table[key] = lid
            self._label_list[j - 1].append(key)
        return lid

    def describe_label(self, j: int, lid: int) -> tuple[tuple[str, str], ...]:
        pi = self.tree.player(j)
        return tuple((pi.infosets[i], pi.actions[i][a]) for i, a in self._label_list[j - 1][lid])

    def infoset_groups(self, j: int) -> set[frozenset[str]]:
        """Model infosets of player ``j`` as sets of true infoset ids.

        Within one context, true infosets that share the same own-history
        parent form one model decision point.
        """
        pi = self.tree.player(j)
        groups: set[frozenset[str]] = set()
        for infs in self.contexts[j - 1].values():
            by_parent: dict[tuple[int, int], set[str]] = {}
            for i in infs:
                by_parent.setdefault(tuple(int(v) for v in pi.parent[i]), set()).add(pi.infosets[i])
            groups.update(frozenset(g) for g in by_parent.values())
        return groups


@dataclass(frozen=True)
class RestrictedMixture:
    """A mixed profile over restricted pure strategies."""

    strategies: tuple[tuple[Pure, ...], ...]
    weights: tuple[np.ndarray, ...]

    def pure_profiles(self, tol: float = 0.0):
        """Yield (pure profile, probability) over the support."""
        idx = [np.flatnonzero(w > tol) for w in self.weights]

        def rec(j, prof, p):
            if j == len(idx):
                yield tuple(prof), p
                return
            for i in idx[j]:
                yield from rec(j + 1, prof + [self.strategies[j][i]], p * float(self.weights[j][i]))

        yield from rec(0, [], 1.0)


class EmpiricalGame:
    """Empirical game holding both normal-form and tree-exploiting statistics.

    Traces are ingested per pure profile. Normal-form statistics are kept
    per profile; tree-exploiting statistics (when a model structure is
    given) are kept per model path.
    """

    def __init__(self, structure: ModelStructure | None, players: int | None = None, exact: bool = False):
        self.structure = structure
        if players is None:
            if structure is None:
                raise ValueError("players is required without a model structure")
            players = structure.tree.players
        self.players = players
        self.exact = exact
        self.strategies: list[list[Pure]] = [[] for _ in range(players)]
        self._sid: list[dict[Pure, int]] = [{} for _ in range(players)]
        self._cons: list[list[np.ndarray]] = [[] for _ in range(players)]
        self.nf: dict[tuple[int, ...], LeafStats] = {}
        self.nf_samples: dict[tuple[int, ...], list] = {}
        self.leaves: dict[tuple, LeafStats] = {}
        self.chance: dict[tuple, dict[str, int]] = {}
        self.visits: dict[tuple, int] = {}
        self.first_edge_profiles: dict[tuple, set[tuple[int, ...]]] = {}
        self._path_cache: dict[tuple, tuple] = {}
        self._estimate_cache: dict[tuple, object] = {}
        self.frozen = False

    # strategy bookkeeping -------------------------------------------------

    def add_strategy(self, j: int, pure: Sequence[int]) -> int:
        pure = tuple(int(a) for a in pure)
        sid = self._sid[j - 1].get(pure)
        if sid is None:
            sid = len(self.strategies[j - 1])
            self._sid[j - 1][pure] = sid
            self.strategies[j - 1].append(pure)
            if self.structure is not None:
                self._cons[j - 1].append(consistent_infosets(self.structure.tree, j, np.array([pure]))[0])
        return sid

    def profile_key(self, profile: PureProfile) -> tuple[int, ...]:
        if len(profile) != self.players:
            raise ValueError(f"profile has {len(profile)} players, expected {self.players}")
        return tuple(self.add_strategy(j, p) for j, p in enumerate(profile, start=1))

    # ingestion ------------------------------------------------------------

    def _path(self, key: tuple[int, ...], revealed: tuple[str, ...]) -> tuple:
        ck = (key, revealed)
        path = self._path_cache.get(ck)
        if path is None:
            st = self.structure
            parts: list = []
            for k in range(len(revealed) + 1):
                parts.append(tuple(
                    st.label(j, self.strategies[j - 1][key[j - 1]], self._cons[j - 1][key[j - 1]], k, revealed[:k])
                    for j in range(1, self.players + 1)))
                if k < len(revealed):
                    parts.append(revealed[k])
            path = tuple(parts)
            self._path_cache[ck] = path
        return path

    def _first_edge(self, path: tuple) -> tuple:
        st = self.structure
        if st.root_player >= 1:
            return ("act", st.root_player, path[0][st.root_player - 1])
        if len(path) > 1:
            return ("obs", path[0], path[1])
        return ("root",)

    def _check_writable(self):
        if self.frozen:
            raise RuntimeError("empirical game is frozen")
        self._estimate_cache.clear()

    def ingest(self, trace: SimulationTrace, profile: PureProfile) -> None:
        """Add one trace of ``profile`` to both the normal-form and tree models."""
        self._check_writable()
        key = self.profile_key(profile)
        row = [list(trace.payoffs)]
        self._nf_add(key, row)
        if self.structure is not None:
            self._te_add(key, trace.labels, row)

    def ingest_batch(self, batch: TraceBatch, profile: PureProfile) -> None:
        """Add a batch of traces of ``profile``."""
        self._check_writable()
        key = self.profile_key(profile)
        self._nf_add(key, batch.payoffs)
        if self.structure is None:
            return
        if batch.table.obs.events != self.structure.events:
            raise ValueError("batch observation model differs from the model structure")
        uniq, inv = np.unique(batch.prefix, return_inverse=True)
        for g, pid in enumerate(uniq):
            rows = batch.payoffs[inv == g]
            self._te_add(key, batch.table.prefixes[int(pid)], rows)

    def _nf_add(self, key, rows) -> None:
        stats = self.nf.get(key)
        if stats is None:
            stats = self.nf[key] = LeafStats(self.players, self.exact)
            self.nf_samples[key] = []
        stats.add(rows)
        self.nf_samples[key].append(rows if self.exact else np.asarray(rows, dtype=float))

    def _te_add(self, key, revealed: tuple[str, ...], rows) -> None:
        st = self.structure
        if len(revealed) > st.events:
            raise ValueError(f"trace reveals {len(revealed)} events, model conditions on {st.events}")
        path = self._path(key, tuple(revealed))
        count = len(rows)
        for k in range(len(revealed)):
            node = path[:2 * k + 1]
            counts = self.chance.get(node)
            if counts is None:
                counts = self.chance[node] = {}
                self.visits[node] = 0
            counts[revealed[k]] = counts.get(revealed[k], 0) + count
            self.visits[node] += count
        stats = self.leaves.get(path)
        if stats is None:
            stats = self.leaves[path] = LeafStats(self.players, self.exact)
        stats.add(rows)
        self.first_edge_profiles.setdefault(self._first_edge(path), set()).add(key)

    def merge(self, other: "EmpiricalGame") -> None:
        """Add another model's counts and sums (same structure and strategy ids)."""
        self._check_writable()
        if other.structure is not self.structure:
            # model paths hold label ids interned by the structure object
            raise ValueError("empirical games must share one model structure to merge")
        for j in range(self.players):
            if other.strategies[j][:len(self.strategies[j])] != self.strategies[j][:len(other.strategies[j])]:
                raise ValueError("strategy ids differ between empirical games")
            for p in other.strategies[j][len(self.strategies[j]):]:
                self.add_strategy(j + 1, p)
        for key, s in other.nf.items():
            mine = self.nf.setdefault(key, LeafStats(self.players, self.exact))
            self.nf_samples.setdefault(key, []).extend(other.nf_samples[key])
            mine.merge(s)
        for path, s in other.leaves.items():
            self.leaves.setdefault(path, LeafStats(self.players, self.exact)).merge(s)
        for node, counts in other.chance.items():
            mine = self.chance.setdefault(node, {})
            for e, m in counts.items():
                mine[e] = mine.get(e, 0) + m
            self.visits[node] = self.visits.get(node, 0) + other.visits[node]
        for edge, profs in other.first_edge_profiles.items():
            self.first_edge_profiles.setdefault(edge, set()).update(profs)

    def freeze(self) -> "EmpiricalGame":
        self.frozen = True
        return self

    # estimates ------------------------------------------------------------

    def samples(self, profile: PureProfile):
        key = self.profile_key(profile)
        chunks = self.nf_samples.get(key)
        if not chunks:
            raise InsufficientDataError(f"profile {profile} was never simulated")
        if self.exact:
            return [row for ch in chunks for row in ch]
        return np.concatenate(chunks, axis=0)

    def nf_estimate(self, profile: PureProfile):
        key = self.profile_key(profile)
        stats = self.nf.get(key)
        if stats is None:
            raise InsufficientDataError(f"profile {profile} was never simulated")
        return stats.mean()

    def te_estimate(self, profile: PureProfile | RestrictedMixture, on_missing: str = "raise"):
        """Tree-exploiting payoff estimate of a pure profile or restricted mixture.

        ``on_missing="raise"`` signals unsimulated model regions; with
        ``"renormalize"`` chance ratios are renormalised over the outcomes
        whose continuation has data for this profile.
        """
        if self.structure is None:
            raise ValueError("no model structure; tree-exploiting estimates unavailable")
        if on_missing not in ("raise", "renormalize"):
            raise ValueError("on_missing must be 'raise' or 'renormalize'")
        if isinstance(profile, RestrictedMixture):
            total = None
            for pure, p in profile.pure_profiles():
                v = np.asarray(self.te_estimate(pure, on_missing), dtype=object if self.exact else float)
                total = v * p if total is None else total + v * p
            return total
        key = self.profile_key(profile)
        ck = (key, on_missing)
        if ck not in self._estimate_cache:
            val = self._walk(key, 0, (), (), on_missing)
            if val is None:
                raise InsufficientDataError(f"no data for profile {profile}")
            self._estimate_cache[ck] = val
        return self._estimate_cache[ck]

    def _walk(self, key, k: int, revealed: tuple, prefix: tuple, on_missing: str):
        st = self.structure
        label = tuple(
            st.label(j, self.strategies[j - 1][key[j - 1]], self._cons[j - 1][key[j - 1]], k, revealed)
            for j in range(1, self.players + 1))
        node = prefix + (label,)
        leaf = self.leaves.get(node)
        counts = self.chance.get(node)
        if leaf is not None and counts is not None:
            raise InsufficientDataError(f"model node {node} is both a leaf and a chance node")
        if leaf is not None:
            m = leaf.mean()
            return m if self.exact else np.asarray(m, dtype=float)
        if counts is None:
            if on_missing == "raise":
                raise InsufficientDataError(f"missing leaf {self.describe_path(node)}")
            return None
        m_h = self.visits[node]
        acc = None
        mass = 0
        skipped = False
        for e in sorted(counts):
            ratio = Fraction(counts[e], m_h) if self.exact else counts[e] / m_h
            sub = self._walk(key, k + 1, revealed + (e,), node + (e,), on_missing)
            if sub is None:
                skipped = True
                continue
            part = [ratio * x for x in sub] if self.exact else ratio * sub
            acc = part if acc is None else ([a + b for a, b in zip(acc, part)] if self.exact else acc + part)
            mass += ratio
        if acc is None:
            return None
        if skipped:
            acc = [a / mass for a in acc] if self.exact else acc / mass
        return acc

    def describe_path(self, path: tuple) -> str:
        st = self.structure
        parts = []
        for i, item in enumerate(path):
            if i % 2 == 1:
                parts.append(item)
            else:
                acts = [f"P{j}{list(st.describe_label(j, lid))}" for j, lid in enumerate(item, start=1) if st._label_list[j - 1][lid]]
                parts.append("[" + " ".join(acts) + "]")
        return " ".join(parts)

    def chance_ratio(self, node: tuple, outcome: str) -> float:
        return self.chance[node].get(outcome, 0) / self.visits[node]

    def compute_c(self, leaf: tuple) -> int:
        """Number of simulated profiles whose paths used the first edge of ``leaf``'s path."""
        if leaf not in self.leaves:
            raise KeyError(f"unknown leaf {leaf!r}")
        return len(self.first_edge_profiles[self._first_edge(leaf)])

    def simulated_profiles(self) -> list[tuple[int, ...]]:
        return sorted(self.nf)


def te_ingest(trace: SimulationTrace, profile: PureProfile, game: EmpiricalGame) -> EmpiricalGame:
    game.ingest(trace, profile)
    return game


def te_estimate(game: EmpiricalGame, profile, player: int | None = None, on_missing: str = "raise"):
    v = game.te_estimate(profile, on_missing)
    return v if player is None else v[player - 1]


def true_payoff(tree: GameTree, profile: PureProfile) -> np.ndarray:
    from .game_tree import StrategyProfile, expected_payoff
    return expected_payoff(tree, StrategyProfile.from_pure(tree, profile))


def estimation_error(true_tree: GameTree, estimator: Callable[[PureProfile], Sequence[float]],
                     profiles: Iterable[PureProfile]) -> float:
    """Mean absolute payoff error over players and profiles."""
    errs = []
    for prof in profiles:
        errs.append(np.abs(true_payoff(true_tree, prof) - np.asarray(estimator(prof), dtype=float)))
    if not errs:
        raise ValueError("empty profile set")
    return float(np.mean(errs))
