"""Benchmark game generators, small fixtures, and the black-box simulator.

The three benchmark families are random instances of fixed tree shapes:

* ``game1``: player 1 picks one of 10 actions, Nature draws A or B with an
  action-dependent probability, player 2 sees the outcome (not the action)
  and picks one of 10 actions.
* ``game2``: ``game1`` followed by a second event C/D whose probability
  depends on (first outcome, player 2 action), and a second player 1 turn
  that sees only its own first action and the second outcome.
* ``game3``: three rounds of (Nature, player 1, player 2) where every
  option, once used, is unavailable in later rounds. Within a round a
  player does not see the other's current action.

Generated nodes are laid out breadth first, which is also the compiled
order, so node ids and compiled positions coincide.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .game_tree import GameTree, Infoset, Node, StrategyProfile, leaf_distribution
from .rng import TAG_GAME, stream

GAME_IDS = ("game1", "game2", "game3")
OUTCOMES = "ABCD"


class TreeBuilder:
    """Incremental node list used by generators and fixtures."""

    def __init__(self, players: int):
        self.players = players
        self.player: list[int | None] = []
        self.infoset: list[str | None] = []
        self.utility: list[tuple[float, ...] | None] = []
        self.children: list[list[tuple[str, int]]] = []
        self.chance: dict[int, dict[str, float]] = {}
        self.info_nodes: dict[int, dict[str, list[int]]] = {}
        self.info_actions: dict[int, dict[str, tuple[str, ...]]] = {}

    def _new(self, player, infoset=None, utility=None) -> int:
        self.player.append(player)
        self.infoset.append(infoset)
        self.utility.append(utility)
        self.children.append([])
        return len(self.player) - 1

    def decision(self, player: int, infoset: str, actions: Sequence[str]) -> int:
        h = self._new(player, infoset)
        table = self.info_nodes.setdefault(player, {})
        table.setdefault(infoset, []).append(h)
        self.info_actions.setdefault(player, {})[infoset] = tuple(actions)
        return h

    def chance_node(self, dist: dict[str, float]) -> int:
        h = self._new(0)
        self.chance[h] = dict(dist)
        return h

    def terminal(self, utility: Sequence[float] | None = None) -> int:
        return self._new(None, utility=None if utility is None else tuple(float(u) for u in utility))

    def link(self, parent: int, label: str, child: int) -> None:
        self.children[parent].append((label, child))

    def build(self, require_payoffs: bool = True) -> GameTree:
        nodes = [
            Node(p, tuple(ch), iid, u)
            for p, iid, u, ch in zip(self.player, self.infoset, self.utility, self.children)
        ]
        infosets = {
            j: {iid: Infoset(j, iid, tuple(hs), self.info_actions[j][iid]) for iid, hs in table.items()}
            for j, table in self.info_nodes.items()
        }
        return GameTree(self.players, nodes, self.chance, infosets, 0, require_payoffs)


def _grid(rng: np.random.Generator, size, step: float, top: float) -> np.ndarray:
    k = int(round(top / step))
    return np.round(rng.integers(0, k + 1, size=size) * step, 10)


def _expand(b: TreeBuilder, frontier, make):
    """Create one level: ``make(state)`` yields (label, kind, args, child_state)."""
    nxt = []
    for h, state in frontier:
        for label, kind, args, cstate in make(state):
            c = getattr(b, kind)(*args)
            b.link(h, label, c)
            nxt.append((c, cstate))
    return nxt


def generate_game1(seed: int, n_actions: int = 10, step: float = 0.25, top: float = 5.0) -> GameTree:
    """Random instance of the one-event, two-player game (200 leaves by default)."""
    rng = stream(seed, TAG_GAME, 1)
    p_a = rng.uniform(size=n_actions)
    utils = _grid(rng, (n_actions * 2 * n_actions, 2), step, top)
    acts1 = [f"a{i}" for i in range(n_actions)]
    acts2 = [f"b{i}" for i in range(n_actions)]
    b = TreeBuilder(2)
    root = b.decision(1, "1:", acts1)
    level = _expand(b, [(root, None)], lambda _: [
        (a, "chance_node", ({"A": p_a[i], "B": 1 - p_a[i]},), i) for i, a in enumerate(acts1)])
    level = _expand(b, level, lambda i: [
        (e, "decision", (2, f"2:{e}", acts2), None) for e in "AB"])
    leaf = iter(utils)
    _expand(b, level, lambda _: [(a, "terminal", (next(leaf),), None) for a in acts2])
    return b.build()


def generate_game2(seed: int, n_actions: int = 10, step: float = 0.1, top: float = 10.0) -> GameTree:
    """Random instance of the two-event game: 21 player-1 infosets, 4000 leaves."""
    rng = stream(seed, TAG_GAME, 2)
    p_a = rng.uniform(size=n_actions)
    p_c = rng.uniform(size=(2, n_actions))  # indexed by (first outcome, player 2 action)
    utils = _grid(rng, (n_actions * 2 * n_actions * 2 * n_actions, 2), step, top)
    acts1 = [f"a{i}" for i in range(n_actions)]
    acts2 = [f"b{i}" for i in range(n_actions)]
    acts3 = [f"c{i}" for i in range(n_actions)]
    b = TreeBuilder(2)
    root = b.decision(1, "1:", acts1)
    level = _expand(b, [(root, None)], lambda _: [
        (a, "chance_node", ({"A": p_a[i], "B": 1 - p_a[i]},), a) for i, a in enumerate(acts1)])
    level = _expand(b, level, lambda a1: [
        (e, "decision", (2, f"2:{e}", acts2), (a1, k)) for k, e in enumerate("AB")])
    level = _expand(b, level, lambda s: [
        (a, "chance_node", ({"C": p_c[s[1], i], "D": 1 - p_c[s[1], i]},), s[0]) for i, a in enumerate(acts2)])
    level = _expand(b, level, lambda a1: [
        (e, "decision", (1, f"1:{a1}.{e}", acts3), None) for e in "CD"])
    leaf = iter(utils)
    _expand(b, level, lambda _: [(a, "terminal", (next(leaf),), None) for a in acts3])
    return b.build()


def generate_game3(seed: int, rounds: int = 3, options: int = 4, step: float = 0.25, top: float = 5.0) -> GameTree:
    """Random instance of the no-repeat multi-round game.

    With the defaults each player has 3652 infosets and there are 13824
    leaves. ``rounds`` below ``options - 1`` gives smaller variants.
    """
    if not 1 <= rounds <= options:
        raise ValueError("rounds must be between 1 and options")
    rng = stream(seed, TAG_GAME, 3, rounds, options)
    b = TreeBuilder(2)
    # state: (history items, used outcomes, used p1 actions, used p2 actions)
    root = b.chance_node({})
    frontier = [(root, ((), (), (), ()))]
    for r in range(rounds):
        # chance nodes of this round are already in frontier; fill distributions and expand
        nxt = []
        for h, (hist, eo, e1, e2) in frontier:
            left = [o for o in OUTCOMES[:options] if o not in eo]
            w = rng.uniform(size=len(left))
            w = w / w.sum()
            b.chance[h] = {o: float(p) for o, p in zip(left, w)}
            for o in left:
                nh = hist + (o,)
                acts = [f"a{i}" for i in range(options) if f"a{i}" not in e1]
                c = b.decision(1, "1|" + ".".join(nh), acts)
                b.link(h, o, c)
                nxt.append((c, (nh, eo + (o,), e1, e2)))
        frontier, nxt = nxt, []
        for h, (hist, eo, e1, e2) in frontier:
            for a in b.info_actions[1][b.infoset[h]]:
                acts = [f"b{i}" for i in range(options) if f"b{i}" not in e2]
                c = b.decision(2, "2|" + ".".join(hist), acts)
                b.link(h, a, c)
                nxt.append((c, (hist, eo, e1 + (a,), e2)))
        frontier, nxt = nxt, []
        last = r == rounds - 1
        for h, (hist, eo, e1, e2) in frontier:
            for a in b.info_actions[2][b.infoset[h]]:
                nh = hist + (e1[-1], a)
                if last:
                    c = b.terminal(None)
                else:
                    c = b.chance_node({})
                b.link(h, a, c)
                nxt.append((c, (nh, eo, e1, e2 + (a,))))
        frontier = nxt
    utils = _grid(rng, (len(frontier), 2), step, top)
    for (h, _), u in zip(frontier, utils):
        b.utility[h] = tuple(float(x) for x in u)
    return b.build()


def generate(game: str, seed: int, **kwargs) -> GameTree:
    if game == "game1":
        return generate_game1(seed, **kwargs)
    if game == "game2":
        return generate_game2(seed, **kwargs)
    if game == "game3":
        return generate_game3(seed, **kwargs)
    if game == "game3-small":
        return generate_game3(seed, rounds=2, **kwargs)
    raise ValueError(f"unknown game {game!r}; expected one of {GAME_IDS + ('game3-small',)}")


def payoff_range(game: str) -> float:
    """Width of the utility grid of a benchmark game."""
    return {"game1": 5.0, "game2": 10.0, "game3": 5.0, "game3-small": 5.0}[game]


def chance_events(game: str) -> int:
    """Number of chance events on every root-to-leaf path of a benchmark game."""
    return {"game1": 1, "game2": 2, "game3": 3, "game3-small": 2}[game]


# Hand-built fixtures ---------------------------------------------------------


def kuhn_poker() -> GameTree:
    """Three-card Kuhn poker (zero-sum; player 1 value -1/18)."""
    b = TreeBuilder(2)
    cards = "JQK"
    deals = [(x, y) for x in range(3) for y in range(3) if x != y]
    root = b.chance_node({f"{cards[x]}{cards[y]}": 1 / 6 for x, y in deals})

    def showdown(x, y, pot):
        return (pot, -pot) if x > y else (-pot, pot)

    for x, y in deals:
        h1 = b.decision(1, f"1:{cards[x]}", ("check", "bet"))
        b.link(root, f"{cards[x]}{cards[y]}", h1)
        # check
        h2 = b.decision(2, f"2:{cards[y]}:check", ("check", "bet"))
        b.link(h1, "check", h2)
        b.link(h2, "check", b.terminal(showdown(x, y, 1)))
        h3 = b.decision(1, f"1:{cards[x]}:check.bet", ("fold", "call"))
        b.link(h2, "bet", h3)
        b.link(h3, "fold", b.terminal((-1, 1)))
        b.link(h3, "call", b.terminal(showdown(x, y, 2)))
        # bet
        h4 = b.decision(2, f"2:{cards[y]}:bet", ("fold", "call"))
        b.link(h1, "bet", h4)
        b.link(h4, "fold", b.terminal((1, -1)))
        b.link(h4, "call", b.terminal(showdown(x, y, 2)))
    return b.build()


def matching_pennies() -> GameTree:
    """Matching pennies as a two-move game where player 2 does not see player 1."""
    b = TreeBuilder(2)
    root = b.decision(1, "1:", ("H", "T"))
    for a in "HT":
        h = b.decision(2, "2:", ("H", "T"))
        b.link(root, a, h)
        for c in "HT":
            u = 1.0 if a == c else -1.0
            b.link(h, c, b.terminal((u, -u)))
    return b.build()


def worked_example_tree() -> GameTree:
    """Two-action slice of the one-event game used by the worked estimator example.

    Player 1 has one action; Nature draws A with probability 0.6; player 2
    sees the outcome and has two actions in each infoset.
    """
    b = TreeBuilder(2)
    root = b.decision(1, "1:", ("a0",))
    c = b.chance_node({"A": 0.6, "B": 0.4})
    b.link(root, "a0", c)
    for e in "AB":
        h = b.decision(2, f"2:{e}", ("b0", "b1"))
        b.link(c, e, h)
        for a in ("b0", "b1"):
            b.link(h, a, b.terminal((0.0, 0.0)))
    return b.build()


def coarsen_fixture() -> GameTree:
    """One chance node with outcomes A and B before player 2 infosets of 2 and 3 actions."""
    b = TreeBuilder(2)
    c = b.chance_node({"A": 0.5, "B": 0.5})
    ha = b.decision(2, "2:A", ("x0", "x1"))
    hb = b.decision(2, "2:B", ("y0", "y1", "y2"))
    b.link(c, "A", ha)
    b.link(c, "B", hb)
    for i in range(2):
        b.link(ha, f"x{i}", b.terminal((float(i), -float(i))))
    for i in range(3):
        b.link(hb, f"y{i}", b.terminal((float(i) + 2, -float(i) - 2)))
    return b.build()


def dominant_game() -> GameTree:
    """Prisoner's-dilemma-like sequential game with a strictly dominant profile."""
    b = TreeBuilder(2)
    root = b.decision(1, "1:", ("c", "d"))
    pay = {("c", "c"): (3, 3), ("c", "d"): (0, 5), ("d", "c"): (5, 0), ("d", "d"): (1, 1)}
    for a in "cd":
        h = b.decision(2, "2:", ("c", "d"))
        b.link(root, a, h)
        for x in "cd":
            b.link(h, x, b.terminal(pay[(a, x)]))
    return b.build()


# Simulator -------------------------------------------------------------------


@dataclass(frozen=True)
class ObservationModel:
    """Reveal the first ``events`` chance outcomes on the path, hide the rest."""

    events: int

    def __post_init__(self):
        if self.events < 0:
            raise ValueError("events must be nonnegative")

    @classmethod
    def from_positions(cls, positions) -> "ObservationModel":
        pos = sorted(set(int(p) for p in positions))
        if pos != list(range(len(pos))):
            raise ValueError(f"revealed positions {pos} are not a prefix of the chance-event sequence")
        return cls(len(pos))

    @property
    def positions(self) -> tuple[int, ...]:
        return tuple(range(self.events))


@dataclass(frozen=True)
class SimulationTrace:
    """One simulated play: revealed (tag, label) observations and noisy payoffs.

    The tag of an observation is the tuple of revealed labels that precede it.
    ``terminal`` is the hidden leaf node id, kept for test oracles.
    """

    observations: tuple[tuple[tuple[str, ...], str], ...]
    payoffs: tuple[float, ...]
    terminal: int = -1

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for _, lab in self.observations)


class ObservationTable:
    """Revealed-prefix id for every leaf of a tree under one observation model."""

    def __init__(self, tree: GameTree, obs: ObservationModel):
        c = tree.c
        prefixes: dict[tuple[str, ...], int] = {}
        self.prefixes: list[tuple[str, ...]] = []
        leaf_ids = np.empty(len(c.leaves), dtype=np.int64)
        node_prefix: dict[int, tuple[str, ...]] = {0: ()}
        for a, bnd in c.levels[1:]:
            for x in range(a, bnd):
                p = node_prefix[int(c.parent[x])]
                if c.owner[c.parent[x]] == 0 and c.chance_pos[c.parent[x]] < obs.events:
                    p = p + (c.edge_label[x],)
                node_prefix[x] = p
        for i, x in enumerate(c.leaves):
            p = node_prefix[int(x)]
            if p not in prefixes:
                prefixes[p] = len(self.prefixes)
                self.prefixes.append(p)
            leaf_ids[i] = prefixes[p]
        self.leaf_prefix = leaf_ids
        self.obs = obs

    def observations(self, prefix_id: int) -> tuple[tuple[tuple[str, ...], str], ...]:
        p = self.prefixes[prefix_id]
        return tuple((p[:k], p[k]) for k in range(len(p)))


@dataclass
class TraceBatch:
    """Many traces of one profile, stored column-wise."""

    leaves: np.ndarray  # compiled leaf indices
    prefix: np.ndarray  # ids into ``table.prefixes``
    payoffs: np.ndarray  # (size, players)
    table: ObservationTable

    def __len__(self) -> int:
        return len(self.leaves)

    def traces(self, tree: GameTree) -> list[SimulationTrace]:
        ids = tree.leaf_ids()
        return [
            SimulationTrace(self.table.observations(int(p)), tuple(float(x) for x in u), int(ids[t]))
            for t, p, u in zip(self.leaves, self.prefix, self.payoffs)
        ]


class Simulator:
    """Black-box sampler of noisy plays of a game under an observation model."""

    def __init__(self, tree: GameTree, obs: ObservationModel, noise_variance: float = 0.1):
        if noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        self.tree = tree
        self.obs = obs
        self.noise_sd = float(np.sqrt(noise_variance))
        self.table = ObservationTable(tree, obs)

    def sample(self, profile: StrategyProfile, size: int, rng: np.random.Generator) -> TraceBatch:
        p = leaf_distribution(self.tree, profile)
        p = np.clip(p, 0.0, None)
        p = p / p.sum()
        leaves = rng.choice(len(p), size=size, p=p)
        u = self.tree.leaf_utilities()[leaves]
        if self.noise_sd > 0:
            u = u + rng.normal(0.0, self.noise_sd, size=u.shape)
        return TraceBatch(leaves, self.table.leaf_prefix[leaves], u, self.table)

    def play(self, policy, rng: np.random.Generator) -> tuple[list[tuple[int, int, int]], np.ndarray]:
        """Walk one episode, asking ``policy(player, infoset_index, rng)`` for actions.

        Returns the visited (player, infoset, action) triples and the noisy
        payoff vector. Chance follows the true distributions.
        """
        c = self.tree.c
        x = 0
        visits = []
        while c.n_children[x]:
            s, k = int(c.child_start[x]), int(c.n_children[x])
            own = int(c.owner[x])
            if own == 0:
                i = int(rng.choice(k, p=c.edge_chance[s:s + k]))
            else:
                inf = int(c.node_infoset[x])
                i = int(policy(own, inf, rng))
                visits.append((own, inf, i))
            x = s + i
        u = self.tree.leaf_utilities()[c.leaf_index[x]]
        if self.noise_sd > 0:
            u = u + rng.normal(0.0, self.noise_sd, size=u.shape)
        return visits, u


def simulate(tree: GameTree, profile: StrategyProfile, obs: ObservationModel, noise_variance: float,
             rng: np.random.Generator) -> SimulationTrace:
    """Sample one noisy play of ``profile``."""
    return Simulator(tree, obs, noise_variance).sample(profile, 1, rng).traces(tree)[0]


def all_pure_profiles(tree: GameTree) -> list[tuple[tuple[int, ...], ...]]:
    per = [list(itertools.product(*(range(int(k)) for k in pi.n_actions))) for pi in tree.c.players]
    return list(itertools.product(*per))
