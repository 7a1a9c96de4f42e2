"""Finite extensive-form games with perfect recall.

A :class:`GameTree` is built from plain node records, validated, and then
compiled into flat numpy arrays laid out in breadth-first order. In that
layout every level of the tree is a contiguous block, the children of a
node are contiguous, and parents precede children, so reach
probabilities, expected values and best responses reduce to a handful of
vectorized passes over the levels.

Player 0 is Nature. Players ``1..n`` own decision nodes grouped into
information sets; a behavioral strategy for player ``j`` is a flat
probability vector with one block per information set (see
:attr:`PlayerIndex.offsets`). A pure strategy is a tuple holding one
action index per information set, in the player's canonical infoset order.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, NamedTuple, Sequence

import numpy as np

PROB_TOL = 1e-9
TIE_TOL = 1e-12


class InvalidGameError(ValueError):
    """Raised when a game description violates the structural invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        shown = "\n  ".join(self.violations[:20])
        more = "" if len(self.violations) <= 20 else f"\n  ... {len(self.violations) - 20} more"
        super().__init__(f"invalid game ({len(self.violations)} violations):\n  {shown}{more}")


@dataclass(frozen=True)
class Node:
    """One node of a game tree.

    ``player`` is 0 for chance nodes, ``1..n`` for decision nodes and
    ``None`` for terminals. ``children`` pairs each outgoing edge label with
    the child's node id.
    """

    player: int | None
    children: tuple[tuple[str, int], ...] = ()
    infoset: str | None = None
    utility: tuple[float, ...] | None = None

    @property
    def is_terminal(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class Infoset:
    player: int
    id: str
    nodes: tuple[int, ...]
    actions: tuple[str, ...]


@dataclass
class PlayerIndex:
    """Compiled per-player layout of information sets and actions."""

    player: int
    infosets: list[str]
    index: dict[str, int]
    actions: list[tuple[str, ...]]
    n_actions: np.ndarray
    offsets: np.ndarray
    flat_infoset: np.ndarray
    # last own (infoset, action) on the path to each infoset, or (-1, -1)
    parent: np.ndarray
    # depth of the infoset's nodes, -1 when they sit at different depths
    depth: np.ndarray
    # per node: flat indices of this player's edges on the root path, padded
    path: np.ndarray
    # bfs indices of nodes owned by this player, and of edges leaving them
    nodes: np.ndarray
    edges: np.ndarray

    @property
    def n_infosets(self) -> int:
        return len(self.infosets)

    @property
    def n_flat(self) -> int:
        return int(self.offsets[-1])

    @property
    def aligned(self) -> bool:
        return bool(np.all(self.depth >= 0))

    def n_pure(self) -> int:
        return math.prod(int(k) for k in self.n_actions)


@dataclass
class Compiled:
    """Breadth-first array form of a validated tree."""

    order: np.ndarray  # bfs position -> node id
    pos: np.ndarray  # node id -> bfs position
    parent: np.ndarray
    depth: np.ndarray
    owner: np.ndarray  # -1 terminal, 0 chance, j >= 1 decision
    child_start: np.ndarray
    n_children: np.ndarray
    edge_label: list[str]
    edge_flat: np.ndarray  # flat action index of the edge into a node, -1 if none
    edge_chance: np.ndarray  # chance probability of the edge into a node, else 1
    node_infoset: np.ndarray
    levels: list[tuple[int, int]]
    internal: list[np.ndarray]  # per level: bfs indices of non-terminal nodes
    leaves: np.ndarray
    leaf_index: np.ndarray
    utilities: np.ndarray | None
    chance_reach: np.ndarray
    chance_pos: np.ndarray  # number of chance ancestors
    chance_edges: np.ndarray
    players: list[PlayerIndex]

    @property
    def n_nodes(self) -> int:
        return len(self.order)


class Reach(NamedTuple):
    total: float
    chance: float
    players: tuple[float, ...]


def validate_game(
    players: int,
    nodes: Sequence[Node],
    chance: Mapping[int, Mapping[str, float]],
    infosets: Mapping[int, Mapping[str, Infoset]],
    root: int = 0,
    require_payoffs: bool = True,
) -> list[str]:
    """Return every invariant violation found; an empty list means valid."""
    errs: list[str] = []
    n = len(nodes)
    if not isinstance(players, int) or players < 1:
        return [f"players must be a positive integer, got {players!r}"]
    if n == 0:
        return ["game has no nodes"]
    if not 0 <= root < n:
        return [f"root {root} is not a node id"]

    parents: dict[int, int] = {}
    tree_ok = True
    for h, node in enumerate(nodes):
        labels = [lab for lab, _ in node.children]
        if len(set(labels)) != len(labels):
            errs.append(f"node {h}: duplicate edge labels {labels}")
        for lab, c in node.children:
            if not isinstance(c, int) or not 0 <= c < n:
                errs.append(f"node {h}: edge {lab!r} points to missing node {c!r}")
                tree_ok = False
            elif c in parents:
                errs.append(f"node {c} has two parents ({parents[c]} and {h})")
                tree_ok = False
            else:
                parents[c] = h
    if root in parents:
        errs.append(f"root {root} has a parent ({parents[root]})")
        tree_ok = False
    if tree_ok:
        seen = {root}
        queue = deque([root])
        while queue:
            h = queue.popleft()
            for _, c in nodes[h].children:
                if c in seen:
                    errs.append(f"cycle through node {c}")
                    tree_ok = False
                    break
                seen.add(c)
                queue.append(c)
            if not tree_ok:
                break
        unreachable = sorted(set(range(n)) - seen)
        if tree_ok and unreachable:
            errs.append(f"nodes not reachable from root: {unreachable[:10]}")
            tree_ok = False

    for h, node in enumerate(nodes):
        if node.is_terminal:
            if node.player is not None:
                errs.append(f"node {h}: terminal node has player {node.player}")
            if node.utility is None:
                if require_payoffs:
                    errs.append(f"node {h}: terminal node has no utility vector")
            elif len(node.utility) != players:
                errs.append(f"node {h}: utility has {len(node.utility)} entries, expected {players}")
            elif not all(math.isfinite(float(u)) for u in node.utility):
                errs.append(f"node {h}: utility is not finite")
            continue
        if node.utility is not None:
            errs.append(f"node {h}: non-terminal node carries a utility vector")
        if node.player is None or not 0 <= node.player <= players:
            errs.append(f"node {h}: player {node.player!r} outside 0..{players}")
            continue
        labels = [lab for lab, _ in node.children]
        if node.player == 0:
            dist = chance.get(h)
            if dist is None:
                errs.append(f"node {h}: chance node without a distribution")
                continue
            if sorted(dist) != sorted(labels):
                errs.append(f"node {h}: distribution labels {sorted(dist)} differ from edges {sorted(labels)}")
            probs = [float(p) for p in dist.values()]
            if any(p < 0 or not math.isfinite(p) for p in probs):
                errs.append(f"node {h}: negative or non-finite chance probability")
            total = math.fsum(probs)
            if abs(total - 1.0) > PROB_TOL:
                errs.append(f"node {h}: chance distribution sums to {total:.12g}")
        else:
            if node.infoset is None:
                errs.append(f"node {h}: decision node without an infoset")
                continue
            info = infosets.get(node.player, {}).get(node.infoset)
            if info is None:
                errs.append(f"node {h}: infoset {node.infoset!r} unknown for player {node.player}")
                continue
            if h not in info.nodes:
                errs.append(f"node {h}: not listed in infoset {node.infoset!r}")
            if tuple(labels) != tuple(info.actions):
                errs.append(f"node {h}: actions {labels} differ from infoset {node.infoset!r} actions {list(info.actions)}")
    for h in chance:
        if not (isinstance(h, int) and 0 <= h < n and nodes[h].player == 0 and nodes[h].children):
            errs.append(f"chance distribution given for non-chance node {h!r}")

    owner_of: dict[tuple[int, int], str] = {}
    for j, table in infosets.items():
        if not isinstance(j, int) or not 1 <= j <= players:
            errs.append(f"infosets given for invalid player {j!r}")
            continue
        for iid, info in table.items():
            if not info.nodes:
                errs.append(f"infoset {iid!r} of player {j} is empty")
            if not info.actions:
                errs.append(f"infoset {iid!r} of player {j} has no actions")
            for h in info.nodes:
                if not isinstance(h, int) or not 0 <= h < n:
                    errs.append(f"infoset {iid!r} lists missing node {h!r}")
                    continue
                if nodes[h].player != j or nodes[h].infoset != iid:
                    errs.append(f"infoset {iid!r} of player {j} lists node {h} owned by {nodes[h].player!r}/{nodes[h].infoset!r}")
                if (j, h) in owner_of:
                    errs.append(f"node {h} belongs to infosets {owner_of[(j, h)]!r} and {iid!r}")
                owner_of[(j, h)] = iid

    if tree_ok and not errs:
        errs.extend(_check_perfect_recall(nodes, infosets, root))
    return errs


def _own_histories(nodes: Sequence[Node], root: int) -> dict[int, dict[int, tuple]]:
    """For each node, map player -> tuple of that player's (infoset, action) moves above it."""
    hist: dict[int, dict[int, tuple]] = {root: {}}
    queue = deque([root])
    while queue:
        h = queue.popleft()
        node = nodes[h]
        for lab, c in node.children:
            d = hist[h]
            if node.player:
                d = dict(d)
                d[node.player] = d.get(node.player, ()) + ((node.infoset, lab),)
            hist[c] = d
            queue.append(c)
    return hist


def _check_perfect_recall(nodes, infosets, root) -> list[str]:
    errs = []
    hist = _own_histories(nodes, root)
    for j, table in infosets.items():
        for iid, info in table.items():
            seqs = {hist[h].get(j, ()) for h in info.nodes}
            if len(seqs) > 1:
                errs.append(f"perfect recall violated in infoset {iid!r} of player {j}: own histories differ")
    return errs


class GameTree:
    """A validated extensive-form game.

    Node ids are positions in ``nodes``. Construction raises
    :class:`InvalidGameError` with the full list of violations when the
    description is not a finite perfect-recall game tree.
    """

    def __init__(
        self,
        players: int,
        nodes: Sequence[Node],
        chance: Mapping[int, Mapping[str, float]],
        infosets: Mapping[int, Mapping[str, Infoset | Mapping]],
        root: int = 0,
        require_payoffs: bool = True,
    ):
        self.players = players
        self.nodes = tuple(nodes)
        self.root = root
        self.chance = {int(h): {str(a): float(p) for a, p in d.items()} for h, d in chance.items()}
        self.infosets: dict[int, dict[str, Infoset]] = {}
        for j, table in infosets.items():
            self.infosets[j] = {}
            for iid, info in table.items():
                if not isinstance(info, Infoset):
                    info = Infoset(j, iid, tuple(info["nodes"]), tuple(info["actions"]))
                self.infosets[j][iid] = info
        self.has_payoffs = all(nd.utility is not None for nd in self.nodes if nd.is_terminal)
        errs = validate_game(players, self.nodes, self.chance, self.infosets, root, require_payoffs)
        if errs:
            raise InvalidGameError(errs)
        self._compiled: Compiled | None = None

    def structure(self) -> "GameTree":
        """Copy without terminal utilities; skips revalidation of a valid tree."""
        out = object.__new__(GameTree)
        out.players, out.root = self.players, self.root
        out.nodes = tuple(Node(nd.player, nd.children, nd.infoset) for nd in self.nodes)
        out.chance = {h: dict(d) for h, d in self.chance.items()}
        out.infosets = {j: dict(t) for j, t in self.infosets.items()}
        out.has_payoffs = False
        out._compiled = None
        return out

    @property
    def c(self) -> Compiled:
        if self._compiled is None:
            self._compiled = _compile(self)
        return self._compiled

    def player(self, j: int) -> PlayerIndex:
        return self.c.players[j - 1]

    @property
    def n_leaves(self) -> int:
        return len(self.c.leaves)

    def leaf_utilities(self) -> np.ndarray:
        """Utilities of the leaves in compiled order, shape (leaves, players)."""
        if self.c.utilities is None:
            raise ValueError("game has no payoffs")
        return self.c.utilities

    def leaf_ids(self) -> np.ndarray:
        return self.c.order[self.c.leaves]

    def history(self, node: int) -> tuple[str, ...]:
        """Edge labels from the root to ``node``."""
        c = self.c
        labels = []
        b = int(c.pos[node])
        while c.parent[b] >= 0:
            labels.append(c.edge_label[b])
            b = int(c.parent[b])
        return tuple(reversed(labels))

    def with_utilities(self, utilities: Mapping[int, Sequence[float]]) -> "GameTree":
        """Copy of the tree with terminal utilities replaced by ``utilities[node_id]``."""
        nodes = [
            Node(nd.player, nd.children, nd.infoset, tuple(float(u) for u in utilities[h]))
            if nd.is_terminal else nd
            for h, nd in enumerate(self.nodes)
        ]
        return GameTree(self.players, nodes, self.chance, self.infosets, self.root)

    def to_dict(self) -> dict:
        out_nodes = []
        for h, nd in enumerate(self.nodes):
            rec: dict = {"id": h, "player": nd.player}
            if nd.infoset is not None:
                rec["infoset"] = nd.infoset
            rec["children"] = [{"label": lab, "child": ch} for lab, ch in nd.children]
            if nd.utility is not None:
                rec["utility"] = list(nd.utility)
            out_nodes.append(rec)
        return {
            "players": self.players,
            "root": self.root,
            "nodes": out_nodes,
            "chance": {str(h): dict(d) for h, d in self.chance.items()},
            "infosets": {
                str(j): {iid: {"nodes": list(info.nodes), "actions": list(info.actions)}
                         for iid, info in table.items()}
                for j, table in self.infosets.items()
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping, require_payoffs: bool = True) -> "GameTree":
        try:
            players = int(data["players"])
            recs = list(data["nodes"])
            ids = [int(r["id"]) for r in recs]
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidGameError([f"malformed game file: {exc!r}"]) from None
        if sorted(ids) != list(range(len(recs))):
            raise InvalidGameError(["node ids must be exactly 0..N-1"])
        nodes: list[Node | None] = [None] * len(recs)
        for r in recs:
            util = r.get("utility")
            player = r.get("player")
            nodes[int(r["id"])] = Node(
                player=None if player is None else int(player),
                children=tuple((str(e["label"]), int(e["child"])) for e in r.get("children", [])),
                infoset=None if r.get("infoset") is None else str(r["infoset"]),
                utility=None if util is None else tuple(float(u) for u in util),
            )
        chance = {int(h): {str(a): float(p) for a, p in d.items()} for h, d in data.get("chance", {}).items()}
        infosets = {
            int(j): {str(iid): Infoset(int(j), str(iid), tuple(int(h) for h in v["nodes"]), tuple(str(a) for a in v["actions"]))
                     for iid, v in table.items()}
            for j, table in data.get("infosets", {}).items()
        }
        return cls(players, nodes, chance, infosets, int(data.get("root", 0)), require_payoffs)

    def __repr__(self) -> str:
        sizes = ", ".join(f"P{j}:{len(self.infosets.get(j, {}))}" for j in range(1, self.players + 1))
        return f"GameTree(players={self.players}, nodes={len(self.nodes)}, infosets=[{sizes}])"


def load_game(path: str | Path, require_payoffs: bool = True) -> GameTree:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidGameError([f"not valid JSON: {exc}"]) from None
    return GameTree.from_dict(data, require_payoffs=require_payoffs)


def save_game(tree: GameTree, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(tree.to_dict(), fh, separators=(",", ":"))


def _compile(tree: GameTree) -> Compiled:
    nodes = tree.nodes
    order: list[int] = []
    queue = deque([tree.root])
    while queue:
        h = queue.popleft()
        order.append(h)
        queue.extend(c for _, c in nodes[h].children)
    N = len(order)
    order_a = np.array(order, dtype=np.int64)
    pos = np.empty(N, dtype=np.int64)
    pos[order_a] = np.arange(N)

    parent = np.full(N, -1, dtype=np.int64)
    depth = np.zeros(N, dtype=np.int64)
    owner = np.full(N, -1, dtype=np.int64)
    child_start = np.zeros(N, dtype=np.int64)
    n_children = np.zeros(N, dtype=np.int64)
    edge_label = [""] * N
    edge_chance = np.ones(N)
    chance_pos = np.zeros(N, dtype=np.int64)
    for b, h in enumerate(order):
        nd = nodes[h]
        if nd.children:
            owner[b] = nd.player
            n_children[b] = len(nd.children)
            child_start[b] = pos[nd.children[0][1]]
            for lab, ch in nd.children:
                cb = pos[ch]
                parent[cb] = b
                depth[cb] = depth[b] + 1
                edge_label[cb] = lab
                chance_pos[cb] = chance_pos[b] + (nd.player == 0)
                if nd.player == 0:
                    edge_chance[cb] = tree.chance[h][lab]

    max_depth = int(depth.max())
    bounds = np.searchsorted(depth, np.arange(max_depth + 2))
    levels = [(int(bounds[d]), int(bounds[d + 1])) for d in range(max_depth + 1)]
    internal = [np.flatnonzero(n_children[a:b] > 0) + a for a, b in levels]
    leaves = np.flatnonzero(n_children == 0)
    leaf_index = np.full(N, -1, dtype=np.int64)
    leaf_index[leaves] = np.arange(len(leaves))
    utilities = None
    if tree.has_payoffs:
        utilities = np.array([nodes[order[b]].utility for b in leaves], dtype=float).reshape(len(leaves), tree.players)

    chance_reach = np.ones(N)
    for a, b in levels[1:]:
        chance_reach[a:b] = chance_reach[parent[a:b]] * edge_chance[a:b]

    node_infoset = np.full(N, -1, dtype=np.int64)
    edge_flat = np.full(N, -1, dtype=np.int64)
    players: list[PlayerIndex] = []
    for j in range(1, tree.players + 1):
        own = np.flatnonzero(owner == j)
        ids: list[str] = []
        index: dict[str, int] = {}
        for b in own:
            iid = nodes[order[b]].infoset
            if iid not in index:
                index[iid] = len(ids)
                ids.append(iid)
        actions = [tree.infosets[j][iid].actions for iid in ids]
        n_act = np.array([len(a) for a in actions], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(n_act)]).astype(np.int64)
        flat_infoset = np.repeat(np.arange(len(ids)), n_act)
        inf_depth = np.full(len(ids), -2, dtype=np.int64)
        for b in own:
            k = index[nodes[order[b]].infoset]
            node_infoset[b] = k
            if inf_depth[k] == -2:
                inf_depth[k] = depth[b]
            elif inf_depth[k] != depth[b]:
                inf_depth[k] = -1
            for i in range(n_children[b]):
                edge_flat[child_start[b] + i] = offsets[k] + i
        players.append(PlayerIndex(
            player=j, infosets=ids, index=index, actions=actions, n_actions=n_act,
            offsets=offsets, flat_infoset=flat_infoset,
            parent=np.full((len(ids), 2), -1, dtype=np.int64), depth=inf_depth,
            path=np.empty((N, 0), dtype=np.int64), nodes=own,
            edges=np.flatnonzero(np.isin(parent, own)) if len(own) else np.empty(0, dtype=np.int64),
        ))

    # per-player path matrices and own-history parents, one pass in bfs order
    for pi in players:
        j = pi.player
        own_len = np.zeros(N, dtype=np.int64)
        for a, b in levels[1:]:
            par = parent[a:b]
            own_len[a:b] = own_len[par] + (owner[par] == j)
        D = int(own_len.max()) if N else 0
        path = np.full((N, D), pi.n_flat, dtype=np.int64)
        for a, b in levels[1:]:
            par = parent[a:b]
            path[a:b] = path[par]
            mine = np.flatnonzero(owner[par] == j) + a
            if len(mine):
                path[mine, own_len[mine] - 1] = edge_flat[mine]
        pi.path = path
        for b in pi.nodes:
            k = node_infoset[b]
            if own_len[b] > 0:
                f = path[b, own_len[b] - 1]
                i2 = pi.flat_infoset[f]
                pi.parent[k] = (i2, f - pi.offsets[i2])

    return Compiled(
        order=order_a, pos=pos, parent=parent, depth=depth, owner=owner,
        child_start=child_start, n_children=n_children, edge_label=edge_label,
        edge_flat=edge_flat, edge_chance=edge_chance, node_infoset=node_infoset,
        levels=levels, internal=internal, leaves=leaves, leaf_index=leaf_index,
        utilities=utilities, chance_reach=chance_reach, chance_pos=chance_pos,
        chance_edges=np.flatnonzero(np.isin(parent, np.flatnonzero(owner == 0))),
        players=players,
    )


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """Behavioral strategies for every player, one flat vector per player."""

    probs: tuple[np.ndarray, ...]

    def player(self, j: int) -> np.ndarray:
        return self.probs[j - 1]

    def replace(self, j: int, probs: np.ndarray) -> "StrategyProfile":
        out = list(self.probs)
        out[j - 1] = np.asarray(probs, dtype=float)
        return StrategyProfile(tuple(out))

    @classmethod
    def uniform(cls, tree: GameTree) -> "StrategyProfile":
        return cls(tuple(np.repeat(1.0 / pi.n_actions, pi.n_actions) for pi in tree.c.players))

    @classmethod
    def from_pure(cls, tree: GameTree, pures: Sequence[Sequence[int]]) -> "StrategyProfile":
        return cls(tuple(pure_to_flat(tree, j, p) for j, p in enumerate(pures, start=1)))

    @classmethod
    def from_dict(cls, tree: GameTree, table: Mapping[int, Mapping[str, Mapping[str, float]]]) -> "StrategyProfile":
        """Build from ``{player: {infoset: {action: prob}}}``; missing infosets are uniform."""
        out = []
        for pi in tree.c.players:
            x = np.repeat(1.0 / pi.n_actions, pi.n_actions)
            for iid, dist in table.get(pi.player, {}).items():
                k = pi.index[iid]
                for a, p in dist.items():
                    x[pi.offsets[k] + pi.actions[k].index(a)] = p
            out.append(x)
        return cls(tuple(out))

    def check(self, tree: GameTree) -> list[str]:
        errs = []
        if len(self.probs) != tree.players:
            return [f"profile has {len(self.probs)} players, game has {tree.players}"]
        for pi, x in zip(tree.c.players, self.probs):
            if x.shape != (pi.n_flat,):
                errs.append(f"player {pi.player}: expected {pi.n_flat} probabilities, got {x.shape}")
                continue
            if np.any(x < -PROB_TOL):
                errs.append(f"player {pi.player}: negative probability")
            if pi.n_infosets:
                sums = np.add.reduceat(x, pi.offsets[:-1])
                bad = np.flatnonzero(np.abs(sums - 1) > PROB_TOL)
                if len(bad):
                    errs.append(f"player {pi.player}: infoset {pi.infosets[bad[0]]!r} sums to {sums[bad[0]]:.12g}")
        return errs


def pure_to_flat(tree: GameTree, j: int, pure: Sequence[int]) -> np.ndarray:
    pi = tree.player(j)
    x = np.zeros(pi.n_flat)
    x[pi.offsets[:-1] + np.asarray(pure, dtype=np.int64)] = 1.0
    return x


def player_reach(tree: GameTree, j: int, probs: np.ndarray) -> np.ndarray:
    """Player ``j``'s contribution to the reach probability of every node (bfs order)."""
    pi = tree.player(j)
    ext = np.append(np.asarray(probs, dtype=float), 1.0)
    if pi.path.shape[1] == 0:
        return np.ones(tree.c.n_nodes)
    return np.prod(ext[pi.path], axis=1)


def leaf_reach(tree: GameTree, j: int, probs: np.ndarray) -> np.ndarray:
    """Player ``j``'s reach contribution at each leaf, in compiled leaf order."""
    pi = tree.player(j)
    ext = np.append(np.asarray(probs, dtype=float), 1.0)
    path = pi.path[tree.c.leaves]
    if path.shape[1] == 0:
        return np.ones(len(tree.c.leaves))
    return np.prod(ext[path], axis=1)


def leaf_distribution(tree: GameTree, profile: StrategyProfile) -> np.ndarray:
    """Probability of each leaf under ``profile``."""
    p = tree.c.chance_reach[tree.c.leaves].copy()
    for j in range(1, tree.players + 1):
        p *= leaf_reach(tree, j, profile.player(j))
    return p


def reach_probability(tree: GameTree, node: int, profile: StrategyProfile) -> Reach:
    """Reach probability of ``node`` with its chance and per-player factors."""
    b = int(tree.c.pos[node])
    chance = float(tree.c.chance_reach[b])
    per = []
    for j in range(1, tree.players + 1):
        pi = tree.player(j)
        ext = np.append(profile.player(j), 1.0)
        per.append(float(np.prod(ext[pi.path[b]])))
    return Reach(chance * math.prod(per), chance, tuple(per))


def expected_payoff(tree: GameTree, profile: StrategyProfile) -> np.ndarray:
    """Expected utility vector of ``profile``."""
    return leaf_distribution(tree, profile) @ tree.leaf_utilities()


def edge_probabilities(tree: GameTree, profile: StrategyProfile) -> np.ndarray:
    """Probability of the edge into every node (bfs order); 1 at the root."""
    c = tree.c
    ep = c.edge_chance.copy()
    for pi in c.players:
        if len(pi.edges):
            ep[pi.edges] = profile.player(pi.player)[c.edge_flat[pi.edges]]
    return ep


def node_values(tree: GameTree, profile: StrategyProfile, ep: np.ndarray | None = None) -> np.ndarray:
    """Expected utility vector at every node under ``profile``, shape (nodes, players)."""
    c = tree.c
    if ep is None:
        ep = edge_probabilities(tree, profile)
    V = np.zeros((c.n_nodes, tree.players))
    V[c.leaves] = tree.leaf_utilities()
    for d in range(len(c.levels) - 2, -1, -1):
        inner = c.internal[d]
        if not len(inner):
            continue
        a, b = c.levels[d + 1]
        V[inner] = np.add.reduceat(ep[a:b, None] * V[a:b], c.child_start[inner] - a, axis=0)
    return V


def _segment_argmax(q: np.ndarray, offsets: np.ndarray, which: np.ndarray) -> np.ndarray:
    """Lowest action index within ``TIE_TOL`` of each listed infoset's maximum."""
    starts = offsets[which]
    ends = offsets[which + 1]
    sizes = ends - starts
    idx = np.repeat(starts - np.cumsum(np.concatenate([[0], sizes[:-1]])), sizes) + np.arange(sizes.sum())
    vals = q[idx]
    seg_starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    best = np.maximum.reduceat(vals, seg_starts)
    tol = TIE_TOL * np.maximum(1.0, np.abs(best))
    ok = vals >= np.repeat(best - tol, sizes)
    local = np.arange(len(vals)) - np.repeat(seg_starts, sizes)
    return np.minimum.reduceat(np.where(ok, local, np.iinfo(np.int64).max), seg_starts)


def best_response(tree: GameTree, j: int, profile: StrategyProfile, return_value: bool = False):
    """Pure best response of player ``j`` to the other players in ``profile``.

    Ties are broken towards the lowest action index. Infosets that the
    opponents and chance never reach get action 0. With ``return_value``
    the expected utility of the response is returned as well.
    """
    if not isinstance(j, (int, np.integer)) or not 1 <= j <= tree.players:
        raise ValueError(f"player must lie in 1..{tree.players}, got {j!r}")
    pi = tree.player(j)
    if pi.aligned:
        pure, value = _best_response_levels(tree, j, profile)
    else:
        pure, value = _best_response_recursive(tree, j, profile)
    return (pure, value) if return_value else pure


def _opponent_reach(tree: GameTree, j: int, profile: StrategyProfile) -> np.ndarray:
    r = tree.c.chance_reach.copy()
    for k in range(1, tree.players + 1):
        if k != j:
            r *= player_reach(tree, k, profile.player(k))
    return r


def _best_response_levels(tree: GameTree, j: int, profile: StrategyProfile):
    c = tree.c
    pi = tree.player(j)
    ep = edge_probabilities(tree, profile)
    opp = _opponent_reach(tree, j, profile)
    v = np.zeros(c.n_nodes)
    v[c.leaves] = tree.leaf_utilities()[:, j - 1]
    choice = np.zeros(pi.n_infosets, dtype=np.int64)
    own_depth = c.depth[pi.nodes]
    for d in range(len(c.levels) - 2, -1, -1):
        inner = c.internal[d]
        if not len(inner):
            continue
        a, b = c.levels[d + 1]
        v[inner] = np.add.reduceat(ep[a:b] * v[a:b], c.child_start[inner] - a)
        mine = pi.nodes[own_depth == d]
        if not len(mine):
            continue
        counts = c.n_children[mine]
        ch = np.repeat(c.child_start[mine], counts) + (np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts))
        q = np.bincount(c.edge_flat[ch], weights=opp[ch] * v[ch], minlength=pi.n_flat)
        infs = np.unique(c.node_infoset[mine])
        choice[infs] = _segment_argmax(q, pi.offsets, infs)
        v[mine] = v[c.child_start[mine] + choice[c.node_infoset[mine]]]
    return tuple(int(x) for x in choice), float(v[0])


def _best_response_recursive(tree: GameTree, j: int, profile: StrategyProfile):
    c = tree.c
    pi = tree.player(j)
    ep = edge_probabilities(tree, profile)
    opp = _opponent_reach(tree, j, profile)
    util = np.zeros(c.n_nodes)
    util[c.leaves] = tree.leaf_utilities()[:, j - 1]
    choice = np.zeros(pi.n_infosets, dtype=np.int64)
    memo: dict[int, float] = {}

    def value(b: int) -> float:
        if b in memo:
            return memo[b]
        if c.n_children[b] == 0:
            out = float(util[b])
        elif c.owner[b] == j:
            out = value(int(c.child_start[b] + choice[c.node_infoset[b]]))
        else:
            s = int(c.child_start[b])
            out = math.fsum(ep[s + i] * value(s + i) for i in range(c.n_children[b]))
        memo[b] = out
        return out

    # own-history depth orders infosets so that descendants are decided first
    hist_len = np.zeros(pi.n_infosets, dtype=np.int64)
    for k in range(pi.n_infosets):
        p, n_up = pi.parent[k][0], 0
        while p >= 0:
            n_up += 1
            p = pi.parent[p][0]
        hist_len[k] = n_up
    members: dict[int, list[int]] = {}
    for b in pi.nodes:
        members.setdefault(int(c.node_infoset[b]), []).append(int(b))
    for k in sorted(range(pi.n_infosets), key=lambda k: -hist_len[k]):
        q = np.zeros(pi.n_actions[k])
        for b in members[k]:
            s = int(c.child_start[b])
            for i in range(c.n_children[b]):
                q[i] += opp[b] * value(s + i)
        choice[k] = _segment_argmax(q, np.array([0, len(q)]), np.array([0]))[0]
    memo.clear()
    return tuple(int(x) for x in choice), value(0)


def regret(tree: GameTree, profile: StrategyProfile) -> tuple[np.ndarray, float]:
    """Per-player regret of ``profile`` and its sum."""
    base = expected_payoff(tree, profile)
    per = np.empty(tree.players)
    for j in range(1, tree.players + 1):
        _, v = best_response(tree, j, profile, return_value=True)
        per[j - 1] = max(0.0, v - base[j - 1])
    return per, float(per.sum())


def is_eps_nash(tree: GameTree, profile: StrategyProfile, eps: float) -> bool:
    """Whether no player can gain more than ``eps`` by deviating."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    per, _ = regret(tree, profile)
    return bool(np.all(per <= eps))


def consistent_infosets(tree: GameTree, j: int, pures: np.ndarray) -> np.ndarray:
    """Boolean matrix: which infosets each pure strategy's own play can reach.

    ``pures`` has shape (strategies, infosets).
    """
    pi = tree.player(j)
    pures = np.atleast_2d(np.asarray(pures, dtype=np.int64))
    cons = np.ones(pures.shape, dtype=bool)
    for k in range(pi.n_infosets):  # canonical order lists ancestors first
        p, a = pi.parent[k]
        if p >= 0:
            cons[:, k] = cons[:, p] & (pures[:, p] == a)
    return cons


def canonical_pure(tree: GameTree, j: int, pure: Sequence[int]) -> tuple[int, ...]:
    """Reset actions at infosets the strategy itself never reaches to 0."""
    arr = np.asarray(pure, dtype=np.int64)
    cons = consistent_infosets(tree, j, arr[None, :])[0]
    return tuple(int(x) for x in np.where(cons, arr, 0))


def mixture_to_behavioral(tree: GameTree, j: int, pures: Sequence[Sequence[int]], weights: Sequence[float]) -> np.ndarray:
    """Behavioral strategy realization-equivalent to a mixture of pure strategies."""
    pi = tree.player(j)
    P = np.asarray(pures, dtype=np.int64).reshape(len(pures), pi.n_infosets)
    w = np.asarray(weights, dtype=float)
    cons = consistent_infosets(tree, j, P)
    reach_w = cons.T.astype(float) @ w
    x = np.zeros(pi.n_flat)
    if pi.n_infosets:
        np.add.at(x, (pi.offsets[:-1][None, :] + P).ravel(), (cons * w[:, None]).ravel())
    denom = np.repeat(reach_w, pi.n_actions)
    uniform = np.repeat(1.0 / pi.n_actions, pi.n_actions)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0, x / np.where(denom > 0, denom, 1.0), uniform)
    return out


def enumerate_pure_strategies(tree: GameTree, j: int, canonical: bool = False) -> Iterator[tuple[int, ...]]:
    """All pure strategies of player ``j``; with ``canonical`` only reduced ones."""
    pi = tree.player(j)
    it = itertools.product(*(range(int(k)) for k in pi.n_actions))
    if not canonical:
        yield from it
        return
    seen = set()
    for p in it:
        cp = canonical_pure(tree, j, p)
        if cp not in seen:
            seen.add(cp)
            yield cp


def random_pure(tree: GameTree, j: int, rng: np.random.Generator) -> tuple[int, ...]:
    pi = tree.player(j)
    return tuple(int(x) for x in rng.integers(0, pi.n_actions))


def profile_from_labels(tree: GameTree, j: int, labels: Mapping[str, str]) -> tuple[int, ...]:
    """Pure strategy from ``{infoset: action label}``; unspecified infosets get action 0."""
    pi = tree.player(j)
    out = [0] * pi.n_infosets
    for iid, a in labels.items():
        k = pi.index[iid]
        out[k] = pi.actions[k].index(a)
    return tuple(out)

