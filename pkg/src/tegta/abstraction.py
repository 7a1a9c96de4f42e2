"""Coarsening of extensive-form games by abstracting away chance events.

A :class:`CoarseningSpec` names chance nodes ``C'`` and, for each, the
outcomes ``rho(c)`` to remove. Every abstracted chance node is replaced by
a single decision node of the player who moves right after it; that node's
actions are tuples with one component per information set the player could
have been in, and the subtrees reached by each component are merged.
Merged tuple decisions are then condensed into chains of binary choices.

The result is structure only: chance probabilities of copied chance nodes
are kept so the output is a valid game, but no utilities are produced.
"""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .game_tree import GameTree, InvalidGameError, Node


class CoarsenError(ValueError):
    """Raised when a coarsening spec cannot be applied to a game."""


@dataclass(frozen=True)
class CoarseningSpec:
    """Chance nodes to abstract and the outcomes removed at each of them."""

    removed: Mapping[int, frozenset[str]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping) -> "CoarseningSpec":
        table = data.get("remove", data) if isinstance(data, Mapping) else data
        try:
            return cls({int(h): frozenset(str(e) for e in labs) for h, labs in table.items()})
        except (AttributeError, TypeError, ValueError) as exc:
            raise CoarsenError(f"malformed coarsening spec: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "CoarseningSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def all_outcomes(cls, tree: GameTree, nodes: Iterable[int]) -> "CoarseningSpec":
        """Spec removing every outcome of each listed chance node."""
        return cls({int(h): frozenset(lab for lab, _ in tree.nodes[h].children) for h in nodes})

    def to_dict(self) -> dict:
        return {"remove": {str(h): sorted(labs) for h, labs in sorted(self.removed.items())}}

    def validate(self, tree: GameTree) -> list[str]:
        errs = []
        for h, labs in sorted(self.removed.items()):
            if not 0 <= h < len(tree.nodes) or tree.nodes[h].player != 0 or tree.nodes[h].is_terminal:
                errs.append(f"node {h} is not a chance node")
                continue
            outcomes = {lab for lab, _ in tree.nodes[h].children}
            if not labs <= outcomes:
                errs.append(f"node {h}: removed outcomes {sorted(labs - outcomes)} are not outcomes of the node")
            owners = {tree.nodes[ch].player for _, ch in tree.nodes[h].children}
            if len(owners) != 1 or None in owners or 0 in owners:
                errs.append(f"node {h}: children do not all belong to one player ({sorted(map(str, owners))})")
            if labs and len(outcomes - labs) > 1:
                errs.append(f"node {h}: keeps {len(outcomes - labs)} outcomes; at most one may remain")
        return errs


@dataclass(frozen=True)
class CoarseInfoset:
    """Result of merging the infosets induced by a group of chance nodes."""

    player: int
    sources: tuple[str, ...]
    raw_histories: tuple[tuple[str, ...], ...]
    histories: tuple[tuple[str, ...], ...]
    actions: tuple[tuple[str, ...], ...]


def coarsen_infosets(tree: GameTree, sources: Sequence[str], chance_nodes: Sequence[int],
                     removed: Iterable[str]) -> CoarseInfoset:
    """Merge ``sources`` (infosets of one player) reached from ``chance_nodes``.

    The merged infoset holds the histories ``h e`` for ``h`` in
    ``chance_nodes`` and ``e`` in ``removed``; deleting the removed labels
    and duplicates yields the rewritten histories. The action space is the
    Cartesian product of the source action spaces.
    """
    if not chance_nodes:
        raise CoarsenError("no chance nodes to merge")
    owner = None
    tables = []
    for s in sources:
        for j, table in tree.infosets.items():
            if s in table:
                if owner not in (None, j):
                    raise CoarsenError(f"infosets {list(sources)} belong to different players")
                owner = j
                tables.append(table[s].actions)
                break
        else:
            raise CoarsenError(f"unknown infoset {s!r}")
    removed = sorted(set(removed))
    raw = tuple(tree.history(h) + (e,) for h in chance_nodes for e in removed)
    rewritten = tuple(dict.fromkeys(tree.history(h) for h in chance_nodes))
    return CoarseInfoset(owner, tuple(sources), raw, rewritten, tuple(itertools.product(*tables)))


@dataclass(frozen=True)
class Condensed:
    """A tuple action space decomposed into a tree of small choices.

    ``nodes`` maps each internal prefix (edge labels from the subtree root)
    to its outgoing labels; ``leaves`` maps each action tuple to its path.
    ``groups`` gives the component actions behind each label and
    ``component`` the tuple position decided at each internal node.
    """

    nodes: Mapping[tuple[str, ...], tuple[str, ...]]
    leaves: Mapping[tuple[str, ...], tuple[str, ...]]
    groups: Mapping[str, tuple[str, ...]]
    component: Mapping[tuple[str, ...], int]

    @property
    def depth(self) -> int:
        return max(len(p) for p in self.leaves.values())

    @property
    def branching(self) -> int:
        return max(len(v) for v in self.nodes.values())


def _label(group: Sequence[str]) -> str:
    return "|".join(group)


def condense_branching(components: Sequence[Sequence[str]]) -> Condensed:
    """Decompose the product of ``components`` into a chain of binary choices.

    Components are chosen one after another. A component with more than
    two actions is bisected repeatedly, so every introduced node has at
    most two children. A single-component space is left as it is.
    """
    components = [tuple(c) for c in components]
    if not components or any(not c for c in components):
        raise CoarsenError("empty action space")
    if len(components) == 1:
        acts = components[0]
        return Condensed({(): acts}, {(a,): (a,) for a in acts}, {a: (a,) for a in acts}, {(): 0})
    nodes: dict[tuple[str, ...], tuple[str, ...]] = {}
    leaves: dict[tuple[str, ...], tuple[str, ...]] = {}
    groups: dict[str, tuple[str, ...]] = {}
    component: dict[tuple[str, ...], int] = {}

    def expand(prefix, chosen, k, cands):
        if len(cands) == 1:
            chosen = chosen + (cands[0],)
            if k + 1 == len(components):
                leaves[chosen] = prefix
                return
            k, cands = k + 1, components[k + 1]
            if len(cands) == 1:
                expand(prefix, chosen, k, cands)
                return
        half = (len(cands) + 1) // 2
        parts = [(a,) for a in cands] if len(cands) <= 2 else [cands[:half], cands[half:]]
        labels = tuple(_label(p) for p in parts)
        nodes[prefix] = labels
        component[prefix] = k
        for lab, part in zip(labels, parts):
            groups[lab] = part
            expand(prefix + (lab,), chosen, k, part)

    expand((), (), 0, components[0])
    return Condensed(nodes, leaves, groups, component)


def _flat_product(components: Sequence[Sequence[str]]) -> Condensed:
    tuples = list(itertools.product(*components))
    labels = tuple("+".join(t) for t in tuples)
    return Condensed({(): labels}, {t: (lab,) for t, lab in zip(tuples, labels)},
                     {lab: t for t, lab in zip(tuples, labels)}, {(): -1})


# Working tree ---------------------------------------------------------------


@dataclass
class _W:
    player: int | None
    children: list[tuple[str, "_W"]]
    origin: frozenset[int]
    dist: dict[str, float] | None = None
    prefix: tuple[str, ...] = ()


def _build_work(tree: GameTree) -> tuple[_W, dict[int, _W], dict[int, tuple[_W, int] | None]]:
    made: dict[int, _W] = {}
    for h in reversed(_bfs(tree)):
        nd = tree.nodes[h]
        made[h] = _W(nd.player, [(lab, made[ch]) for lab, ch in nd.children], frozenset([h]),
                     dict(tree.chance[h]) if nd.player == 0 and nd.children else None)
    parent: dict[int, tuple[_W, int] | None] = {tree.root: None}
    for h, nd in enumerate(tree.nodes):
        for i, (_, ch) in enumerate(nd.children):
            parent[ch] = (made[h], i)
    return made[tree.root], made, parent


def _bfs(tree: GameTree) -> list[int]:
    out, queue = [], deque([tree.root])
    while queue:
        h = queue.popleft()
        out.append(h)
        queue.extend(ch for _, ch in tree.nodes[h].children)
    return out


def _merge(nodes: Sequence[_W], where: int) -> _W:
    first = nodes[0]
    labels = [lab for lab, _ in first.children]
    for nd in nodes[1:]:
        if nd.player != first.player or [lab for lab, _ in nd.children] != labels or nd.prefix != first.prefix:
            raise CoarsenError(f"subtrees below chance node {where} differ in shape and cannot be merged")
    origin = frozenset().union(*(nd.origin for nd in nodes))
    if not labels:
        return _W(None, [], origin)
    dist = None
    if first.player == 0:
        dist = {lab: math.fsum(nd.dist[lab] for nd in nodes) / len(nodes) for lab in labels}
    children = [(lab, _merge([nd.children[i][1] for nd in nodes], where)) for i, lab in enumerate(labels)]
    return _W(first.player, children, origin, dist, first.prefix)


def _abstract_node(tree: GameTree, h: int, work_children, condense: bool) -> tuple[_W, tuple[str, ...], Condensed]:
    """Replacement decision node for chance node ``h``."""
    kids = [(lab, tree.nodes[ch], ch) for lab, ch in tree.nodes[h].children]
    j = kids[0][1].player
    sources = tuple(dict.fromkeys(nd.infoset for _, nd, _ in kids))
    comps = [tree.infosets[j][s].actions for s in sources]
    plan = condense_branching(comps) if condense else _flat_product(comps)
    by_label = {lab: w for lab, w in work_children}
    anchor = frozenset(ch for _, _, ch in kids)

    def continuation(actions: tuple[str, ...]) -> _W:
        pick = dict(zip(sources, actions))
        parts = []
        for lab, nd, _ in kids:
            w = by_label[lab]
            a = pick[nd.infoset]
            parts.append(next(c for l2, c in w.children if l2 == a))
        return _merge(parts, h)

    built: dict[tuple[str, ...], _W] = {}
    for tup, path in plan.leaves.items():
        built[path] = continuation(tup)
    for prefix in sorted(plan.nodes, key=len, reverse=True):
        kids_w = [(lab, built[prefix + (lab,)]) for lab in plan.nodes[prefix]]
        built[prefix] = _W(j, kids_w, anchor, None, prefix)
    return built[()], sources, plan


@dataclass
class CoarsenedGame:
    """A coarsened game plus the certificate linking it to the source game.

    ``certificate`` holds, per coarse infoset, the true infosets it covers
    and, per coarse action label, the true actions it stands for; per
    abstracted group it also lists the action tuples of the merged space.
    ``origins`` maps every coarse node to the source nodes it represents.
    """

    game: GameTree
    certificate: dict
    origins: dict[int, tuple[int, ...]]

    def to_dict(self) -> dict:
        return {"game": self.game.to_dict(), "certificate": self.certificate,
                "origins": {str(k): list(v) for k, v in self.origins.items()}}


def chance_nodes_at(tree: GameTree, k: int) -> list[int]:
    """Chance nodes that are the ``k``-th chance event on their path (1-based)."""
    out, stack = [], [(tree.root, 0)]
    while stack:
        h, seen = stack.pop()
        nd = tree.nodes[h]
        if nd.player == 0 and nd.children:
            seen += 1
            if seen == k:
                out.append(h)
        stack.extend((ch, seen) for _, ch in nd.children)
    return sorted(out)


def _depths(tree: GameTree) -> dict[int, int]:
    depth = {tree.root: 0}
    for h in _bfs(tree):
        for _, ch in tree.nodes[h].children:
            depth[ch] = depth[h] + 1
    return depth


def coarsen(tree: GameTree, spec: CoarseningSpec, condense: bool = True) -> CoarsenedGame:
    """Abstract the chance nodes of ``spec`` out of ``tree``.

    Chance nodes are processed deepest first, ties by node id. Each is
    replaced by one decision node of the player moving after it; when one
    outcome is kept the chance node is deterministic and is spliced out in
    the same way.
    """
    errs = spec.validate(tree)
    if errs:
        raise CoarsenError("; ".join(errs))
    if not any(spec.removed.values()):
        infs = {iid: [iid] for table in tree.infosets.values() for iid in table}
        return CoarsenedGame(tree.structure(), {"infosets": infs, "actions": {}, "merged": {}},
                             {h: (h,) for h in range(len(tree.nodes))})
    root, made, parent = _build_work(tree)
    depth = _depths(tree)
    todo = sorted((h for h, labs in spec.removed.items() if labs), key=lambda h: (-depth[h], h))
    plans: dict[tuple[int, tuple[str, ...]], tuple[Condensed, list[int]]] = {}
    for h in todo:
        g, sources, plan = _abstract_node(tree, h, made[h].children, condense)
        j = tree.nodes[tree.nodes[h].children[0][1]].player
        plans.setdefault((j, sources), (plan, []))[1].append(h)
        link = parent[h]
        if link is None:
            root = g
        else:
            pw, i = link
            pw.children[i] = (pw.children[i][0], g)
        made[h] = g
    return _emit(tree, spec, root, plans)


def _emit(tree: GameTree, spec: CoarseningSpec, root: _W, plans) -> CoarsenedGame:
    order, queue = [], deque([root])
    while queue:
        w = queue.popleft()
        order.append(w)
        queue.extend(c for _, c in w.children)
    ids = {id(w): i for i, w in enumerate(order)}

    # true infosets covered by each decision node, unioned into classes
    true_of = {h: nd.infoset for h, nd in enumerate(tree.nodes) if nd.infoset is not None}
    uf: dict[str, str] = {}

    def find(x):
        while uf.setdefault(x, x) != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    covers = {}
    for w in order:
        if w.player in (None, 0):
            continue
        infs = sorted({true_of[h] for h in w.origin if h in true_of})
        covers[id(w)] = infs
        for s in infs:
            uf[find(s)] = find(infs[0])
    classes: dict[str, set[str]] = {}
    for s in list(uf):
        classes.setdefault(find(s), set()).add(s)

    def name(w) -> str:
        base = "|".join(sorted(classes[find(covers[id(w)][0])]))
        return base if not w.prefix else base + "@" + "/".join(w.prefix)

    nodes, chance, infosets = [], {}, {}
    for i, w in enumerate(order):
        if w.player is None:
            nodes.append(Node(None))
            continue
        kids = tuple((lab, ids[id(c)]) for lab, c in w.children)
        if w.player == 0:
            nodes.append(Node(0, kids))
            chance[i] = w.dist
            continue
        iid = name(w)
        nodes.append(Node(w.player, kids, iid))
        info = infosets.setdefault(w.player, {}).setdefault(iid, {"nodes": [], "actions": [lab for lab, _ in kids]})
        info["nodes"].append(i)
        if info["actions"] != [lab for lab, _ in kids]:
            raise CoarsenError(f"coarse infoset {iid!r} has inconsistent actions")
    try:
        game = GameTree(tree.players, nodes, chance, infosets, ids[id(root)], require_payoffs=False)
    except InvalidGameError as exc:
        raise CoarsenError(f"coarsened structure is not a valid game: {exc}") from None

    cert_infosets = {}
    cert_actions = {}
    for w in order:
        if w.player in (None, 0):
            continue
        iid = name(w)
        cert_infosets[iid] = sorted(classes[find(covers[id(w)][0])])
    for (j, sources), (plan, chance_nodes) in plans.items():
        base = "|".join(sorted(classes[find(sources[0])]))
        for prefix, labels in plan.nodes.items():
            iid = base if not prefix else base + "@" + "/".join(prefix)
            k = plan.component[prefix]
            if k < 0:
                cert_actions[iid] = {lab: dict(zip(sources, plan.groups[lab])) for lab in labels}
            else:
                cert_actions[iid] = {lab: {sources[k]: list(plan.groups[lab])} for lab in labels}
    groups = {}
    for (j, sources), (plan, chance_nodes) in plans.items():
        removed = set().union(*(spec.removed[h] for h in chance_nodes))
        merged = coarsen_infosets(tree, sources, chance_nodes, removed)
        groups["|".join(sorted(classes[find(sources[0])]))] = {
            "player": j,
            "sources": list(sources),
            "chance_nodes": list(chance_nodes),
            "histories_before_dedup": len(merged.raw_histories),
            "histories": [list(hh) for hh in merged.histories],
            "tuples": [{"actions": list(t), "path": list(plan.leaves[t])} for t in merged.actions],
        }
    certificate = {
        "infosets": dict(sorted(cert_infosets.items())),
        "actions": dict(sorted(cert_actions.items())),
        "merged": groups,
    }
    origins = {i: tuple(sorted(w.origin)) for i, w in enumerate(order)}
    return CoarsenedGame(game, certificate, origins)


def check_certificate(tree: GameTree, coarse: CoarsenedGame) -> list[str]:
    """Verify the refinement property and the tuple bijection of a coarsening.

    Every coarse infoset must cover exactly the nodes of the true infosets
    the certificate assigns to it, and every merged tuple decision must map
    its action tuples one-to-one onto root-to-leaf paths of its subtree.
    """
    errs = []
    g = coarse.game
    for j, table in g.infosets.items():
        for iid, info in table.items():
            claimed = coarse.certificate["infosets"].get(iid)
            if claimed is None:
                errs.append(f"coarse infoset {iid!r} missing from the certificate")
                continue
            covered = {h for n in info.nodes for h in coarse.origins[n] if tree.nodes[h].infoset is not None}
            whole = set()
            for s in claimed:
                if s not in tree.infosets.get(j, {}):
                    errs.append(f"coarse infoset {iid!r} claims unknown infoset {s!r}")
                    continue
                whole.update(tree.infosets[j][s].nodes)
            if covered != whole:
                errs.append(f"coarse infoset {iid!r} covers {len(covered)} nodes, its true infosets hold {len(whole)}")
    for base, grp in coarse.certificate["merged"].items():
        paths = [tuple(t["path"]) for t in grp["tuples"]]
        if len(set(paths)) != len(paths):
            errs.append(f"merged infoset {base!r}: action tuples share a path")
        sizes = [len(tree.infosets[grp["player"]][s].actions) for s in grp["sources"]]
        if len(paths) != math.prod(sizes):
            errs.append(f"merged infoset {base!r}: {len(paths)} tuples, expected {math.prod(sizes)}")
    return errs


def max_branching(tree: GameTree, nodes: Iterable[int] | None = None) -> int:
    ids = range(len(tree.nodes)) if nodes is None else nodes
    return max((len(tree.nodes[h].children) for h in ids), default=0)


def isomorphic(a: GameTree, b: GameTree, tol: float = 1e-12) -> bool:
    """Structural equality: players, infoset names, edge labels and chance laws."""
    if a.players != b.players:
        return False
    stack = [(a.root, b.root)]
    while stack:
        x, y = stack.pop()
        nx, ny = a.nodes[x], b.nodes[y]
        if (nx.player, nx.infoset) != (ny.player, ny.infoset):
            return False
        if [lab for lab, _ in nx.children] != [lab for lab, _ in ny.children]:
            return False
        if nx.player == 0 and nx.children:
            if any(abs(a.chance[x][lab] - b.chance[y][lab]) > tol for lab, _ in nx.children):
                return False
        stack.extend((cx, cy) for (_, cx), (_, cy) in zip(nx.children, ny.children))
    return True
