import json

import numpy as np
import pytest

from tegta import games
from tegta.game_tree import (
    GameTree, InvalidGameError, StrategyProfile, best_response, enumerate_pure_strategies,
    expected_payoff, is_eps_nash, leaf_distribution, load_game, pure_to_flat, reach_probability, regret,
    save_game,
)
from tegta.games import TreeBuilder


def one_shot(utils):
    b = TreeBuilder(1)
    root = b.decision(1, "1:", tuple(f"a{i}" for i in range(len(utils))))
    for i, u in enumerate(utils):
        b.link(root, f"a{i}", b.terminal((u,)))
    return b.build()


def test_single_node_tree_is_valid():
    b = TreeBuilder(2)
    b.terminal((3.0, -1.0))
    tree = b.build()
    assert tree.n_leaves == 1
    assert expected_payoff(tree, StrategyProfile.uniform(tree)).tolist() == [3.0, -1.0]


def test_bad_chance_distribution_reports_sum():
    b = TreeBuilder(1)
    c = b.chance_node({"A": 0.6, "B": 0.5})
    b.link(c, "A", b.terminal((0.0,)))
    b.link(c, "B", b.terminal((1.0,)))
    with pytest.raises(InvalidGameError, match="sums to 1.1"):
        b.build()


def test_negative_chance_mass_rejected():
    b = TreeBuilder(1)
    c = b.chance_node({"A": 1.5, "B": -0.5})
    b.link(c, "A", b.terminal((0.0,)))
    b.link(c, "B", b.terminal((1.0,)))
    with pytest.raises(InvalidGameError):
        b.build()


def test_imperfect_recall_rejected():
    # player 1 forgets its first action at the second decision
    b = TreeBuilder(1)
    root = b.decision(1, "first", ("l", "r"))
    for a in "lr":
        h = b.decision(1, "second", ("x", "y"))
        b.link(root, a, h)
        for x in "xy":
            b.link(h, x, b.terminal((0.0,)))
    with pytest.raises(InvalidGameError):
        b.build()


def test_generated_game1_valid(game1):
    assert isinstance(game1, GameTree)


def test_reach_root_and_chance_leaf():
    tree = games.worked_example_tree()
    prof = StrategyProfile.uniform(tree)
    assert reach_probability(tree, tree.root, prof).total == pytest.approx(1.0)
    pure = StrategyProfile.from_pure(tree, [(0,), (0, 0)])
    # leaf under B, player 2 plays b0
    leaf = tree.nodes[5].children[0][1]
    assert reach_probability(tree, leaf, pure).total == pytest.approx(0.4)


def test_leaf_distribution_sums_to_one(game1):
    rng = np.random.default_rng(3)
    probs = []
    for pi in game1.c.players:
        x = rng.random(pi.n_flat)
        for k in range(pi.n_infosets):
            s = slice(pi.offsets[k], pi.offsets[k + 1])
            x[s] /= x[s].sum()
        probs.append(x)
    d = leaf_distribution(game1, StrategyProfile(tuple(probs)))
    assert d.sum() == pytest.approx(1.0, abs=1e-9)


def test_expected_payoff_chance_mixture():
    b = TreeBuilder(1)
    c = b.chance_node({"A": 0.55, "B": 0.45})
    b.link(c, "A", b.terminal((10.0,)))
    b.link(c, "B", b.terminal((0.0,)))
    tree = b.build()
    assert expected_payoff(tree, StrategyProfile.uniform(tree))[0] == pytest.approx(5.5)


def test_best_response_argmax_and_tie():
    tree = one_shot([0.0, 5.0, 2.0])
    pure, v = best_response(tree, 1, StrategyProfile.uniform(tree), return_value=True)
    assert tuple(pure) == (1,) and v == 5.0
    tie = one_shot([1.0, 1.0])
    assert tuple(best_response(tie, 1, StrategyProfile.uniform(tie))) == (0,)


def test_best_response_player_out_of_range():
    tree = one_shot([0.0])
    with pytest.raises(ValueError):
        best_response(tree, 2, StrategyProfile.uniform(tree))


def deviation_values(tree, prof, j):
    return [expected_payoff(tree, prof.replace(j, pure_to_flat(tree, j, p)))[j - 1]
            for p in enumerate_pure_strategies(tree, j)]


def test_best_response_matches_enumeration(game1):
    base = StrategyProfile.uniform(game1)
    for j, count in ((1, 10), (2, 100)):
        vals = deviation_values(game1, base, j)
        assert len(vals) == count
        _, v = best_response(game1, j, base, return_value=True)
        assert v == pytest.approx(max(vals), abs=1e-9)


def test_regret_matching_pennies_uniform_is_zero():
    tree = games.matching_pennies()
    per, total = regret(tree, StrategyProfile.uniform(tree))
    assert total == pytest.approx(0.0, abs=1e-12)
    assert is_eps_nash(tree, StrategyProfile.uniform(tree), 0.0)


def test_regret_of_pure_profile_matches_enumeration(game1):
    prof = StrategyProfile.from_pure(game1, [(3,), (1, 7)])
    per, _ = regret(game1, prof)
    base = expected_payoff(game1, prof)
    for j in (1, 2):
        best = max(deviation_values(game1, prof, j))
        assert per[j - 1] == pytest.approx(best - base[j - 1], abs=1e-9)


def test_is_eps_nash_detects_regret():
    tree = one_shot([0.0, 0.2])
    prof = StrategyProfile.from_pure(tree, [(0,)])
    assert not is_eps_nash(tree, prof, 0.1)
    assert is_eps_nash(tree, prof, 0.2 + 1e-12)
    with pytest.raises(ValueError):
        is_eps_nash(tree, prof, -1.0)


def test_dominant_profile_has_zero_regret():
    tree = games.dominant_game()
    prof = StrategyProfile.from_pure(tree, [(1,), (1,)])
    assert regret(tree, prof)[1] == 0.0


def test_save_load_roundtrip(tmp_path, game1):
    path = tmp_path / "g.json"
    save_game(game1, path)
    back = load_game(path)
    assert back.to_dict() == game1.to_dict()


def test_load_rejects_missing_payoffs(tmp_path):
    tree = games.worked_example_tree()
    data = tree.to_dict()
    for nd in data["nodes"]:
        if not nd["children"]:
            nd["utility"] = None
    path = tmp_path / "g.json"
    path.write_text(json.dumps(data))
    with pytest.raises(InvalidGameError):
        load_game(path)
    assert load_game(path, require_payoffs=False).n_leaves == 4
