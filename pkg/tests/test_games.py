import math

import numpy as np
import pytest

from tegta import games
from tegta.game_tree import StrategyProfile, expected_payoff, leaf_distribution
from tegta.games import ObservationModel, Simulator, TreeBuilder, simulate


def child(tree, node, label):
    return dict(tree.nodes[node].children)[label]


def test_game1_shape(game1):
    assert game1.n_leaves == 200
    assert game1.player(1).n_infosets == 1
    assert game1.player(1).n_flat == 10
    assert game1.player(2).n_infosets == 2


def test_game1_utility_grid(game1):
    u = game1.leaf_utilities()
    assert u.min() >= 0 and u.max() <= 5
    assert np.allclose(u * 4, np.round(u * 4))


def test_seed_determinism():
    for gen in (games.generate_game1, games.generate_game2):
        assert gen(7).to_dict() == gen(7).to_dict()
    assert games.generate_game1(1).to_dict() != games.generate_game1(2).to_dict()


def test_game2_shape(game2):
    assert game2.player(1).n_infosets == 21
    assert game2.n_leaves == 4000
    u = game2.leaf_utilities()
    assert u.min() >= 0 and u.max() <= 10
    assert np.allclose(u * 10, np.round(u * 10))


def test_game3_shape(game3):
    assert game3.player(1).n_infosets == 3652
    assert game3.player(2).n_infosets == 3652
    assert game3.n_leaves == 13824


def test_game3_second_chance_support(game3):
    h = child(game3, game3.root, "A")
    a1 = game3.nodes[h].children[0][0]
    h = child(game3, h, a1)
    a2 = game3.nodes[h].children[0][0]
    h = child(game3, h, a2)
    assert game3.nodes[h].player == 0
    assert set(game3.chance[h]) == {"B", "C", "D"}


def test_observation_model_prefix():
    assert ObservationModel.from_positions([0, 1]).events == 2
    with pytest.raises(ValueError):
        ObservationModel.from_positions([1])
    with pytest.raises(ValueError):
        ObservationModel(-1)


def test_noiseless_deterministic_simulation():
    b = TreeBuilder(2)
    c = b.chance_node({"A": 1.0})
    h = b.decision(1, "1:", ("l", "r"))
    b.link(c, "A", h)
    b.link(h, "l", b.terminal((1.5, -2.0)))
    b.link(h, "r", b.terminal((0.0, 0.0)))
    tree = b.build()
    prof = StrategyProfile.from_pure(tree, [(0,), ()])
    t = simulate(tree, prof, ObservationModel(1), 0.0, np.random.default_rng(0))
    assert t.payoffs == (1.5, -2.0)
    assert t.observations == (((), "A"),)


def test_chance_frequency_binomial(game1):
    prof = StrategyProfile.from_pure(game1, [(0,), (0, 0)])
    c = child(game1, game1.root, game1.nodes[game1.root].children[0][0])
    p = game1.chance[c]["A"]
    n = 100_000
    batch = Simulator(game1, ObservationModel(1), 0.1).sample(prof, n, np.random.default_rng(1))
    labels = [batch.table.prefixes[i][0] for i in batch.prefix]
    freq = labels.count("A") / n
    assert abs(freq - p) <= 4 * math.sqrt(p * (1 - p) / n)


def test_noise_mean_clt():
    b = TreeBuilder(1)
    b.terminal((2.25,))
    tree = b.build()
    n = 100_000
    batch = Simulator(tree, ObservationModel(0), 0.1).sample(StrategyProfile.uniform(tree), n,
                                                             np.random.default_rng(2))
    assert abs(batch.payoffs[:, 0].mean() - 2.25) <= 4 * math.sqrt(0.1 / n)


def test_partial_observation_is_prefix(game2):
    prof = StrategyProfile.uniform(game2)
    batch = Simulator(game2, ObservationModel(1), 0.1).sample(prof, 200, np.random.default_rng(3))
    for t in batch.traces(game2):
        assert len(t.observations) == 1
        assert t.observations[0][0] == ()
    full = Simulator(game2, ObservationModel(2), 0.1).sample(prof, 200, np.random.default_rng(3))
    for t in full.traces(game2):
        assert [tag for tag, _ in t.observations] == [(), (t.observations[0][1],)]


def test_expected_payoff_matches_simulation(game1):
    rng = np.random.default_rng(4)
    prof = StrategyProfile.uniform(game1)
    n = 1_000_000
    batch = Simulator(game1, ObservationModel(1), 0.0).sample(prof, n, rng)
    u = expected_payoff(game1, prof)
    se = batch.payoffs.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(batch.payoffs.mean(axis=0) - u) <= 3 * se + 1e-12)
    assert leaf_distribution(game1, prof).sum() == pytest.approx(1.0)


def test_same_stream_same_traces(game1):
    prof = StrategyProfile.uniform(game1)
    sim = Simulator(game1, ObservationModel(1), 0.1)
    a = sim.sample(prof, 50, np.random.default_rng(9)).traces(game1)
    b = sim.sample(prof, 50, np.random.default_rng(9)).traces(game1)
    assert a == b


def test_negative_noise_rejected(game1):
    with pytest.raises(ValueError):
        Simulator(game1, ObservationModel(1), -0.1)


def test_fixtures_valid():
    for make in (games.kuhn_poker, games.matching_pennies, games.worked_example_tree,
                 games.coarsen_fixture, games.dominant_game):
        assert make().n_leaves > 0
