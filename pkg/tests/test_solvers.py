import numpy as np
import pytest

from tegta import games
from tegta.game_tree import StrategyProfile, best_response, expected_payoff, is_eps_nash, regret
from tegta.games import ObservationModel, Simulator, TreeBuilder
from tegta.solvers import (
    QConfig, RestrictedNormalForm, SolverError, cfr, lemke_howson, nash_equilibrium,
    nash_support_enumeration, q_learning_br, regret_matching, uniform_mss,
)

MP = RestrictedNormalForm.bimatrix([[1, -1], [-1, 1]], [[-1, 1], [1, -1]])
PD = RestrictedNormalForm.bimatrix([[3, 0], [5, 1]], [[3, 5], [0, 1]])


def one_shot(utils):
    b = TreeBuilder(1)
    root = b.decision(1, "1:", tuple(f"a{i}" for i in range(len(utils))))
    for i, u in enumerate(utils):
        b.link(root, f"a{i}", b.terminal((u,)))
    return b.build()


def induced_regret(rnf, weights):
    tree = rnf.to_tree()
    prof = StrategyProfile(tuple(np.asarray(w, float) for w in weights))
    return regret(tree, prof)[0]


def test_matching_pennies_unique_mixed():
    eqs = nash_support_enumeration(MP, all_equilibria=True)
    assert len(eqs) == 1
    for w in eqs[0].weights:
        assert np.allclose(w, [0.5, 0.5])


def test_dominance_unique_pure():
    eqs = nash_support_enumeration(PD, all_equilibria=True)
    assert len(eqs) == 1
    assert eqs[0].supports == ((1,), (1,))


def test_selection_prefers_small_support_then_welfare():
    # coordination game: two pure equilibria and one mixed
    rnf = RestrictedNormalForm.bimatrix([[2, 0], [0, 1]], [[2, 0], [0, 1]])
    eqs = nash_support_enumeration(rnf, all_equilibria=True)
    assert len(eqs) == 3
    assert eqs[0].supports == ((0,), (0,))
    assert nash_equilibrium(rnf).supports == ((0,), (0,))


def test_random_games_returned_equilibria_are_exact():
    rng = np.random.default_rng(0)
    for _ in range(20):
        rnf = RestrictedNormalForm(rng.random((3, 4, 2)))
        for eq in nash_support_enumeration(rnf, all_equilibria=True):
            assert np.all(induced_regret(rnf, eq.weights) <= 1e-8)
            assert is_eps_nash(rnf.to_tree(), StrategyProfile(eq.weights), 1e-8)


def test_degenerate_game_still_solved():
    rnf = RestrictedNormalForm.bimatrix(np.ones((3, 3)), np.ones((3, 3)))
    eq = nash_equilibrium(rnf)
    assert rnf.regrets(eq.weights).max() == 0.0


def test_more_than_two_players_rejected():
    with pytest.raises(SolverError):
        nash_support_enumeration(RestrictedNormalForm(np.zeros((2, 2, 2, 3))))


def test_incomplete_tensor_rejected():
    with pytest.raises(ValueError):
        RestrictedNormalForm(np.array([[[0.0, np.nan]]]))


def test_lemke_howson_all_labels():
    rng = np.random.default_rng(1)
    for _ in range(30):
        rnf = RestrictedNormalForm(rng.integers(0, 4, size=(5, 6, 2)).astype(float))
        for label in range(11):
            eq = lemke_howson(rnf, label)
            assert rnf.regrets(eq.weights).max() <= 1e-9


def test_budget_fallback_uses_lemke_howson():
    rng = np.random.default_rng(2)
    rnf = RestrictedNormalForm(rng.random((12, 12, 2)))
    eq = nash_equilibrium(rnf, max_pairs=3)
    assert rnf.regrets(eq.weights).max() <= 1e-9


def test_uniform_mss():
    assert [w.tolist() for w in uniform_mss((1, 4))] == [[1.0], [0.25] * 4]
    rng = np.random.default_rng(3)
    rnf = RestrictedNormalForm(rng.random((3, 4, 2)))
    assert np.allclose(rnf.expected(uniform_mss(rnf)), rnf.payoffs.mean(axis=(0, 1)))
    with pytest.raises(ValueError):
        uniform_mss((0, 2))


def test_cfr_bandit():
    res = cfr(one_shot([0.0, 1.0, 0.3]), 1000)
    assert res.profile.player(1)[1] >= 0.99


def test_cfr_matching_pennies():
    res = cfr(games.matching_pennies(), 10_000)
    for j in (1, 2):
        assert np.allclose(res.profile.player(j), 0.5, atol=1e-2)


def test_cfr_kuhn_exploitability_decreases():
    tree = games.kuhn_poker()
    vals = [cfr(tree, n).exploitability.sum() for n in (100, 1000, 10_000)]
    assert vals[0] >= vals[1] >= vals[2]
    res = cfr(tree, 10_000)
    assert is_eps_nash(tree, res.profile, 0.05)


def test_cfr_rejects_zero_iterations():
    with pytest.raises(ValueError):
        cfr(games.matching_pennies(), 0)
    with pytest.raises(ValueError):
        regret_matching(MP, 0)


def test_regret_matching_matrix():
    w, regs = regret_matching(MP, 20_000)
    assert regs.max() < 0.02


def test_q_learning_bandit():
    tree = one_shot([0.0, 1.0])
    sim = Simulator(tree, ObservationModel(0), 0.0)
    br = q_learning_br(sim, 1, [None], QConfig(episodes=500), np.random.default_rng(0))
    assert br == (1,)


def test_q_learning_no_exploration_locks_first_path():
    tree = one_shot([1.0, 2.0])
    sim = Simulator(tree, ObservationModel(0), 0.0)
    br = q_learning_br(sim, 1, [None], QConfig(epsilon=0.0, episodes=50), np.random.default_rng(0))
    assert br == (0,)


def test_q_learning_deterministic_and_validates(game1):
    sim = Simulator(game1, ObservationModel(1), 0.1)
    opp = [None, (0, 0)]
    cfg = QConfig(episodes=2000)
    a = q_learning_br(sim, 1, opp, cfg, np.random.default_rng(5))
    b = q_learning_br(sim, 1, opp, cfg, np.random.default_rng(5))
    assert a == b
    with pytest.raises(ValueError):
        q_learning_br(sim, 1, opp, QConfig(episodes=0), np.random.default_rng(5))


def test_q_learning_close_to_exact(game1):
    sim = Simulator(game1, ObservationModel(1), 0.1)
    prof = StrategyProfile.from_pure(game1, [(0,), (4, 6)])
    br = q_learning_br(sim, 1, [None, (4, 6)], QConfig(), np.random.default_rng(7))
    _, best = best_response(game1, 1, prof, return_value=True)
    got = expected_payoff(game1, StrategyProfile.from_pure(game1, [br, (4, 6)]))[0]
    assert best - got <= 0.05 * 5.0
