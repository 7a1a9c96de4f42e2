import numpy as np
import pytest

from tegta import games
from tegta.estimation import EmpiricalGame, ModelStructure
from tegta.game_tree import StrategyProfile, best_response, expected_payoff
from tegta.games import ObservationModel, Simulator
from tegta.psro import PsroConfig, expand_te_model, run_psro, true_game_regret


def small(**kw):
    args = dict(game="game1", samples=100, max_iters=4, repetitions=2, seed=3)
    args.update(kw)
    return PsroConfig(**args)


def test_dominant_game_converges_fast():
    tree = games.dominant_game()
    for model in ("nf", "te"):
        run = run_psro(PsroConfig(model=model, samples=50, max_iters=10), game=tree)
        (s,) = run.summaries
        assert s.converged and s.iterations <= 2
        assert run.records[-1].regret == pytest.approx(0.0, abs=1e-9)


def test_iterations_contiguous_and_sets_grow():
    run = run_psro(small(model="te"))
    for rep in (0, 1):
        recs = [r for r in run.records if r.repetition == rep]
        assert [r.iteration for r in recs] == list(range(len(recs)))
        sizes = np.array([r.set_sizes for r in recs])
        assert np.all(np.diff(sizes, axis=0) >= 0)
        sims = [r.simulations for r in recs]
        assert sims == sorted(sims)


def test_same_seed_same_metrics():
    a = run_psro(small(model="nf"))
    b = run_psro(small(model="nf"))
    strip = lambda recs: [r.__dict__ | {"wall_time": 0} for r in recs]  # noqa: E731
    assert strip(a.records) == strip(b.records)
    assert a.summaries == b.summaries


def test_paired_models_share_traces():
    nf = run_psro(small(model="nf", max_iters=0))
    te = run_psro(small(model="te", max_iters=0))
    for a, b in zip(nf.records, te.records):
        assert a.shadow_error == pytest.approx(b.estimation_error)
        assert b.shadow_error == pytest.approx(a.estimation_error)


def test_curve_padding():
    run = run_psro(small(model="nf", max_iters=3))
    c = run.curve("regret", length=8)
    assert c.shape == (2, 8)
    assert np.all(c[:, -1] == c[:, -2])


def test_config_validation():
    for bad in (dict(model="xx"), dict(samples=0), dict(repetitions=0), dict(mss="lcp"), dict(br="rl")):
        with pytest.raises(ValueError):
            PsroConfig(**bad)


def test_keep_going_records_failure(monkeypatch):
    import tegta.psro as psro

    def boom(*args, **kwargs):
        raise RuntimeError("solver blew up")

    monkeypatch.setattr(psro, "solve_mss", boom)
    run = run_psro(small(), keep_going=True)
    assert all(s.error == "RuntimeError: solver blew up" for s in run.summaries)
    with pytest.raises(ValueError):
        run.curve("regret")
    with pytest.raises(RuntimeError):
        run_psro(small())


def test_true_game_regret_examples(game1):
    mp = games.matching_pennies()
    sets = [[(0,), (1,)], [(0,), (1,)]]
    assert true_game_regret(mp, sets, [np.array([0.5, 0.5])] * 2) == pytest.approx(0.0)
    pure = [(0,), (0, 0)]
    prof = StrategyProfile.from_pure(game1, pure)
    base = expected_payoff(game1, prof)
    gain = sum(best_response(game1, j, prof, return_value=True)[1] - base[j - 1] for j in (1, 2))
    assert true_game_regret(game1, [[p] for p in pure], [np.ones(1)] * 2) == pytest.approx(gain)
    with pytest.raises(ValueError):
        true_game_regret(game1, [[p] for p in pure], [np.ones(2), np.ones(1)])


def _sampler(tree, m):
    sim = Simulator(tree, ObservationModel(1), 0.1)

    def sample(prof, family):
        return sim.sample(StrategyProfile.from_pure(tree, prof), m, np.random.default_rng(family + 10))
    return sample


def test_expand_families(game1):
    emp = EmpiricalGame(ModelStructure(game1, 1))
    sample = _sampler(game1, 20)
    old = [[(0,), (1,)], [(0, 0)]]
    for p1 in old[0]:
        emp.ingest_batch(sample((p1, (0, 0)), -1), (p1, (0, 0)))
    leaves_before = set(emp.leaves)
    done = expand_te_model(emp, [(2,), (1, 1)], old, 20, sample)
    assert set(done) == {((2,), (0, 0)), ((0,), (1, 0)), ((1,), (1, 0)), ((0,), (0, 1)), ((1,), (0, 1)),
                         ((2,), (1, 1))}
    assert len(done) == 6
    assert len(set(emp.leaves) - leaves_before) > 0
    for node, counts in emp.chance.items():
        assert sum(counts.values()) == emp.visits[node]


def test_expand_retread_adds_no_nodes(game1):
    emp = EmpiricalGame(ModelStructure(game1, 1))
    sample = _sampler(game1, 20)
    old = [[(0,)], [(0, 0)]]
    emp.ingest_batch(sample(((0,), (0, 0)), -1), ((0,), (0, 0)))
    leaves, visits = set(emp.leaves), dict(emp.visits)
    expand_te_model(emp, [(0,), None], old, 20, sample)
    assert set(emp.leaves) == leaves
    assert all(emp.visits[k] == v + 20 for k, v in visits.items())


def test_families_expansion_runs():
    run = run_psro(small(model="te", te_expansion="families", repetitions=1))
    assert run.summaries[0].error is None
    assert run.records[-1].simulations >= run.records[0].simulations


def test_qlearn_and_cfr_options_run():
    run = run_psro(small(model="te", br="qlearn", mss="cfr", repetitions=1, max_iters=2))
    assert len(run.records) >= 1
