import json
from decimal import Decimal

import pytest

from tegta import games
from tegta.cli import main, parse_profile_id, read_trace_log
from tegta.game_tree import load_game

WORKED_LOG = (
    [("0|0.0", "A", x) for x in (99, 95, 100, 96, 95, 100)]
    + [("0|0.0", "B", x) for x in (92, 95, 93, 94)]
    + [("0|1.1", "A", 90 + i) for i in range(5)]
    + [("0|1.1", "B", 95 + i) for i in range(5)]
)


@pytest.fixture
def worked(tmp_path):
    game = tmp_path / "we.json"
    assert main(["gen", "--game", "worked-example", "--out", str(game)]) == 0
    log = tmp_path / "we.log"
    log.write_text("".join(f"{p}\t{o}\t{x},0\n" for p, o, x in WORKED_LOG))
    return game, log


def test_gen_generated_game(tmp_path, capsys):
    out = tmp_path / "g1.json"
    assert main(["gen", "--game", "game1", "--seed", "3", "--out", str(out)]) == 0
    assert load_game(out).to_dict() == games.generate_game1(3).to_dict()


def test_estimate_worked_example(worked, capsys):
    game, log = worked
    assert main(["estimate", "--game", str(game), "--traces", str(log)]) == 0
    rows = capsys.readouterr().out.splitlines()
    assert rows[0] == "profile,model,player,estimate"
    assert "0|0.0,nf,1,95.9" in rows
    assert "0|0.0,te,1,95.7" in rows


def test_estimate_named_profiles(worked, tmp_path, capsys):
    game, log = worked
    profiles = tmp_path / "p.json"
    profiles.write_text(json.dumps({"s": [{"1:": "a0"}, {"2:A": "b0", "2:B": "b0"}]}))
    named = tmp_path / "named.log"
    named.write_text(log.read_text().replace("0|0.0\t", "s\t"))
    assert main(["estimate", "--game", str(game), "--traces", str(named), "--profiles", str(profiles),
                 "--model", "te"]) == 0
    assert "s,te,1,95.7" in capsys.readouterr().out.splitlines()


def test_estimate_missing_data_reported(worked, tmp_path, capsys):
    game, _ = worked
    log = tmp_path / "a.log"
    log.write_text("0|0.0\tA\t1,0\n0|1.1\tB\t1,0\n")
    assert main(["estimate", "--game", str(game), "--traces", str(log), "--model", "te"]) == 0
    assert "missing leaf" in capsys.readouterr().err


def test_bad_trace_line(worked, tmp_path, capsys):
    game, _ = worked
    log = tmp_path / "bad.log"
    log.write_text("0|0.0\tA\n")
    assert main(["estimate", "--game", str(game), "--traces", str(log)]) == 2
    assert "expected 3 tab-separated fields" in capsys.readouterr().err


def test_profile_id_parsing():
    tree = games.worked_example_tree()
    assert parse_profile_id(tree, "0|1.0", None) == ((0,), (1, 0))
    with pytest.raises(ValueError):
        parse_profile_id(tree, "0", None)
    with pytest.raises(ValueError):
        parse_profile_id(tree, "x|y", None)


def test_read_trace_log_skips_comments(tmp_path):
    p = tmp_path / "l.log"
    p.write_text("# header\n\n0|0.0\tA B\t1.5,2\n")
    assert list(read_trace_log(p)) == [("0|0.0", ("A", "B"), (Decimal("1.5"), Decimal("2")))]


def test_coarsen_command(tmp_path, capsys):
    game = tmp_path / "f.json"
    main(["gen", "--game", "coarsen-fixture", "--out", str(game)])
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"0": ["B"]}))
    out, cert = tmp_path / "c.json", tmp_path / "cert.json"
    assert main(["coarsen", "--game", str(game), "--spec", str(spec), "--out", str(out),
                 "--certificate", str(cert)]) == 0
    coarse = load_game(out, require_payoffs=False)
    assert len(coarse.infosets[2]) == 5
    assert "merged" in json.loads(cert.read_text())["certificate"]


def test_coarsen_bad_spec(tmp_path, capsys):
    game = tmp_path / "f.json"
    main(["gen", "--game", "coarsen-fixture", "--out", str(game)])
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"0": ["Q"]}))
    assert main(["coarsen", "--game", str(game), "--spec", str(spec), "--out", str(tmp_path / "o.json")]) == 2
    assert "are not outcomes" in capsys.readouterr().err


def test_invalid_game_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    data = games.worked_example_tree().to_dict()
    data["chance"]["1"] = {"A": 0.6, "B": 0.5}
    bad.write_text(json.dumps(data))
    assert main(["estimate", "--game", str(bad), "--traces", str(bad)]) == 2
    assert "sums to 1.1" in capsys.readouterr().err


def test_run_bounds_plot(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["run", "--game", "game1", "--samples", "50", "--reps", "2", "--max-iters", "2",
                 "--seed", "1", "--out", str(run)]) == 0
    out = capsys.readouterr().out
    assert "NF: 2 repetitions" in out
    assert (run / "metrics.csv").exists() and (run / "regret.svg").exists()
    assert main(["bounds", "--run", str(run)]) == 0
    report = capsys.readouterr().out
    assert "eps_NF=" in report and "rep   0" in report
    assert main(["bounds", "--run", str(run), "--range-proxy"]) == 0
    assert "variance proxy 6.35" in capsys.readouterr().out
    svg = tmp_path / "lin.svg"
    assert main(["plot", "--run", str(run), "--metric", "linf", "--out", str(svg)]) == 0
    assert svg.read_text().startswith("<?xml")
    assert main(["plot", "--run", str(run), "--metric", "nope"]) == 1


def test_run_single_variant(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["run", "--game", "game2", "--model", "te", "--obs-events", "1", "--samples", "20",
                 "--reps", "1", "--max-iters", "1", "--out", str(run)]) == 0
    out = capsys.readouterr().out
    assert "TE (1 event)" in out and "NF:" not in out


def test_unknown_subcommand_exits():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
