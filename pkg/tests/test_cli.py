import json

import numpy as np
import pytest

from hatgae.cli import CONFIG_KEYS, main, num_from_rounds, parse_config_text
from hatgae.exceptions import ConfigError
from hatgae.graph import Graph, load_graph_bundle, save_graph_bundle

QUICK = """\
# small run
dataset = sbm:n_nodes=60,feat_dim=8
pf = 0.2
pn = 0.5
num = 2
epochs = 4
hidden = 8
heads = 4
seed = 1
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(QUICK)
    return str(path)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_keys_are_exact():
    assert CONFIG_KEYS == ("dataset", "pf", "pn", "num", "epochs", "lr", "weight_decay", "hidden",
                           "heads", "seed", "centrality", "variant", "stop_grad_target")
    with pytest.raises(ConfigError, match="did you mean 'pf'"):
        parse_config_text("pff = 0.1\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("pf=0.1\npf=0.2\n")
    with pytest.raises(ConfigError, match="key=value"):
        parse_config_text("pf 0.1\n")


def test_unknown_key_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("dataset = sbm\npff = 0.1\n")
    code, _, err = run(["train", "--config", cfg, "--out", tmp_path / "o"], capsys)
    assert code == 2
    assert "'pff'" in err and "'pf'" in err


def test_bad_value_and_infeasible_schedule(config, tmp_path, capsys):
    assert run(["train", "--config", config, "--set", "epochs=abc", "--out", tmp_path / "o"], capsys)[0] == 2
    code, _, err = run(["train", "--config", config, "--set", "pf=0.1", "--out", tmp_path / "o"], capsys)
    assert code == 2 and "ScheduleExhausted" not in err and "round" in err


def test_missing_files_are_io_errors(tmp_path, capsys):
    assert run(["train", "--config", tmp_path / "nope.cfg", "--out", tmp_path / "o"], capsys)[0] == 4
    assert run(["importance", tmp_path / "nope"], capsys)[0] == 4


def test_numerical_failure_exit_code(tmp_path, capsys):
    save_graph_bundle(Graph.from_edges(3, [], np.eye(3)), tmp_path / "g")
    assert run(["importance", tmp_path / "g", "--method", "eigenvector"], capsys)[0] == 3


def test_synth_roundtrip(tmp_path, capsys):
    code, out, _ = run(["synth", "--out", tmp_path / "g", "--n-nodes", 50, "--seed", 3], capsys)
    assert code == 0 and "50 nodes" in out
    g = load_graph_bundle(tmp_path / "g")
    assert g.n_nodes == 50 and g.labels is not None
    assert json.loads((tmp_path / "g" / "manifest.json").read_text())["command"] == "synth"


def test_importance_three_node_example(tmp_path, capsys):
    save_graph_bundle(Graph.from_edges(3, [(0, 1), (0, 2), (1, 2)], [[1, 0], [0, 1], [1, 1]],
                                       directed=True), tmp_path / "g")
    code, out, _ = run(["importance", tmp_path / "g"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "# method=indegree"
    assert [float(line.split("\t")[1]) for line in lines[1:]] == [0, 1, 2]
    code, out, _ = run(["importance", tmp_path / "g", "--method", "pagerank",
                        "--out", tmp_path / "pr.tsv"], capsys)
    assert (tmp_path / "pr.tsv").read_text().startswith("# method=pagerank alpha=0.85")
    assert (tmp_path / "pr.tsv.manifest.json").exists()


def test_schedule_preview(capsys):
    code, out, _ = run(["schedule-preview", "--n-dims", 100, "--pf", 0.1, "--rounds", 3], capsys)
    rows = [line.split("\t") for line in out.splitlines()[1:]]
    assert code == 0
    assert [r[2] for r in rows] == ["10", "9", "8"]
    assert [r[1] for r in rows] == ["100", "90", "81"]
    assert len(rows[0][3].split(",")) == 10
    assert run(["schedule-preview", "--n-dims", 4, "--pf", 0.5, "--rounds", 3], capsys)[0] == 2


def test_train_outputs_and_replay(config, tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(["train", "--config", config, "--out", out, "--strict"], capsys)
    assert code == 0 and "final loss" in stdout
    for name in ("loss.jsonl", "train_log.jsonl", "checkpoint.ckpt", "embeddings.tsv",
                 "probe.json", "manifest.json"):
        assert (out / name).exists(), name
    records = [json.loads(line) for line in (out / "loss.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [0, 1, 2, 3]
    assert set(records[0]) == {"epoch", "level", "loss", "noisy_count"}
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["train_config"]["pf"] == 0.2 and manifest["dataset"]["kind"] == "sbm"

    assert run(["replay", out / "manifest.json", "--out", tmp_path / "again"], capsys)[0] == 0
    assert (tmp_path / "again" / "loss.jsonl").read_bytes() == (out / "loss.jsonl").read_bytes()


def test_train_runs(config, tmp_path, capsys):
    for flag in ("--rerun-probe", "--rerun-encoder"):
        out = tmp_path / flag
        assert run(["train", "--config", config, "--out", out, "--runs", 2, flag], capsys)[0] == 0
        probe = json.loads((out / "probe.json").read_text())
        assert len(probe["runs"]) == 2 and probe["rerun"] == flag[8:]


def test_embed_and_probe(config, tmp_path, capsys):
    run(["synth", "--out", tmp_path / "g", "--n-nodes", 60, "--feat-dim", 8], capsys)
    out = tmp_path / "run"
    assert run(["train", "--config", config, "--set", f"dataset={tmp_path / 'g'}", "--out", out], capsys)[0] == 0
    emb = tmp_path / "emb.tsv"
    assert run(["embed", "--graph", tmp_path / "g", "--checkpoint", out / "checkpoint.ckpt",
                "--out", emb], capsys)[0] == 0
    assert emb.read_bytes() == (out / "embeddings.tsv").read_bytes()
    code, stdout, _ = run(["probe", "--graph", tmp_path / "g", "--embeddings", emb], capsys)
    result = json.loads(stdout)
    assert code == 0 and result["metric"] == "accuracy" and 0 <= result["value"] <= 1
    assert result["value"] == json.loads((out / "probe.json").read_text())["value"]


def test_ablate(config, tmp_path, capsys):
    out = tmp_path / "abl"
    code, stdout, _ = run(["ablate", "--config", config, "--out", out], capsys)
    assert code == 0
    rows = [line.split("\t") for line in (out / "ablation.tsv").read_text().splitlines()]
    assert rows[0] == ["variant", "loss_final", "probe_metric", "n_params", "note"]
    assert [r[0] for r in rows[1:]] == ["full", "am", "hm", "tc"]
    assert int(rows[1][3]) - int(rows[4][3]) == 8
    assert "noise vector excluded" in rows[4][4]
    # the random dimension order of the am variant is reproducible
    assert run(["ablate", "--config", config, "--out", tmp_path / "abl2"], capsys)[0] == 0
    assert (tmp_path / "abl2" / "am" / "loss.jsonl").read_bytes() == (out / "am" / "loss.jsonl").read_bytes()


def test_sweep_pn(config, tmp_path, capsys):
    values = [f"0.{i}" for i in range(1, 10)]
    code, _, _ = run(["sweep", "--config", config, "--axis", "pn", "--values", *values,
                      "--out", tmp_path / "s"], capsys)
    rows = (tmp_path / "s" / "sweep.tsv").read_text().splitlines()[1:]
    assert code == 0 and len(rows) == 9
    assert all(r.endswith("ok") for r in rows)


def test_sweep_guards(config, tmp_path, capsys):
    assert run(["sweep", "--config", config, "--axis", "pf", "--values", 0.2, 0.95,
                "--out", tmp_path / "s"], capsys)[0] == 2
    assert run(["sweep", "--config", config, "--axis", "pf", "--values", 0.95, "--max-rate", 0.99,
                "--out", tmp_path / "s2"], capsys)[0] == 0


def test_sweep_failing_cell_does_not_abort(config, tmp_path, capsys):
    code, _, _ = run(["sweep", "--config", config, "--axis", "pf", "--values", 0.05, 0.2,
                      "--out", tmp_path / "s"], capsys)
    rows = (tmp_path / "s" / "sweep.tsv").read_text().splitlines()[1:]
    assert code == 0
    assert "ScheduleExhausted" in rows[0] and rows[1].endswith("ok")


def test_sweep_num_as_rounds(config, tmp_path, capsys):
    assert num_from_rounds(2000, 10) == 200
    code, _, _ = run(["sweep", "--config", config, "--set", "epochs=8", "--axis", "num",
                      "--values", 1, 2, "--as-rounds", "--out", tmp_path / "s"], capsys)
    rows = [r.split("\t") for r in (tmp_path / "s" / "sweep.tsv").read_text().splitlines()[1:]]
    assert code == 0 and [r[1] for r in rows] == ["8", "4"]
