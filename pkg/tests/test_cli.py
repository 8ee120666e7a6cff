import json
import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from come import cli
from come.embedding import read_word2vec

KARATE = str(resources.files("come.data").joinpath("karate.edges"))
LABELS = str(resources.files("come.data").joinpath("karate.labels"))
FAST = ["--T1", "3", "--gamma", "3", "--ell", "20"]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "karate"
    assert run("train", KARATE, "-o", out, "--preset", "karate-2d", "--top-n", "2") == 0
    return out


def test_train_artifacts(model_dir):
    names = {p.name for p in model_dir.iterdir()}
    assert names == {"embeddings.txt", "community.json", "loss_trace.csv", "model.npz", "manifest.json"}
    ids, vec = read_word2vec(open(model_dir / "embeddings.txt"))
    assert vec.shape == (34, 2)
    assert sorted(map(int, ids)) == list(range(34))
    doc = json.loads((model_dir / "community.json").read_text())
    assert doc["K"] == 4 and len(doc["means"]) == 4 and doc["floor"] > 0
    assert len(doc["assignments"]) == 34
    assert all(len(set(v)) == 2 for v in doc["assignments"].values())
    assert len((model_dir / "loss_trace.csv").read_text().splitlines()) == 11


def test_manifest_references(model_dir):
    manifest = cli.verify_manifest(model_dir)
    doc = json.loads((model_dir / "community.json").read_text())
    assert doc["manifest"] == "manifest.json" and doc["run_id"] == manifest["run_id"]
    assert manifest["inputs"][KARATE] == cli.sha256_file(KARATE)
    assert manifest["config"]["K"] == 4 and manifest["seed"] == 0
    assert {"walks", "pretrain", "iterations", "total"} <= set(manifest["timings"])
    assert "numpy" in manifest["versions"]


def test_tampering_detected(model_dir, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(model_dir, copy)
    with open(copy / "model.npz", "ab") as fh:
        fh.write(b"\0")
    with pytest.raises(cli.IntegrityError):
        cli.verify_manifest(copy)
    assert run("detect", copy) == cli.EXIT_IO


def test_missing_input_leaves_nothing(tmp_path):
    out = tmp_path / "out"
    assert run("train", tmp_path / "missing.edges", "-o", out) == cli.EXIT_IO
    assert not out.exists()
    assert list(tmp_path.iterdir()) == []


def test_malformed_input_is_a_usage_error(tmp_path):
    bad = tmp_path / "bad.edges"
    bad.write_text("0 1 2.5\n")
    assert run("train", bad, "-o", tmp_path / "out") == cli.EXIT_USAGE
    assert not (tmp_path / "out").exists()


def test_numerical_abort_exit_code(tmp_path):
    out = tmp_path / "out"
    assert run("train", KARATE, "-o", out, "--lr0", "1e308", "--d", "4", *FAST) == cli.EXIT_NUMERIC
    assert not out.exists()


def test_same_seed_byte_identical_embeddings(tmp_path):
    for name in ("a", "b"):
        assert run("train", KARATE, "-o", tmp_path / name, "--K", "2", "--d", "8", "--seed", "5", *FAST) == 0
    assert (tmp_path / "a/embeddings.txt").read_bytes() == (tmp_path / "b/embeddings.txt").read_bytes()
    assert (tmp_path / "a/community.json").read_bytes() == (tmp_path / "b/community.json").read_bytes()


def test_original_ids_preserved(tmp_path):
    edges = tmp_path / "sparse.edges"
    edges.write_text("1000 7\n7 42\n42 1000\n42 5\n")
    out = tmp_path / "out"
    assert run("train", edges, "-o", out, "--K", "2", "--d", "4", *FAST) == 0
    ids, _ = read_word2vec(open(out / "embeddings.txt"))
    assert ids == ["1000", "7", "42", "5"]
    assert set(json.loads((out / "community.json").read_text())["assignments"]) == {"1000", "7", "42", "5"}


def test_inputs_not_mutated(tmp_path):
    edges = tmp_path / "g.edges"
    shutil.copy(KARATE, edges)
    before = edges.read_bytes()
    run("train", edges, "-o", tmp_path / "out", "--K", "2", "--d", "4", *FAST)
    assert edges.read_bytes() == before


def test_detect_top_n(model_dir, tmp_path):
    one = tmp_path / "one.txt"
    assert run("detect", model_dir, "-N", 1, "-o", one) == 0
    rows = [line.split() for line in one.read_text().splitlines()]
    assert len(rows) == 34 and all(len(r) == 2 for r in rows)
    three = tmp_path / "three.txt"
    assert run("detect", model_dir, "-N", 3, "-o", three) == 0
    for r in three.read_text().splitlines():
        ks = r.split()[1:]
        assert len(ks) == 3 == len(set(ks))
    assert run("detect", model_dir, "-N", 5) == cli.EXIT_USAGE


def test_detect_then_eval_self_consistent(model_dir, tmp_path, capsys):
    assign = tmp_path / "a.txt"
    run("detect", model_dir, "-N", 1, "-o", assign)
    capsys.readouterr()
    assert run("eval", KARATE, assign, "--labels", assign) == 0
    rows = dict(line.split(",") for line in capsys.readouterr().out.splitlines()[1:])
    assert float(rows["nmi"]) == 1.0


def test_eval_without_labels(model_dir, tmp_path, capsys):
    assign = tmp_path / "a.txt"
    run("detect", model_dir, "-o", assign)
    capsys.readouterr()
    assert run("eval", KARATE, assign) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "metric,value"
    assert [line.split(",")[0] for line in out[1:]] == ["conductance"]


def test_eval_against_factions(model_dir, tmp_path, capsys):
    assign = tmp_path / "a.txt"
    run("detect", model_dir, "-o", assign)
    capsys.readouterr()
    assert run("eval", KARATE, assign, "--labels", LABELS, "--nmi-normalization", "max") == 0
    rows = dict(line.split(",") for line in capsys.readouterr().out.splitlines()[1:])
    assert 0.0 <= float(rows["nmi"]) <= 1.0


def test_eval_perfect_clique_split(tmp_path, capsys):
    edges = tmp_path / "cliques.edges"
    edges.write_text("".join(f"{a} {b}\n" for base in (0, 4) for a in range(base, base + 4)
                             for b in range(a + 1, base + 4)))
    assign = tmp_path / "a.txt"
    assign.write_text("".join(f"{v} {v // 4}\n" for v in range(8)))
    assert run("eval", edges, assign) == 0
    assert "conductance,0.0" in capsys.readouterr().out


def test_eval_coverage_mismatch_lists_ids(tmp_path, capsys):
    assign = tmp_path / "a.txt"
    assign.write_text("".join(f"{v} 0\n" for v in range(30)))
    assert run("eval", KARATE, assign) == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert "4 node(s)" in err and "30 31 32 33" in err


def test_eval_skips_nmi_for_multilabel(model_dir, tmp_path, capsys):
    assign = tmp_path / "a.txt"
    run("detect", model_dir, "-o", assign)
    labels = tmp_path / "multi.labels"
    labels.write_text("".join(f"{v} 0\n{v} 1\n" for v in range(34)))
    capsys.readouterr()
    assert run("eval", KARATE, assign, "--labels", labels) == 0
    captured = capsys.readouterr()
    assert "nmi" not in captured.out
    assert "multi-label" in captured.err


def test_export_text_and_community(model_dir, tmp_path):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    assert run("export", model_dir, "--format", "text", "-o", a) == 0
    assert run("export", model_dir, "--format", "text", "-o", b) == 0
    assert a.read_text().splitlines()[0] == "34 2"
    assert a.read_bytes() == b.read_bytes() == (model_dir / "embeddings.txt").read_bytes()
    c = tmp_path / "c.json"
    assert run("export", model_dir, "--format", "community", "-o", c) == 0
    doc = json.loads(c.read_text())
    assert json.loads(json.dumps(doc)) == doc
    assert doc == json.loads((model_dir / "community.json").read_text())


def test_export_unknown_format(model_dir):
    with pytest.raises(SystemExit) as exc:
        run("export", model_dir, "--format", "binary")
    assert exc.value.code == cli.EXIT_USAGE


def test_config_precedence(tmp_path, monkeypatch):
    cfg = tmp_path / "c.conf"
    cfg.write_text("K=3\nd=16\nbeta=0.3\n")
    parser = cli.build_parser()
    args = parser.parse_args(["train", KARATE, "-o", "x", "--preset", "karate-2d", "--config", str(cfg),
                              "--beta", "0.9"])
    env = {"COME_D": "32", "COME_BETA": "0.5", "COME_ALPHA": "0.2"}
    c = cli.resolve_config(args, env)
    assert c.K == 3          # config file over preset
    assert c.d == 32         # environment over config file
    assert c.alpha == 0.2    # environment over preset
    assert c.beta == 0.9     # flag over everything
    assert c.ell == 80 and c.zeta == 5


def test_bad_environment_value(tmp_path):
    args = cli.build_parser().parse_args(["train", KARATE, "-o", "x"])
    with pytest.raises(cli.UsageError):
        cli.resolve_config(args, {"COME_K": "many"})


def test_invalid_flag_value_is_usage_error(tmp_path):
    assert run("train", KARATE, "-o", tmp_path / "o", "--K", "0") == cli.EXIT_USAGE
    assert run("train", KARATE, "-o", tmp_path / "o", "--K", "40") == cli.EXIT_USAGE


def test_missing_model_dir(tmp_path):
    assert run("detect", tmp_path / "nothing") == cli.EXIT_IO
