import csv
import json

import pytest

from rotamer_forge.cli import main
from rotamer_forge.config import THREADS_ENV, resolve
from rotamer_forge.errors import ConfigError


@pytest.fixture
def paths(fixtures_dir):
    return {
        "corpus": str(fixtures_dir / "corpus"),
        "test_corpus": str(fixtures_dir / "test_corpus"),
        "lib": str(fixtures_dir / "mini_rotamer_library.bbdep.lib.gz"),
        "ini": str(fixtures_dir / "toy.ini"),
        "ckpt": str(fixtures_dir / "toy.rfck"),
        "pdb": str(fixtures_dir / "corpus" / "1syc.pdb"),
    }


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    cwd = tmp_path / "cwd"
    cwd.mkdir()
    monkeypatch.chdir(cwd)
    monkeypatch.delenv(THREADS_ENV, raising=False)
    return tmp_path


def test_usage_errors(capsys):
    assert main([]) == 2
    assert main(["no-such-command"]) == 2
    assert main(["evaluate", "--bogus"]) == 2
    assert main(["analyze"]) == 2


def test_runtime_error_is_exit_1(workdir, capsys, paths):
    rc = main(["train", "--data", str(workdir / "missing.jsonl"), "--rotamer-lib", paths["lib"],
               "--out", str(workdir / "o")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_prepare_data_manifest(workdir, paths):
    out = workdir / "prep"
    assert main(["prepare-data", "--structures", paths["corpus"], "--config", paths["ini"], "--out", str(out)]) == 0
    entries = [json.loads(line) for line in (out / "manifest.jsonl").read_text().splitlines()]
    split = {e["id"]: e["split"] for e in entries}
    assert split["2low"] == split["2rfr"] == "excluded"
    assert {k for k, v in split.items() if v in ("train", "validation")} == {f"1sy{c}" for c in "abcdef"}
    echo = json.loads((out / "run_config.json").read_text())
    assert echo["command"] == "prepare-data"
    assert echo["run_config"]["data"]["resolution_max"] == 1.8
    assert not list((workdir / "cwd").iterdir())


def test_train_evaluate_analyze(workdir, paths):
    prep, trained, ev = workdir / "prep", workdir / "train", workdir / "eval"
    assert main(["prepare-data", "--structures", paths["corpus"], "--out", str(prep)]) == 0
    assert main(["train", "--config", paths["ini"], "--data", str(prep / "manifest.jsonl"),
                 "--rotamer-lib", paths["lib"], "--steps", "4", "--checkpoint-every", "2",
                 "--out", str(trained)]) == 0
    lines = (trained / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 1 + 4
    assert sorted(p.name for p in trained.glob("*.rfck")) == ["final.rfck", "step_2.rfck", "step_4.rfck"]
    assert json.loads((trained / "run_config.json").read_text())["run_config"]["train"]["steps"] == 4

    test = workdir / "test"
    assert main(["prepare-data", "--structures", paths["test_corpus"], "--split", "test", "--out", str(test)]) == 0
    assert main(["evaluate", "--checkpoints", str(trained / "final.rfck"), "--test-manifest",
                 str(test / "manifest.jsonl"), "--rotamer-lib", paths["lib"], "--n-rotations", "1",
                 "--out", str(ev)]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert {"Avg", "Buried", "Surface", "per_amino_acid", "strict"} <= set(report)
    assert report["structures"] == ["3tsa", "3tsb"]
    rows = list(csv.DictReader(open(ev / "residues.csv")))
    assert rows and {"id", "aa", "burial", "recovered"} <= set(rows[0])
    assert not list((workdir / "cwd").iterdir())


def test_evaluate_shipped_checkpoint(workdir, paths, capsys):
    test = workdir / "test"
    assert main(["prepare-data", "--structures", paths["test_corpus"], "--split", "test", "--out", str(test)]) == 0
    capsys.readouterr()
    assert main(["evaluate", "--checkpoints", paths["ckpt"], paths["ckpt"], "--test-manifest",
                 str(test / "manifest.jsonl"), "--rotamer-lib", paths["lib"], "--config", paths["ini"],
                 "--out", str(workdir / "ev")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert set(summary) == {"Avg", "Buried", "Surface"}
    assert 0.0 <= summary["Avg"] <= 100.0


@pytest.mark.parametrize("kind,extra,name", [
    ("scan", ["--residue", "A:10", "--step", "30", "--rotations", "2"], "scan.csv"),
    ("saliency", ["--residue", "A:10"], "saliency.csv"),
    ("embed", [], "embeddings.csv"),
])
def test_analyze(workdir, paths, kind, extra, name):
    out = workdir / kind
    assert main(["analyze", kind, "--checkpoint", paths["ckpt"], "--structure", paths["pdb"],
                 "--out", str(out)] + extra) == 0
    rows = list(csv.reader(open(out / name)))
    assert len(rows) > 1
    assert (out / "run_config.json").exists()


def test_inspect_checkpoint(paths, capsys):
    assert main(["inspect-checkpoint", paths["ckpt"]]) == 0
    header = json.loads(capsys.readouterr().out)
    assert header["format_version"] == 1
    assert header["config"]["layers"] == 1


def test_config_precedence(tmp_path, paths):
    ini = tmp_path / "c.ini"
    ini.write_text("[run]\nseed = 3\nthreads = 2\n[train]\nlr = 0.01\nsteps = 7\n")
    cfg = resolve(ini, {}, environ={})
    assert (cfg.seed, cfg.threads, cfg.train.lr, cfg.train.steps, cfg.train.seed) == (3, 2, 0.01, 7, 3)
    assert resolve(ini, {}, environ={THREADS_ENV: "5"}).threads == 5
    cfg = resolve(ini, {"run": {"threads": 4, "seed": 9}, "train": {"steps": 11}}, environ={THREADS_ENV: "5"})
    assert (cfg.threads, cfg.seed, cfg.train.steps, cfg.train.lr, cfg.eval.seed) == (4, 9, 11, 0.01, 9)
    assert resolve(None, {}, environ={}).train.lr == 2e-4


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[train]\nwarp = 1\n")
    with pytest.raises(ConfigError):
        resolve(bad, {}, environ={})
    bad.write_text("[train]\nseed = 1\n")
    with pytest.raises(ConfigError):
        resolve(bad, {}, environ={})
    bad.write_text("[model]\nheads = 7\n")
    with pytest.raises(ConfigError):
        resolve(bad, {}, environ={})


def test_env_threads_echoed(workdir, paths, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")
    out = workdir / "prep"
    assert main(["prepare-data", "--structures", paths["corpus"], "--out", str(out)]) == 0
    assert json.loads((out / "run_config.json").read_text())["run_config"]["threads"] == 1
    out2 = workdir / "prep2"
    assert main(["prepare-data", "--structures", paths["corpus"], "--threads", "1", "--seed", "4",
                 "--out", str(out2)]) == 0
    assert json.loads((out2 / "run_config.json").read_text())["run_config"]["seed"] == 4
