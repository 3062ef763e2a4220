import json

import pytest

from phgpo.cli import main
from phgpo.pipeline import RunConfig, apply_variant, load_config, run_pipeline
from phgpo.trainer import load_checkpoint, save_checkpoint

CFG = {"seed": 1, "corpus": {"synthetic": {"n_tools": 10, "n_episodes": 30, "horizon": 6}},
       "trainer": {"group_size": 3, "warmup_epochs": 1, "stage_horizons": [3, 6],
                   "epochs_per_stage": 1, "final_epochs": 1},
       "eval_samples": 3}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(CFG))
    return p


@pytest.fixture
def trained(tmp_path, cfg_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_path), "--out", str(out)]) == 0
    return out


def test_synth(tmp_path, capsys):
    assert main(["synth", "--tools", "6", "--episodes", "8", "--horizon", "4",
                 "--out", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "corpus.jsonl").read_text().splitlines()
    assert len(lines) == 8
    assert json.loads(capsys.readouterr().out)["episodes"] == 8


def test_train_writes_artifacts(trained):
    for name in ("metrics.jsonl", "checkpoint.json", "config.json", "graph.json",
                 "discoveries.jsonl", "summary.json"):
        assert (trained / name).exists()
    records = [json.loads(l) for l in (trained / "metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in records] == [1, 2, 3]
    assert {"match_ratio", "tool_acc", "diversity", "edge_count", "beta", "p_tf"} <= set(records[0])


def test_train_on_corpus_file(tmp_path):
    main(["synth", "--tools", "6", "--episodes", "20", "--horizon", "4", "--out", str(tmp_path / "s")])
    cfg = dict(CFG, corpus={"path": str(tmp_path / "s" / "corpus.jsonl")})
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(p), "--out", str(tmp_path / "r")]) == 0


def test_eval_is_repeatable(trained, cfg_path, tmp_path, capsys):
    args = ["eval", "--config", str(cfg_path), "--checkpoint", str(trained / "checkpoint.json"),
            "--split", "test"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    report = json.loads((tmp_path / "a.json").read_text())
    assert 0.0 <= report["match_ratio_mean"] <= 1.0


def test_export(trained, tmp_path, capsys):
    graph = json.loads((trained / "graph.json").read_text())
    names = graph["tools"][1:5]
    out = tmp_path / "hm"
    assert main(["export", "--checkpoint", str(trained / "checkpoint.json"),
                 "--heatmap-tools", ",".join(names), "--chain", ",".join(names[:3]),
                 "--task", " ".join(names), "--out", str(out)]) == 0
    rows = (out / "heatmap.csv").read_text().splitlines()
    assert rows[0].split(",")[1:] == names and len(rows) == 5


@pytest.mark.parametrize("argv,msg", [
    (["train", "--config", "nope.json"], "config file not found"),
    (["export", "--checkpoint", "nope.json", "--heatmap-tools", "a", "--task", "x"], "nope.json"),
])
def test_missing_files(argv, msg, capsys):
    assert main(argv) == 2
    assert msg in capsys.readouterr().err


def test_bad_config(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"trainer": {"typo": 1}}')
    assert main(["train", "--config", str(p)]) == 2
    assert "unknown keys" in capsys.readouterr().err
    p.write_text("{oops")
    assert main(["train", "--config", str(p)]) == 2


def test_unknown_variant_and_tool(trained, cfg_path, capsys):
    assert main(["ablate", "--config", str(cfg_path), "--variant", "full", "--variant", "bogus"]) == 2
    err = capsys.readouterr().err
    assert "bogus" in err and "beta_dynamic" in err
    assert main(["export", "--checkpoint", str(trained / "checkpoint.json"),
                 "--heatmap-tools", "zzz", "--task", "x"]) == 2
    assert "unknown tool" in capsys.readouterr().err


def test_ablate_runs_variants(cfg_path, tmp_path):
    assert main(["ablate", "--config", str(cfg_path), "--variant", "no_pheromone",
                 "--variant", "rloo", "--out", str(tmp_path / "ab")]) == 0
    assert (tmp_path / "ab" / "no_pheromone" / "summary.json").exists()
    assert (tmp_path / "ab" / "rloo" / "metrics.jsonl").exists()


def test_variants_apply():
    base = RunConfig()
    assert apply_variant(base, "no_pheromone").trainer.use_pheromone is False
    assert apply_variant(base, "beta_5").trainer.beta_fixed == 5.0
    nc = apply_variant(base, "no_curriculum").trainer
    assert nc.stage_horizons == [20] and nc.p_tf_start == 0.0
    assert nc.total_epochs == base.trainer.total_epochs
    assert base.trainer.use_pheromone is True


def test_seed_env_override(cfg_path, monkeypatch):
    monkeypatch.setenv("PHGPO_SEED", "42")
    assert load_config(cfg_path).seed == 42


def test_checkpoint_byte_round_trip(trained, tmp_path):
    ck = trained / "checkpoint.json"
    save_checkpoint(load_checkpoint(ck), tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == ck.read_bytes()


def test_resume_matches_uninterrupted(cfg_path, tmp_path):
    cfg = load_config(cfg_path)
    full = run_pipeline(cfg, tmp_path / "full")
    run_pipeline(cfg, tmp_path / "part", stop_after=1)
    resumed = run_pipeline(cfg, tmp_path / "part", resume=True)
    for name in ("metrics.jsonl", "checkpoint.json", "summary.json", "discoveries.jsonl"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()
    assert resumed.state.epoch == full.state.epoch
    with pytest.raises(FileNotFoundError):
        run_pipeline(cfg, tmp_path / "empty", resume=True)
