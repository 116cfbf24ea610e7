import json

import pytest

from csmt.cli import main
from csmt.pipeline import PipelineConfig, PipelineError, run_stage

SMALL_CONFIG = """
seed = 11

[synthetic]
n_train = 60
vocab_size = 6
min_len = 4
max_len = 6

[align]
iterations = 3

[table]
prune_threshold = 3

[augment]
k1 = 2
k2 = 1

[model]
n_layers = 1
d_model = 16
n_heads = 2
d_ffn = 32
vocab_mode = "shared_pointer"
dropout = 0.0
warmup = 10
learning_rate = 2e-3

[train]
epochs = 2
batch_size = 16

[translate]
constraints_per_sentence = 1
beam_size = 2

[sweep]
n_max = 2
"""


def write_config(tmp_path, body=SMALL_CONFIG, workdir=None):
    cfg_path = tmp_path / "run.toml"
    wd = workdir or (tmp_path / "run")
    cfg_path.write_text(f'workdir = "{wd}"\n' + body)
    return cfg_path


def test_config_load_errors(tmp_path):
    with pytest.raises(PipelineError):
        PipelineConfig.load(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("workdir = [unclosed\n")
    with pytest.raises(PipelineError):
        PipelineConfig.load(bad)
    no_wd = tmp_path / "nowd.toml"
    no_wd.write_text("seed = 1\n")
    with pytest.raises(PipelineError):
        PipelineConfig.load(no_wd)
    # an explicit workdir argument fills the gap
    cfg = PipelineConfig.load(no_wd, workdir=str(tmp_path / "w"), seed=7)
    assert cfg.seed == 7


def test_config_overrides_win(tmp_path):
    cfg_path = write_config(tmp_path)
    cfg = PipelineConfig.load(cfg_path, workdir=str(tmp_path / "other"), seed=99)
    assert cfg.workdir.name == "other"
    assert cfg.seed == 99
    base = PipelineConfig.load(cfg_path)
    assert base.seed == 11


def test_unknown_stage_rejected(tmp_path):
    cfg = PipelineConfig.load(write_config(tmp_path))
    with pytest.raises(PipelineError):
        run_stage("bogus", cfg)


def test_stage_preconditions(tmp_path):
    cfg = PipelineConfig.load(write_config(tmp_path))
    with pytest.raises(PipelineError, match="synth"):
        run_stage("align", cfg)
    with pytest.raises(PipelineError, match="align"):
        run_stage("table", cfg)
    with pytest.raises(PipelineError, match="synth"):
        run_stage("translate", cfg)  # test corpus is checked first
    run_stage("synth", cfg)
    with pytest.raises(PipelineError, match="train"):
        run_stage("translate", cfg)


def test_full_pipeline_smoke(tmp_path):
    cfg = PipelineConfig.load(write_config(tmp_path))
    wd = cfg.workdir
    for stage in ("synth", "align", "table", "augment", "train", "translate", "evaluate", "sweep"):
        artifacts = run_stage(stage, cfg)
        assert artifacts, stage
        for artifact in artifacts:
            assert artifact.exists(), (stage, artifact)

    report = json.loads((wd / "evaluate" / "report.json").read_text())
    assert set(report) == {"bleu", "copy_success_rate", "n_constraints", "n_sentences"}
    assert report["n_sentences"] == 6
    assert 0.0 <= report["bleu"] <= 100.0
    assert 0.0 <= report["copy_success_rate"] <= 1.0

    sweep_lines = (wd / "sweep" / "sweep.tsv").read_text().splitlines()
    assert sweep_lines[0] == "system\tn\tbleu\tdelta\tcsr"
    assert len(sweep_lines) == 4  # n = 0, 1, 2

    manifest = json.loads((wd / "manifest.json").read_text())
    assert "corpus/train.src" in manifest
    assert "evaluate/report.json" in manifest
    assert all(len(digest) == 64 for digest in manifest.values())

    hyps = (wd / "translate" / "hyps.txt").read_text().splitlines()
    assert len(hyps) == 6
    audit = [json.loads(line) for line in (wd / "translate" / "audit.jsonl").read_text().splitlines()]
    assert all({"applied", "log_prob", "score", "finished"} <= set(rec) for rec in audit)


def test_train_without_augmentation(tmp_path):
    body = SMALL_CONFIG + "\n[train.extra]\n"
    body = body.replace("[train]\nepochs = 2", "[train]\nuse_augmented = false\nepochs = 2")
    cfg = PipelineConfig.load(write_config(tmp_path, body=body))
    run_stage("synth", cfg)
    run_stage("train", cfg)  # must not demand augment artifacts
    assert (cfg.workdir / "train" / "checkpoints" / "final.pt").exists()


def test_cli_exit_codes(tmp_path, capsys):
    cfg_path = write_config(tmp_path)
    assert main(["synth", "--config", str(cfg_path)]) == 0
    out = capsys.readouterr().out
    assert "train.src" in out

    assert main(["align", "--config", str(tmp_path / "nope.toml")]) == 2
    err = capsys.readouterr().err
    assert err.startswith("csmt: ")

    # stage precondition violations also map to exit code 2
    fresh = write_config(tmp_path, workdir=tmp_path / "fresh")
    assert main(["translate", "--config", str(fresh)]) == 2


def test_cli_rejects_unknown_stage(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["bogus", "--config", str(write_config(tmp_path))])
    assert exc.value.code == 2
