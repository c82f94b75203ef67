import csv
import json

import pytest

from finealign.jsonl import read_jsonl
from conftest import run_cli

SMALL = {"synth": {"n_samples": 10, "n_patches": 4, "d_in": 3},
         "tfr": {"d": 8, "n_heads": 2, "depth": 1, "d_embed": 4, "steps": 2},
         "model": {"d": 8, "n_heads": 2, "n_encoder_blocks": 1, "n_decoder_blocks": 1, "steps": 3}}


@pytest.fixture
def small(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(SMALL))
    assert run_cli("synth", "--config", cfg, "--out", tmp_path / "data") == 0
    assert run_cli("segment", "--dataset", tmp_path / "data" / "dataset.jsonl", "--out", tmp_path / "seg.jsonl") == 0
    assert run_cli("mine", "--segments", tmp_path / "seg.jsonl", "--out", tmp_path / "trip.jsonl") == 0
    return tmp_path, cfg


def _tfr(tmp_path, cfg):
    rc = run_cli("train-tfr", "--config", cfg, "--dataset", tmp_path / "data" / "dataset.jsonl",
                 "--segments", tmp_path / "seg.jsonl", "--triplets", tmp_path / "trip.jsonl",
                 "--out", tmp_path / "tfr.json")
    assert rc == 0
    return tmp_path / "tfr.json"


def test_small_pipeline_files(small, capsys):
    tmp_path, cfg = small
    tfr = _tfr(tmp_path, cfg)
    data = tmp_path / "data" / "dataset.jsonl"
    assert run_cli("train", "--config", cfg, "--dataset", data, "--tfr", tfr, "--out", tmp_path / "m.json") == 0
    with open(tmp_path / "m.loss.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["step", "total", "ce", "cls_i", "itc"] and len(rows) == 4  # header + 3 steps
    assert run_cli("generate", "--checkpoint", tmp_path / "m.json", "--dataset", data,
                   "--out", tmp_path / "g.jsonl", "--max-len", 5) == 0
    gen = read_jsonl(tmp_path / "g.jsonl")
    assert [g["id"] for g in gen] == [f"s{i}" for i in range(10)]
    assert run_cli("evaluate", "--generated", tmp_path / "g.jsonl", "--dataset", data,
                   "--out", tmp_path / "e.json") == 0
    assert "BLEU-4" in capsys.readouterr().out
    for name in ("e.json", "e.table.txt", "e.samples.csv"):
        assert (tmp_path / name).exists()
    assert len(json.loads((tmp_path / "e.json").read_text())["bleu"]) == 4


def test_mine_cap_zero_writes_empty_file(small):
    tmp_path, _ = small
    out = tmp_path / "empty.jsonl"
    assert run_cli("mine", "--segments", tmp_path / "seg.jsonl", "--out", out, "--cap", 0) == 0
    assert out.read_text() == ""


def test_train_tfr_on_empty_triplets_fails(small, capsys):
    tmp_path, cfg = small
    (tmp_path / "none.jsonl").write_text("")
    rc = run_cli("train-tfr", "--config", cfg, "--dataset", tmp_path / "data" / "dataset.jsonl",
                 "--segments", tmp_path / "seg.jsonl", "--triplets", tmp_path / "none.jsonl",
                 "--out", tmp_path / "tfr.json")
    assert rc == 1
    assert "triplet" in capsys.readouterr().err


def test_train_without_phase1_exits_2(small, capsys):
    tmp_path, cfg = small
    rc = run_cli("train", "--config", cfg, "--dataset", tmp_path / "data" / "dataset.jsonl",
                 "--out", tmp_path / "m.json")
    assert rc == 2
    err = capsys.readouterr().err
    assert "phase 1" in err and "train-tfr" in err
    rc = run_cli("train", "--config", cfg, "--dataset", tmp_path / "data" / "dataset.jsonl",
                 "--tfr", tmp_path / "nope.json", "--out", tmp_path / "m.json")
    assert rc == 2
    assert not (tmp_path / "m.json").exists()


def test_resume_continues_to_same_checkpoint(small):
    tmp_path, cfg = small
    tfr = _tfr(tmp_path, cfg)
    data = tmp_path / "data" / "dataset.jsonl"
    assert run_cli("train", "--config", cfg, "--dataset", data, "--tfr", tfr, "--out", tmp_path / "full.json") == 0
    assert run_cli("train", "--config", cfg, "--dataset", data, "--tfr", tfr, "--out", tmp_path / "half.json",
                   "--steps", 1) == 0
    assert run_cli("train", "--config", cfg, "--dataset", data, "--tfr", tfr, "--resume", tmp_path / "half.json",
                   "--steps", 3, "--out", tmp_path / "resumed.json") == 0
    assert (tmp_path / "full.json").read_bytes() == (tmp_path / "resumed.json").read_bytes()


@pytest.mark.parametrize("body", [
    "{not json",
    json.dumps({"model": {"no_such_key": 1}}),
    json.dumps({"mystery": 3}),
    json.dumps({"model": {"d": 10, "n_heads": 4}}),
])
def test_bad_config_exits_2(tmp_path, body, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(body)
    assert run_cli("synth", "--config", cfg, "--out", tmp_path / "d") == 2
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_bad_flag_values_exit_2(small):
    tmp_path, cfg = small
    assert run_cli("mine", "--segments", tmp_path / "seg.jsonl", "--out", tmp_path / "t.jsonl", "--cap", -1) == 2
    rc = run_cli("train", "--config", cfg, "--dataset", tmp_path / "data" / "dataset.jsonl",
                 "--tfr", tmp_path / "x.json", "--tau", 0)
    assert rc == 2
    assert run_cli("segment", "--dataset", tmp_path / "missing.jsonl") == 2


def test_missing_config_file_exits_2(tmp_path):
    assert run_cli("synth", "--config", tmp_path / "missing.json", "--out", tmp_path / "d") == 2


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"seed": 5, "synth": {"n_samples": 3, "n_patches": 4, "d_in": 3}}))
    assert run_cli("synth", "--config", cfg, "--out", tmp_path / "a", "--n-samples", 2, "--seed", 9) == 0
    assert run_cli("synth", "--config", cfg, "--out", tmp_path / "b", "--n-samples", 2) == 0
    a = (tmp_path / "a" / "dataset.jsonl").read_bytes()
    assert len(read_jsonl(tmp_path / "a" / "dataset.jsonl")) == 2
    assert a != (tmp_path / "b" / "dataset.jsonl").read_bytes()
    # the config's patch geometry survives while the seed flag wins
    rows = read_jsonl(tmp_path / "a" / "dataset.jsonl")
    assert rows[0]["n_patches"] == 4


def test_paths_section_supplies_inputs(small):
    tmp_path, _ = small
    cfg = tmp_path / "paths.json"
    cfg.write_text(json.dumps({"paths": {"segments": str(tmp_path / "seg.jsonl")}}))
    out = tmp_path / "t2.jsonl"
    assert run_cli("mine", "--config", cfg, "--out", out) == 0
    assert out.read_bytes() == (tmp_path / "trip.jsonl").read_bytes()


def test_gradcheck_command(capsys):
    assert run_cli("gradcheck", "--draws", 2, "--check", "triplet_standard", "--check", "lm_cross_entropy") == 0
    out = capsys.readouterr().out
    assert "triplet_standard" in out and "all 2 checks passed" in out


def test_usage_without_command_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        run_cli()
    assert exc.value.code == 2
