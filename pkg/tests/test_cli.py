import subprocess
import sys

import numpy as np
import pytest

from mlab import nn
from mlab.cka import ActivationMatrix
from mlab.cli import main
from mlab.formats import load_checkpoint, save_actmat, save_checkpoint

SMALL = """\
scenario: forgetting
seeds: [0, 1]
training:
  epochs: 5
  sft_epochs: 2
  recovery_epochs: 2
"""


@pytest.fixture
def small_cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def test_cka_same_actmat_prints_one(tmp_path, capsys):
    p = tmp_path / "A.actmat"
    save_actmat(ActivationMatrix(np.random.default_rng(0).standard_normal((10, 4))), p)
    assert main(["cka", str(p), str(p)]) == 0
    assert capsys.readouterr().out.strip() == "1.0"


def test_cka_actmat_csv(tmp_path, capsys):
    a, b = tmp_path / "a.actmat", tmp_path / "b.actmat"
    rng = np.random.default_rng(1)
    save_actmat(ActivationMatrix(rng.standard_normal((10, 4))), a)
    save_actmat(ActivationMatrix(rng.standard_normal((10, 3))), b)
    assert main(["cka", str(a), str(b), "--preprocess", "on", "--csv", str(tmp_path / "p.csv")]) == 0
    value = float(capsys.readouterr().out)
    assert 0.0 <= value <= 1.0
    assert (tmp_path / "p.csv").read_text().startswith("layer,cka,")


def test_cka_row_mismatch_is_validation(tmp_path):
    a, b = tmp_path / "a.actmat", tmp_path / "b.actmat"
    save_actmat(ActivationMatrix(np.eye(3)), a)
    save_actmat(ActivationMatrix(np.eye(4)), b)
    assert main(["cka", str(a), str(b)]) == 1


def test_pipeline_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.yaml"
    assert main(["pipeline", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_bad_flag_exit_one(capsys):
    assert main(["pipeline", "x.yaml", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err


def test_bad_preprocess_value(capsys):
    assert main(["cka", "a", "b", "--preprocess", "maybe"]) == 1
    assert "--preprocess" in capsys.readouterr().err


def test_invalid_config_exit_one(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scenario: forgetting\ndistill:\n  mix: 1.5\n")
    assert main(["pipeline", str(p)]) == 1


def test_corrupt_checkpoint_is_validation(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"nope")
    assert main(["degrade", str(p), "--bits", "4"]) == 1


def test_all_pruned_is_runtime_error(tmp_path, capsys):
    out = tmp_path / "m.ckpt"
    save_checkpoint(nn.init(nn.ArchitectureDescriptor((2, 1, 2)), 0), out)
    assert main(["degrade", str(out), "--prune", str(1 - 1e-10)]) == 2
    assert "error" in capsys.readouterr().err


def test_train_degrade_recover_cka(tmp_path, small_cfg, capsys):
    ckpt = tmp_path / "m.ckpt"
    assert main(["train", str(small_cfg), "--out", str(ckpt)]) == 0
    assert main(["degrade", str(ckpt), "--bits", "3", "--config", str(small_cfg)]) == 0
    degraded = tmp_path / "m_quantize3.ckpt"
    assert degraded.exists()
    assert main(["recover", str(degraded), str(ckpt), str(small_cfg)]) == 0
    recovered = tmp_path / "m_quantize3_recovered.ckpt"
    assert load_checkpoint(recovered).descriptor == load_checkpoint(ckpt).descriptor
    capsys.readouterr()
    assert main(["cka", str(ckpt), str(ckpt), "--config", str(small_cfg)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("layer 0: cka = ")
    assert lines[-1] == "1.0"


def test_pipeline_then_report(tmp_path, capsys):
    cfg = tmp_path / "f.yaml"
    cfg.write_text("scenario: forgetting\nseeds: [0, 1, 2]\n")
    out = tmp_path / "run"
    assert main(["pipeline", str(cfg), "--out", str(out)]) == 0
    for s in (0, 1, 2):
        assert (out / f"record_seed{s}.json").exists()
        assert (out / f"metrics_seed{s}.csv").exists()
        assert (out / f"metrics_seed{s}_scatter.csv").exists()
    assert (out / "checkpoints" / "seed0_expert.ckpt").exists()
    capsys.readouterr()
    assert main(["report", str(out), "--out", str(tmp_path / "scatter.csv")]) == 0
    text = capsys.readouterr().out
    assert "records = 3" in text
    rho = float(text.split("spearman(misalignment, accuracy) = ")[1])
    assert rho < 0


def test_pipeline_seed_override_and_determinism(tmp_path, small_cfg):
    for name in ("a", "b"):
        assert main(["pipeline", str(small_cfg), "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert not (tmp_path / "a" / "record_seed0.json").exists()
    a = (tmp_path / "a" / "metrics_seed3.csv").read_bytes()
    assert a == (tmp_path / "b" / "metrics_seed3.csv").read_bytes()


def test_report_missing_records(tmp_path):
    assert main(["report", str(tmp_path / "none")]) == 1


def test_module_entry_point(tmp_path):
    p = tmp_path / "A.actmat"
    save_actmat(ActivationMatrix(np.arange(12.0).reshape(6, 2) ** 2), p)
    res = subprocess.run([sys.executable, "-m", "mlab", "cka", str(p), str(p)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == "1.0"
