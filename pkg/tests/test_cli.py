import numpy as np
import pytest

from hfdnet.checkpoint import load_checkpoint
from hfdnet.cli import run
from hfdnet.synthdata import read_pgm


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run(["generate", "--seed", "3", "--count", "16", "--size", "32", "--out", str(d)]) == 0
    return d / "manifest.txt"


@pytest.fixture(scope="module")
def teacher(data, tmp_path_factory):
    out = tmp_path_factory.mktemp("teacher")
    assert run(["train-teacher", "--manifest", str(data), "--epochs", "2", "--out", str(out)]) == 0
    return out / "teacher.hfdn"


def test_help_lists_commands(capsys):
    assert run(["--help"]) == 0
    text = capsys.readouterr().out
    for cmd in ("generate", "train-teacher", "train-student", "eval", "infer", "gradcheck", "ablate"):
        assert cmd in text


@pytest.mark.parametrize("argv,msg", [
    ([], "missing command"),
    (["frobnicate"], "invalid choice"),
    (["train-teacher", "--out", "x"], "--manifest"),
    (["generate", "--out", "x", "--classes", "3"], "invalid choice"),
    (["generate", "--out", "x", "--count", "0"], "--count"),
    (["ablate", "nope", "--out", "x"], "valid suites"),
    (["train-teacher", "--manifest", "m", "--out", "x", "--lr", "-1"], "lr0"),
])
def test_usage_errors_exit_1_and_write_nothing(argv, msg, capsys, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == 1
    assert msg in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_missing_input_is_runtime_error(tmp_path, capsys):
    out = tmp_path / "o"
    assert run(["train-teacher", "--manifest", str(tmp_path / "none.txt"), "--out", str(out)]) == 2
    assert "cannot read" in capsys.readouterr().err
    assert not out.exists()


def test_bad_config_key(tmp_path, data, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("seed=1\nwarp_speed=9\n")
    assert run(["train-teacher", "--manifest", str(data), "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "c.cfg:2" in capsys.readouterr().err


def test_generate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run(["generate", "--count", "3", "--size", "32", "--out", str(tmp_path / name)]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_train_student_keeps_teacher_and_is_reproducible(data, teacher, tmp_path):
    before = teacher.read_bytes()
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run(["train-student", "--manifest", str(data), "--teacher", str(teacher), "--epochs", "2",
                    "--out", str(out)]) == 0
        outs.append(out)
    assert teacher.read_bytes() == before
    for f in ("student.hfdn", "train_log.csv", "train_metrics.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert (outs[0] / "train_log.csv").read_text().splitlines()[0] == "epoch,step,lr,l_c,l_f,l_d,total"


def test_lambda_zero_matches_no_teacher(data, teacher, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["train-student", "--manifest", str(data), "--teacher", str(teacher), "--lambda", "0",
                "--epochs", "2", "--out", str(a)]) == 0
    assert run(["train-student", "--manifest", str(data), "--epochs", "2", "--out", str(b)]) == 0
    assert (a / "student.hfdn").read_bytes() == (b / "student.hfdn").read_bytes()


def test_flag_overrides_config(data, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("teacher_epochs=5\nlr0=0.01\n")
    out = tmp_path / "o"
    assert run(["train-teacher", "--manifest", str(data), "--config", str(cfg), "--epochs", "1",
                "--out", str(out)]) == 0
    rows = (out / "train_log.csv").read_text().splitlines()
    assert len(rows) == 2
    assert float(rows[1].split(",")[2]) <= 0.01


def test_eval_oracle_is_perfect(data, tmp_path):
    assert run(["eval", "--checkpoint", "@oracle", "--manifest", str(data), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.csv").read_text().splitlines()[-1].startswith("mean,1.000000,1.000000,1.000000")


def test_eval_checkpoint(data, teacher, tmp_path):
    assert run(["eval", "--checkpoint", str(teacher), "--manifest", str(data), "--modality", "eo",
                "--exclude-background", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "metrics.csv").read_text().startswith("name,acc,iou,f1,support")


def test_corrupt_checkpoint_rejected(data, teacher, tmp_path, capsys):
    buf = bytearray(teacher.read_bytes())
    buf[-1] ^= 0xFF
    bad = tmp_path / "bad.hfdn"
    bad.write_bytes(bytes(buf))
    assert run(["eval", "--checkpoint", str(bad), "--manifest", str(data), "--out", str(tmp_path / "o")]) == 2
    assert "CRC" in capsys.readouterr().err


def test_infer_writes_valid_masks(data, teacher, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["infer", "--checkpoint", str(teacher), "--manifest", str(data), "--out", str(a)]) == 0
    sar = sorted(data.parent.glob("sar_*.pgm"))[:2]
    assert run(["infer", "--checkpoint", str(teacher), "--out", str(b)] + [str(p) for p in sar]) == 0
    masks = sorted(a.glob("pred_*.pgm"))
    assert len(masks) == 16
    for m in masks:
        assert set(np.unique(read_pgm(m))) <= {0, 1}
        assert set(np.unique(read_pgm(a / m.name.replace("pred_", "vis_")))) <= {0, 255}
    # same image, same prediction, whichever way it was supplied
    assert (a / "pred_0000.pgm").read_bytes() == (b / "pred_sar_0000.pgm").read_bytes()


def test_checkpoint_round_trip_preserves_eval(data, teacher, tmp_path):
    from hfdnet.checkpoint import save_checkpoint

    copy = save_checkpoint(load_checkpoint(teacher), tmp_path / "copy.hfdn")
    assert copy.read_bytes() == teacher.read_bytes()
    for name, ck in (("a", teacher), ("b", copy)):
        assert run(["eval", "--checkpoint", str(ck), "--manifest", str(data), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_threads_env(monkeypatch, tmp_path):
    monkeypatch.setenv("HFD_THREADS", "0")
    assert run(["generate", "--count", "1", "--size", "32", "--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("HFD_THREADS", "many")
    assert run(["generate", "--count", "1", "--size", "32", "--out", str(tmp_path / "b")]) == 1


def test_ablate_temperature_on_manifests(data, tmp_path):
    out = tmp_path / "abl"
    argv = ["ablate", "temperature", "--manifest", str(data), "--test-manifest", str(data), "--seeds", "0",
            "--epochs", "1", "--teacher-epochs", "1", "--out", str(out)]
    assert run(argv) == 0
    lines = (out / "ablation_temperature.csv").read_text().splitlines()
    body = [l for l in lines if not l.startswith("#")]
    assert body[0].startswith("variant,seeds,acc_mean")
    assert [l.split(",")[0] for l in body[1:]] == ["T=1", "T=5", "T=10", "T=50"]
