import json
from dataclasses import replace

import pytest

from positnn.harness import cli
from positnn.harness import config as C
from positnn.harness.distribution import distribution, histogram_csv, values_csv
from positnn.harness.train import train
from positnn.posit import PositConfig
from positnn.tensor import FLOAT32


def test_config_round_trip():
    cfg = replace(C.get_preset("O12L10"), epochs=3, lr=0.05, subset=100)
    assert C.loads(cfg.dumps()) == cfg


def test_config_parsing_and_errors(tmp_path):
    cfg = C.loads("preset = table2-posit16\n# comment\nepochs = 2  # inline\nquire = yes\n")
    assert cfg.forward == "16:1" and cfg.epochs == 2 and cfg.quire is True
    for bad in ["nope = 1", "epochs = x", "quire = maybe", "garbage", "forward = 99:1",
                "dataset = imagenet", "lr = 0"]:
        with pytest.raises(C.ConfigError):
            C.loads(bad)
    with pytest.raises(C.ConfigError):
        C.get_preset("table9")
    with pytest.raises(C.ConfigError):
        C.load(tmp_path / "missing.txt")


def test_presets_cover_every_table_cell():
    for name in C.PAPER_ACCURACY:
        assert name in C.PRESETS
    p = C.get_preset("O12L10").precisions()
    assert p.forward == PositConfig(8, 2) and p.optimizer == PositConfig(12, 2)
    assert p.loss == PositConfig(10, 2) and p.quire("forward")
    assert C.get_preset("table2-posit8").precisions().quire("forward") is False
    assert C.get_preset("table3-posit82-quire").precisions().quire("backward")
    ref = C.get_preset("O12L10").float_reference().precisions()
    assert all(k is FLOAT32 for k in ref.kinds().values())


def test_distribution_posit8_0():
    d = distribution(PositConfig(8, 0))
    vals = [v for _, v in d.values]
    assert d.finite_count == 255 and d.max_abs == 64
    assert sorted(vals) == sorted(-v for v in vals)
    assert sum(c for _, _, c in d.linear) == 255
    assert sum(c for _, _, c in d.log2) == 254   # all but zero
    assert values_csv(d).count("\n") == 256
    assert histogram_csv(d).startswith("scale,bucket_lo,bucket_hi,count\n")
    with pytest.raises(ValueError):
        distribution(PositConfig(32, 2))


def _synthetic(tmp_path, **kw):
    base = replace(C.get_preset("O12L10"), dataset="synthetic", subset=128, test_subset=64,
                   epochs=1, batch_size=32, timing=False, out=str(tmp_path))
    return replace(base, **kw)


def test_train_writes_outputs_and_is_reproducible(tmp_path):
    a = train(_synthetic(tmp_path / "a"))
    b = train(_synthetic(tmp_path / "b", workers=3))
    assert a.metrics.read_text().splitlines()[0] == "epoch,step,train_loss,test_acc,seconds"
    assert a.metrics.read_bytes() == b.metrics.read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert 0 <= a.final_accuracy <= 100
    assert C.load(tmp_path / "a" / "config.txt") == _synthetic(tmp_path / "a")
    # one rounding per quantized batch (4 training + 1 evaluation), nothing else
    assert a.boundary_calls == 5


def test_float_training_learns_synthetic(tmp_path):
    res = train(_synthetic(tmp_path, forward="float32", optimizer="", loss="", quire=False,
                           subset=512, test_subset=256, epochs=2, lr=0.05))
    assert res.final_accuracy > 60


def _run(capsys, argv):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_cli_errors_are_structured(capsys, tmp_path):
    code, _, err = _run(capsys, ["train", "--set", "bogus=1"])
    assert code == 2 and json.loads(err.strip().splitlines()[-1])["error"] == "ConfigError"
    code, _, err = _run(capsys, ["train", "--data-dir", str(tmp_path / "none")])
    assert code == 2 and "not found" in json.loads(err.strip().splitlines()[-1])["message"]
    code, _, err = _run(capsys, ["eval", "--checkpoint", str(tmp_path / "none.pnn")])
    assert code == 2
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])


def test_cli_train_eval_float_ref(capsys, tmp_path):
    (tmp_path / "cfg.txt").write_text("preset = O12L10\ndataset = synthetic\nepochs = 1\n"
                                      "test_subset = 64\ntiming = false\n")
    run = ["--config", str(tmp_path / "cfg.txt"), "--subset", "96", "--seed", "2"]
    code, out, _ = _run(capsys, ["train", *run, "--out", str(tmp_path / "p"), "--workers", "2"])
    assert code == 0 and "final test accuracy" in out
    code, out, _ = _run(capsys, ["eval", *run, "--out", str(tmp_path / "p")])
    assert code == 0 and "test accuracy" in out
    code, out, _ = _run(capsys, ["float-ref", *run, "--out", str(tmp_path / "f")])
    assert code == 0
    assert "forward = float32" in (tmp_path / "f" / "config.txt").read_text()
    code, out, _ = _run(capsys, ["eval", *run, "--checkpoint", str(tmp_path / "f" / "model.pnn"),
                                 "--format", "32:2"])
    assert code == 0
    code, out, _ = _run(capsys, ["train", "--list-presets"])
    assert "table4-O12L10" in out


def test_cli_distribution(capsys, tmp_path):
    code, out, _ = _run(capsys, ["distribution", "--format", "8:0", "--out", str(tmp_path)])
    assert code == 0 and "255 finite values" in out and "symmetric = True" in out
    assert (tmp_path / "values.csv").exists() and (tmp_path / "histogram.csv").exists()


def test_cli_verify_quick_suite(capsys, tmp_path):
    code, out, _ = _run(capsys, ["verify", "scalar-exhaustive", "--out", str(tmp_path)])
    assert code == 0 and "[scalar-exhaustive] PASS" in out
    assert (tmp_path / "verify.txt").read_text().startswith("[scalar-exhaustive] PASS")
