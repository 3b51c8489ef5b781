import struct

import numpy as np
import pytest

from crnn.checkpoint import FORMAT_VERSION, Checkpoint, model_checkpoint, stack_from
from crnn.cli import run
from crnn.config import Config
from crnn.data import Standardizer
from crnn.errors import FormatError, UsageError
from crnn.features import init_cnn
from crnn.numerics import Rng
from crnn.recurrent import init_stack


def _model():
    rng = Rng(0)
    std = Standardizer(rng.uniform(-1, 1, 128), rng.uniform(0.5, 2, 128))
    return model_checkpoint(init_cnn(rng), init_stack(rng, 128, [128, 32], 11), std, Config().to_text())


def test_checkpoint_round_trip(tmp_path):
    ck = _model()
    ck.save(tmp_path / "a.ckpt")
    back = Checkpoint.load(tmp_path / "a.ckpt")
    back.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert back.text == ck.text
    for k, v in ck.tensors.items():
        assert back.tensors[k].dtype == np.float64
        np.testing.assert_array_equal(back.tensors[k], v)
    assert stack_from(back).hidden_sizes == [128, 32]


def test_checkpoint_header_layout():
    buf = Checkpoint({"w": np.array([[1.5, -2.0]])}, "").to_bytes()
    assert buf[:4] == b"CRNN"
    assert struct.unpack_from("<II", buf, 4) == (FORMAT_VERSION, 1)
    assert struct.unpack_from("<I", buf, 12) == (1,)
    assert buf[16:17] == b"w"
    assert struct.unpack_from("<III", buf, 17) == (2, 1, 2)
    assert struct.unpack_from("<2d", buf, 29) == (1.5, -2.0)


def test_checkpoint_rejects_unknown_version():
    buf = bytearray(_model().to_bytes())
    buf[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    with pytest.raises(FormatError, match="version"):
        Checkpoint.from_bytes(bytes(buf))


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
def test_checkpoint_rejects_corruption(mutate):
    with pytest.raises(FormatError):
        Checkpoint.from_bytes(mutate(_model().to_bytes()))


def test_config_round_trip_and_validation():
    cfg = Config(layers=1, hidden=[128], lr=1e-4, seed=3)
    assert Config.from_text(cfg.to_text()) == cfg
    with pytest.raises(FormatError, match="unknown key"):
        Config.from_text("alphabet_size=10\nbogus=1\n")
    with pytest.raises(FormatError, match=":1"):
        Config.from_text("lr=fast\n")
    assert Config.from_text("layers=1\n").hidden == [128]
    with pytest.raises((UsageError, FormatError)):
        Config.from_text("layers=2\nhidden=128\n")


def test_unknown_subcommand_exit_1(capsys):
    assert run(["frobnicate"]) == 1
    assert capsys.readouterr().err.startswith("error:")
    assert run([]) == 1


def test_missing_file_exit_2(tmp_path, capsys):
    assert run(["eval", "--model", str(tmp_path / "nope"), "--data", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_bad_config_exit_2(tmp_path):
    (tmp_path / "c.cfg").write_text("nonsense=1\n")
    assert run(["gen-data", "--config", str(tmp_path / "c.cfg"), "--out", str(tmp_path / "d")]) == 2


def test_gradcheck_command(capsys):
    assert run(["gradcheck", "--seed", "7"]) == 0
    out = capsys.readouterr().out
    fields = dict(line.split("\t", 1) for line in out.splitlines())
    assert float(fields["max_rel_error"]) < 1e-4
    assert fields["status"] == "pass"


def test_gradcheck_zero_eps_is_usage_error():
    assert run(["gradcheck", "--eps", "0"]) == 1


def test_decode_all_blank_frame(tmp_path, capsys):
    y = np.zeros((1, 11))
    y[0, 10] = 1.0
    Checkpoint({"000042": y}, "").save(tmp_path / "p.bin")
    assert run(["decode", "--probs", str(tmp_path / "p.bin")]) == 0
    assert capsys.readouterr().out == "000042\t\n"


def _pipeline(d, capsys):
    cfg = d / "run.cfg"
    cfg.write_text("num_samples=12\ncnn_epochs=2\nepochs=2\nlayers=2\nhidden=8,4\nseed=4\n")
    c = ["--config", str(cfg)]
    steps = [
        ["gen-data", *c, "--out", str(d / "train")],
        ["gen-data", *c, "--out", str(d / "test"), "--count", "6", "--start", "100"],
        ["train-cnn", *c, "--data", str(d / "train"), "--out", str(d / "cnn.ckpt")],
        ["extract-features", *c, "--model", str(d / "cnn.ckpt"), "--data", str(d / "train"), "--out", str(d / "f.bin")],
        ["train-crnn", *c, "--model", str(d / "cnn.ckpt"), "--data", str(d / "train"), "--features",
         str(d / "f.bin"), "--log", str(d / "train.log"), "--out", str(d / "crnn.ckpt")],
        ["eval", *c, "--model", str(d / "crnn.ckpt"), "--data", str(d / "test")],
        ["eval", *c, "--model", str(d / "cnn.ckpt"), "--data", str(d / "test"), "--baseline"],
        ["decode", "--model", str(d / "crnn.ckpt"), "--data", str(d / "test")],
    ]
    outs = []
    for argv in steps:
        assert run(argv) == 0, argv
        outs.append(capsys.readouterr().out)
    return outs


def test_full_pipeline_deterministic(tmp_path, capsys):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a = _pipeline(tmp_path / "a", capsys)
    b = _pipeline(tmp_path / "b", capsys)
    assert a == b
    report = a[5].splitlines()
    assert [line.split("\t")[0] for line in report] == ["samples", "seq_acc", "label_err"]
    assert report[0] == "samples\t6"
    assert len((tmp_path / "a" / "train.log").read_text().splitlines()) == 2
    for name in ("cnn.ckpt", "f.bin", "crnn.ckpt", "train.log", "train/labels.tsv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    decoded = a[7].splitlines()
    assert [line.split("\t")[0] for line in decoded] == [f"{i:06d}" for i in range(100, 106)]
