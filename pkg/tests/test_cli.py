import importlib.util
import json
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

from mfnet import checks, cli
from mfnet import autodiff as ad
from mfnet.autodiff import Tensor
from mfnet.dsp import Waveform
from mfnet.model import HeadMode, MFNet, ModelConfig, save_checkpoint
from mfnet.wavio import read_wav, write_wav
from test_model import TINY, hand_count_params

_spec = importlib.util.spec_from_file_location("make_toy_data", Path(__file__).parents[1] / "scripts" / "make_toy_data.py")
make_toy_data = importlib.util.module_from_spec(_spec)
_spec.loader.exec_module(make_toy_data)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


def rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


@pytest.fixture
def identity_ckpt(tmp_path):
    model = MFNet(ModelConfig(**{**TINY, "head": HeadMode.MAP_REVERSE_NOISE}))
    model.zero_branches()
    path = tmp_path / "identity.mfn"
    save_checkpoint(model, path)
    return path


@pytest.mark.slow
def test_train_toy_manifest(tmp_path, capsys):
    config = make_toy_data.make(tmp_path / "toy", epochs=500)
    code, out, _ = run(capsys, "train", "--config", config)
    assert code == 0
    assert Path(out["checkpoint"]).is_file()
    assert out["epochs"] == 500
    assert out["final_loss"] < 0.1 * out["initial_loss"]
    assert len(json.loads(Path(out["loss_curve"]).read_text())) == 500


def test_train_missing_file_names_path(tmp_path, capsys):
    config = make_toy_data.make(tmp_path / "toy", epochs=1)
    (tmp_path / "toy" / "noise.wav").unlink()
    code, out, err = run(capsys, "train", "--config", config)
    assert code == 2 and out is None
    assert "noise.wav" in err


def test_train_bad_gamma(tmp_path, capsys):
    config = make_toy_data.make(tmp_path / "toy", epochs=1)
    code, _, err = run(capsys, "train", "--config", config, "--set", "train.gamma=1.5")
    assert code == 2 and "gamma" in err


def test_train_unknown_key_and_bad_manifest(tmp_path, capsys):
    config = make_toy_data.make(tmp_path / "toy", epochs=1)
    assert run(capsys, "train", "--config", config, "--set", "optimizer.lr=1")[0] == 2
    (tmp_path / "toy" / "manifest.json").write_text(json.dumps([{"clean_path": "clean.wav"}]))
    assert run(capsys, "train", "--config", config)[0] == 2


def test_train_short_run_with_overrides(tmp_path, capsys):
    config = make_toy_data.make(tmp_path / "toy", epochs=500)
    code, out, _ = run(capsys, "train", "--config", config, "--set", "train.total_epochs=3",
                       "--set", "train.warmup_epochs=1", "--set", 'model.encoder_depths=[1,1,1,1]', "--seed", "4")
    assert code == 0 and out["epochs"] == 3


def test_apply_overrides():
    cfg = cli.apply_overrides({"train": {"seed": 0}}, ["train.seed=3", "model.head=masking", "train.lr_max=0.1"])
    assert cfg == {"train": {"seed": 3, "lr_max": 0.1}, "model": {"head": "masking"}}
    with pytest.raises(cli.UsageError):
        cli.apply_overrides({}, ["noequals"])


def test_enhance_identity_checkpoint(tmp_path, capsys, identity_ckpt):
    x = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 160_000))
    write_wav(tmp_path / "in.wav", x)
    code, out, _ = run(capsys, "enhance", "--ckpt", identity_ckpt, "--in", tmp_path / "in.wav", "--out", tmp_path / "o.wav")
    assert code == 0
    y = read_wav(tmp_path / "o.wav")
    assert len(y) == 160_000 and y.duration == 10.0
    assert rms(y.samples, x.samples.astype(np.float32)) < 1e-6
    assert out["rtf"] > 0 and out["frames"] == 1001 and out["clipped_samples"] == 0


@pytest.mark.parametrize("data,rate", [(np.zeros((1600, 2), np.float32), 16000), (np.zeros(4410, np.float32), 44100)])
def test_enhance_rejects_formats(tmp_path, capsys, identity_ckpt, data, rate):
    wavfile.write(tmp_path / "in.wav", rate, data)
    code, out, err = run(capsys, "enhance", "--ckpt", identity_ckpt, "--in", tmp_path / "in.wav", "--out", tmp_path / "o.wav")
    assert code == 2 and out is None and err
    assert not (tmp_path / "o.wav").exists()


def test_enhance_bad_checkpoint(tmp_path, capsys):
    (tmp_path / "bad.mfn").write_bytes(b"nope")
    write_wav(tmp_path / "in.wav", Waveform(np.zeros(1600)))
    assert run(capsys, "enhance", "--ckpt", tmp_path / "bad.mfn", "--in", tmp_path / "in.wav", "--out", tmp_path / "o.wav")[0] == 2


def write_pair(tmp_path, ref, est):
    write_wav(tmp_path / "ref.wav", Waveform(ref))
    write_wav(tmp_path / "est.wav", Waveform(est))
    return "--ref", tmp_path / "ref.wav", "--est", tmp_path / "est.wav"


def test_evaluate_cases(tmp_path, capsys):
    rng = np.random.default_rng(0)
    s = (0.2 * rng.standard_normal(16000)).astype(np.float32).astype(np.float64)
    code, out, _ = run(capsys, "evaluate", *write_pair(tmp_path, s, s))
    assert code == 0 and out["snr_db"] == 99.99 and out["si_sdr_db"] == 99.99
    e = rng.standard_normal(16000)
    e *= np.linalg.norm(s) / np.linalg.norm(e) / np.sqrt(10)
    _, out, _ = run(capsys, "evaluate", *write_pair(tmp_path, s, s + e))
    assert out["snr_db"] == pytest.approx(10.0, abs=0.01)
    _, out, _ = run(capsys, "evaluate", *write_pair(tmp_path, s, 2 * s))
    assert out["snr_db"] == pytest.approx(0.0, abs=0.01)
    assert out["si_sdr_db"] == 99.99


def test_evaluate_length_mismatch(tmp_path, capsys):
    code, _, err = run(capsys, "evaluate", *write_pair(tmp_path, np.ones(100) * 0.1, np.ones(90) * 0.1))
    assert code == 2 and "length" in err


@pytest.mark.slow
def test_gradcheck_all(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "all")
    assert code == 0 and out["failed"] == []
    assert set(out["results"]) == set(checks.REGISTRY)


def test_gradcheck_single_and_unknown(capsys):
    code, out, _ = run(capsys, "gradcheck", "--op", "simple_gate")
    assert code == 0 and list(out["results"]) == ["simple_gate"]
    assert run(capsys, "gradcheck", "--op", "no_such_op")[0] == 2


def test_gradcheck_detects_wrong_backward(capsys, monkeypatch):
    def bad_square(x):
        # forward x^2, backward claims 3x
        return ad.make_op(x.data**2, (x,), lambda g: (3.0 * x.data * g,), "bad_square")

    def check(seed):
        x = np.random.default_rng(seed).standard_normal(5)
        return checks.check_inputs(bad_square, [x], seed)

    monkeypatch.setitem(checks.REGISTRY, "bad_square", check)
    code, out, err = run(capsys, "gradcheck", "--op", "bad_square", "--seeds", "2")
    assert code == 1 and out["failed"] == ["bad_square"]
    assert "bad_square" in err


def test_info_from_config(tmp_path, capsys):
    (tmp_path / "m.json").write_text(json.dumps({"base_channels": 1}))
    code, out, _ = run(capsys, "info", "--config", tmp_path / "m.json")
    assert code == 0
    assert out["channel_plan"] == [1, 2, 4, 8, 16, 8, 4, 2, 1]
    assert out["depths"] == {"enc": [1, 1, 8, 4], "mid": 6, "dec": [1, 1, 1, 1]}
    assert out["params"] == hand_count_params(1, (1, 1, 8, 4), 6, (1, 1, 1, 1))


def test_info_from_checkpoint_and_run_config(tmp_path, capsys, identity_ckpt):
    code, out, _ = run(capsys, "info", "--ckpt", identity_ckpt)
    assert code == 0 and out["head"] == "map_reverse_noise"
    config = make_toy_data.make(tmp_path / "toy", epochs=1)
    code, out, _ = run(capsys, "info", "--config", config)
    assert code == 0 and out["channel_plan"][0] == 4


def test_usage_errors(capsys):
    assert run(capsys, "nonsense")[0] == 2
    assert run(capsys, "info")[0] == 2
