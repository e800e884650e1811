import math
import os

import numpy as np
import pytest
from hypothesis import given
import hypothesis.strategies as st

from crossaxis.checkpoint import Checkpoint, decode, encode, load_checkpoint, save_checkpoint
from crossaxis.config import snapshot
from crossaxis.data import Dataset
from crossaxis.errors import (
    BadMagic,
    ConfigError,
    NonFiniteLoss,
    ShapeMismatch,
    TruncatedFile,
    VersionMismatch,
)
from crossaxis.model import CatConfig, init_params, model_forward, param_count, param_shapes
from crossaxis.tensor import cross_entropy
from crossaxis.train import (
    OptimizerState,
    TrainConfig,
    accuracy,
    adamw_step,
    cosine_lr,
    evaluate,
    smoothed,
    train,
)

TINY = dict(image_size=8, patch_size=4, hidden=8, heads=2, layers=1, num_classes=4)


def tiny_run(tmp_path, name, **kw):
    model = CatConfig(**TINY)
    base = dict(batch_size=8, train_samples=32, val_samples=16, out_dir=str(tmp_path / name), base_lr=1e-3)
    base.update(kw)
    cfg = TrainConfig(**base)
    return train(model, cfg, snapshot=snapshot(model, cfg))


# --------------------------------------------------------------------------
# schedule and optimizer


def test_cosine_examples():
    assert cosine_lr(0, 100, 3e-4) == 3e-4
    assert cosine_lr(100, 100, 3e-4, 1e-5) == 1e-5
    assert cosine_lr(50, 100, 1.0, 0.2) == pytest.approx(0.6, abs=1e-15)
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 1.0)


@given(st.integers(1, 500), st.floats(1e-6, 1.0), st.floats(0, 1))
def test_cosine_bounded_and_monotone(total, base, frac):
    lo = base * frac * 0.99
    lrs = [cosine_lr(t, total, base, lo) for t in range(total + 1)]
    assert all(lo - 1e-15 <= x <= base + 1e-15 for x in lrs)
    assert all(b <= a + 1e-15 for a, b in zip(lrs, lrs[1:]))


def test_adamw_zero_grads():
    p = {"w": np.array([1.0, -2.0])}
    state = OptimizerState.zeros_like(p)
    adamw_step(p, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.0)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert state.t == 1
    adamw_step(p, {"w": np.zeros(2)}, state, lr=0.1, weight_decay=0.01)
    np.testing.assert_allclose(p["w"], [0.999, -1.998], rtol=1e-15)
    assert state.t == 2


def test_adamw_first_step_closed_form():
    g = np.array([0.5, -3.0, 1e-3])
    p = {"w": np.zeros(3)}
    adamw_step(p, {"w": g}, OptimizerState.zeros_like(p), lr=0.01, weight_decay=0.0)
    np.testing.assert_allclose(p["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)


def test_adamw_two_steps_against_reference():
    p0 = np.array([0.3, -0.7])
    g1, g2 = np.array([0.1, 0.2]), np.array([-0.3, 0.05])
    lr, wd = 0.05, 0.1
    p = {"w": p0.copy()}
    s = OptimizerState.zeros_like(p)
    adamw_step(p, {"w": g1}, s, lr, wd)
    adamw_step(p, {"w": g2}, s, lr, wd)
    # reference written out longhand
    w, m, v = p0.copy(), np.zeros(2), np.zeros(2)
    for t, g in ((1, g1), (2, g2)):
        w = w - lr * wd * w
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w = w - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(p["w"], w, rtol=1e-14)


def test_adamw_shape_mismatch():
    p = {"w": np.zeros(3)}
    with pytest.raises(ShapeMismatch):
        adamw_step(p, {"w": np.zeros(2)}, OptimizerState.zeros_like(p), 0.1)


def test_adamw_is_deterministic(rng):
    params = {"a": rng.standard_normal((4, 4)).astype(np.float32)}
    grads = {"a": rng.standard_normal((4, 4)).astype(np.float32)}
    out = []
    for _ in range(2):
        p = {k: v.copy() for k, v in params.items()}
        adamw_step(p, grads, OptimizerState.zeros_like(p), 1e-3)
        out.append(p["a"].tobytes())
    assert out[0] == out[1]


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(base_lr=1e-4, min_lr=1e-3)
    with pytest.raises(ConfigError):
        TrainConfig(dataset="cifar10")


# --------------------------------------------------------------------------
# evaluation


def test_accuracy_ties_go_low():
    assert accuracy(np.zeros((4, 3)), np.array([0, 0, 1, 2])) == 0.5


def test_zero_model_accuracy_is_one_tenth():
    cfg = CatConfig(**{**TINY, "num_classes": 10})
    params = {k: np.zeros(s, np.float32) for k, s in param_shapes(cfg).items()}
    data = Dataset(np.random.default_rng(0).random((50, 3, 8, 8)).astype(np.float32), np.arange(50) % 10)
    res = evaluate(params, cfg, data, batch_size=7)
    assert res["accuracy"] == 0.1
    assert res["loss"] == pytest.approx(math.log(10), abs=1e-6)


def test_evaluate_loss_is_mean_cross_entropy(rng):
    cfg = CatConfig(**TINY)
    params = init_params(cfg, 0, np.float64)
    data = Dataset(rng.random((13, 3, 8, 8)), rng.integers(0, 4, 13))
    res = evaluate(params, cfg, data, batch_size=5)
    manual = sum(cross_entropy(model_forward(x[None], params, cfg), [y]).item() for x, y in data) / 13
    assert res["loss"] == pytest.approx(manual, rel=1e-12)


def test_perfect_logits_accuracy():
    labels = np.array([2, 0, 1])
    assert accuracy(np.eye(3)[labels] * 5, labels) == 1.0


# --------------------------------------------------------------------------
# checkpoints


def make_ckpt(seed=0):
    cfg = CatConfig(**TINY)
    params = init_params(cfg, seed)
    state = OptimizerState.zeros_like(params)
    rng = np.random.default_rng(seed)
    for k in params:
        state.m[k] += rng.standard_normal(params[k].shape).astype(np.float32)
        state.v[k] += rng.random(params[k].shape).astype(np.float32)
    return Checkpoint(params, snapshot(cfg, TrainConfig()), 42, state.m, state.v)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    ck = make_ckpt()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(str(a), ck)
    loaded = load_checkpoint(str(a))
    save_checkpoint(str(b), loaded)
    assert a.read_bytes() == b.read_bytes()
    assert loaded.step == 42
    for k in ck.params:
        assert loaded.params[k].tobytes() == ck.params[k].tobytes()
        assert loaded.opt_m[k].tobytes() == ck.opt_m[k].tobytes()
        assert loaded.opt_v[k].tobytes() == ck.opt_v[k].tobytes()


def test_checkpoint_mixed_dtypes():
    ck = Checkpoint({"a": np.arange(6.0).reshape(2, 3), "b": np.float32([1.5]), "s": np.array(2.0)}, {}, 1)
    back = decode(encode(ck))
    assert back.params["a"].dtype == np.float64 and back.params["b"].dtype == np.float32
    assert back.params["s"].shape == ()
    assert encode(back) == encode(ck)


def test_checkpoint_scalar_count_equals_param_count():
    ck = make_ckpt()
    back = decode(encode(ck))
    assert sum(v.size for v in back.params.values()) == param_count(CatConfig(**TINY))
    assert list(back.params) == list(param_shapes(CatConfig(**TINY)))


def test_checkpoint_errors(tmp_path):
    raw = encode(make_ckpt())
    with pytest.raises(BadMagic):
        decode(b"XATCKPT1" + raw[8:])
    with pytest.raises(VersionMismatch):
        decode(raw[:8] + (2).to_bytes(4, "little") + raw[12:])
    with pytest.raises(TruncatedFile):
        decode(raw[:-3])
    bad = make_ckpt()
    bad.params["head.bias"] = np.zeros(5, np.float32)
    path = tmp_path / "bad.ckpt"
    save_checkpoint(str(path), bad)
    with pytest.raises(ShapeMismatch):
        load_checkpoint(str(path))


# --------------------------------------------------------------------------
# training loop


def test_training_writes_files_and_follows_schedule(tmp_path):
    res = tiny_run(tmp_path, "run", epochs=2, eval_every=3)
    out = tmp_path / "run"
    for name in ("metrics.csv", "eval.csv", "final.ckpt", "best.ckpt"):
        assert (out / name).exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,lr,loss,acc"
    assert len(lines) == 1 + 8
    assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(8))
    assert [float(l.split(",")[1]) for l in lines[1:]] == [cosine_lr(t, 8, 1e-3) for t in range(8)]
    evals = (out / "eval.csv").read_text().splitlines()
    assert evals[0] == "step,loss,acc" and [e.split(",")[0] for e in evals[1:]] == ["3", "6", "8"]
    ck = load_checkpoint(str(out / "final.ckpt"))
    assert ck.step == 8
    assert all(ck.params[k].tobytes() == res.params[k].tobytes() for k in res.params)
    assert ck.config["hidden"] == 8


def test_training_is_reproducible(tmp_path):
    # same out_dir both times: the snapshot inside the checkpoint records it
    names = ("metrics.csv", "eval.csv", "final.ckpt", "best.ckpt")
    tiny_run(tmp_path, "a", max_steps=5, flip=True)
    first = {n: (tmp_path / "a" / n).read_bytes() for n in names}
    tiny_run(tmp_path, "a", max_steps=5, flip=True)
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == first[n]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts(tmp_path):
    with pytest.raises(NonFiniteLoss):
        tiny_run(tmp_path, "nan", max_steps=3, base_lr=1e30)


def test_smoothed():
    np.testing.assert_allclose(smoothed([1, 3, 5, 7], window=2), [1, 2, 4, 6])
