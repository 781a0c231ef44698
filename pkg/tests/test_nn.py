import math

import numpy as np
import pytest

from pairssl.errors import ConfigError, DataFormatError, ShapeError
from pairssl.nn import (
    BackboneConfig,
    EmaShadow,
    ParamSet,
    cosine_lr,
    decoupled_adam_step,
    ema_update,
    forward,
    init_optimizer,
    init_params,
    load_checkpoint,
    predict_proba,
    save_checkpoint,
    sgd_nesterov_step,
)
from pairssl.nn.checkpoint import MAGIC

CFG = BackboneConfig((1, 8, 8), (2, 3), 5, 3)


def one(v):
    return ParamSet({"w": np.array([float(v)])})


# ---------------------------------------------------------------- backbone


def test_zero_head_gives_zero_logits(rng):
    params = init_params(CFG, rng)
    params.arrays["head.w"][:] = 0.0
    out = forward(params, CFG, rng.uniform(size=(4, 1, 8, 8)))
    assert out.shape == (4, 3)
    assert np.array_equal(out.data, np.zeros((4, 3)))


def test_duplicate_rows_identical(rng):
    params = init_params(CFG, rng)
    params.arrays["head.w"] = rng.normal(size=(5, 3))
    img = rng.uniform(size=(1, 1, 8, 8))
    out = forward(params, CFG, np.concatenate([img, img])).data
    assert np.array_equal(out[0], out[1])


def test_init_and_forward_reproducible():
    a = init_params(CFG, np.random.Generator(np.random.Philox(7)))
    b = init_params(CFG, np.random.Generator(np.random.Philox(7)))
    for k in a:
        assert np.array_equal(a[k], b[k])
    x = np.random.Generator(np.random.Philox(8)).uniform(size=(2, 1, 8, 8))
    assert np.array_equal(forward(a, CFG, x).data, forward(b, CFG, x).data)


def test_forward_rejects_wrong_shape(rng):
    with pytest.raises(ShapeError):
        forward(init_params(CFG, rng), CFG, np.zeros((2, 3, 8, 8)))


def test_backbone_config_validation():
    with pytest.raises(ConfigError):
        BackboneConfig((1, 10, 10), (4, 4), 8, 3)  # 10 is not divisible by 4
    with pytest.raises(ConfigError):
        BackboneConfig(num_classes=1)


def test_predict_proba_chunks_agree(rng):
    params = init_params(CFG, rng)
    params.arrays["head.w"] = rng.normal(size=(5, 3))
    x = rng.uniform(size=(7, 1, 8, 8))
    assert np.allclose(predict_proba(params, CFG, x, chunk=3), predict_proba(params, CFG, x, chunk=100), rtol=0, atol=1e-15)


# ---------------------------------------------------------------- optimizers


def test_sgd_plain_descent():
    st = init_optimizer(one(1.0), "sgd", momentum=0.0, weight_decay=0.0)
    p, _ = sgd_nesterov_step(st, one(1.0), {"w": np.array([2.0])}, 0.1)
    assert p["w"][0] == pytest.approx(1.0 - 0.2)


def test_sgd_zero_lr_is_noop():
    st = init_optimizer(one(1.5), "sgd", weight_decay=0.1)
    p, _ = sgd_nesterov_step(st, one(1.5), {"w": np.array([3.0])}, 0.0)
    assert p["w"][0] == 1.5


def test_sgd_nesterov_two_steps():
    g = {"w": np.array([1.0])}
    st = init_optimizer(one(0.0), "sgd", momentum=0.9, weight_decay=0.0)
    p1, st = sgd_nesterov_step(st, one(0.0), g, 0.1)
    p2, st = sgd_nesterov_step(st, p1, g, 0.1)
    assert p1["w"][0] - p2["w"][0] == pytest.approx(0.1 * (1.9 * 0.9 + 1.0), abs=1e-15)
    assert st.step == 2


def test_sgd_missing_gradient():
    st = init_optimizer(one(0.0), "sgd")
    with pytest.raises(ValueError, match="missing"):
        sgd_nesterov_step(st, one(0.0), {}, 0.1)


def test_adam_zero_grad_noop():
    st = init_optimizer(one(2.0), "adamw", weight_decay=0.0)
    p, _ = decoupled_adam_step(st, one(2.0), {"w": np.array([0.0])}, 0.01)
    assert p["w"][0] == 2.0


@pytest.mark.parametrize("g", [0.3, -2.0, 1e-3])
def test_adam_first_step(g):
    lr, eps = 0.01, 1e-8
    st = init_optimizer(one(0.0), "adamw", weight_decay=0.0, eps=eps)
    p, _ = decoupled_adam_step(st, one(0.0), {"w": np.array([g])}, lr)
    assert p["w"][0] == pytest.approx(-lr * g / (abs(g) + eps), rel=1e-12)


def test_adam_decoupled_shrink():
    st = init_optimizer(one(2.0), "adamw", weight_decay=0.5)
    p, _ = decoupled_adam_step(st, one(2.0), {"w": np.array([0.0])}, 0.1)
    assert p["w"][0] == pytest.approx(2.0 * (1 - 0.1 * 0.5))


def test_optimizer_steps_are_pure():
    st = init_optimizer(one(1.0), "sgd")
    params = one(1.0)
    sgd_nesterov_step(st, params, {"w": np.array([1.0])}, 0.1)
    assert params["w"][0] == 1.0 and st.step == 0 and st.buffers["momentum"]["w"][0] == 0.0


def test_cosine_lr():
    assert cosine_lr(0, 100, 0.03) == 0.03
    assert cosine_lr(100, 100, 1.0) == pytest.approx(0.19509, abs=1e-5)
    assert cosine_lr(100, 100, 1.0) == pytest.approx(math.cos(7 * math.pi / 16), abs=1e-15)
    assert cosine_lr(37, 100, 0.5, decay_rate=0.0) == 0.5
    assert cosine_lr(0, 0, 0.1) == 0.1
    with pytest.raises(ValueError):
        cosine_lr(101, 100, 0.1)


# ---------------------------------------------------------------- EMA


def test_ema_decay_extremes():
    assert ema_update(EmaShadow(0.0, one(5.0)), one(1.0)).params["w"][0] == 1.0
    assert ema_update(EmaShadow(1.0, one(5.0)), one(1.0)).params["w"][0] == 5.0


def test_ema_single_step():
    assert ema_update(EmaShadow(0.999, one(0.0)), one(1.0)).params["w"][0] == pytest.approx(0.001, abs=1e-15)


def test_ema_closed_form_1000_steps():
    d, s0, p = 0.999, -0.7, 1.3
    shadow = EmaShadow(d, one(s0))
    for _ in range(1000):
        shadow = ema_update(shadow, one(p))
    expected = d**1000 * s0 + (1 - d**1000) * p
    assert abs(shadow.params["w"][0] - expected) < 1e-12


def test_ema_from_params_copies():
    params = one(1.0)
    shadow = EmaShadow.from_params(params, 0.9)
    params.arrays["w"][0] = 9.0
    assert shadow.params["w"][0] == 1.0


def test_ema_rejects_bad_decay_and_shapes():
    with pytest.raises(ValueError):
        EmaShadow(1.5, one(0.0))
    with pytest.raises(ShapeError):
        ema_update(EmaShadow(0.5, one(0.0)), ParamSet({"w": np.zeros(2)}))


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path, rng):
    arrays = {"a": rng.normal(size=(3, 4)), "b": np.array(2.5), "c": rng.normal(size=7)}
    meta = {"step": 12, "x": [1.0, 0.1 + 0.2], "nested": {"k": None}}
    path = save_checkpoint(tmp_path / "m.ckpt", arrays, meta)
    ck = load_checkpoint(path)
    assert ck.meta == meta
    for k, v in arrays.items():
        assert np.array_equal(ck.arrays[k], v) and ck.arrays[k].shape == v.shape
    assert not (tmp_path / "m.ckpt.tmp").exists()


def test_checkpoint_payload_aligned(tmp_path):
    path = save_checkpoint(tmp_path / "m.ckpt", {"a": np.arange(3.0)}, {"pad": "x"})
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    assert (len(raw) - 24) % 8 == 0
    assert np.array_equal(np.frombuffer(raw[-24:], "<f8"), np.arange(3.0))


@pytest.mark.parametrize("damage", ["magic", "truncate", "version"])
def test_checkpoint_corruption_detected(tmp_path, damage):
    path = save_checkpoint(tmp_path / "m.ckpt", {"a": np.arange(4.0)}, {})
    raw = bytearray(path.read_bytes())
    if damage == "magic":
        raw[0:1] = b"X"
    elif damage == "version":
        raw[8] = 99
    else:
        raw = raw[:-5]
    path.write_bytes(bytes(raw))
    with pytest.raises(DataFormatError):
        load_checkpoint(path)
