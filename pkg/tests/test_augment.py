import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairssl import augment as A
from pairssl.errors import ConfigError


def philox(seed):
    return np.random.Generator(np.random.Philox(seed))


def pattern(n=2, c=1, h=12, w=12):
    """Asymmetric ramp: no mirror or shift of it equals itself."""
    base = (np.arange(h)[:, None] * w + np.arange(w)[None, :]) / (h * w)
    return np.broadcast_to(base, (n, c, h, w)).copy()


def test_weak_identity_draw():
    x = pattern()
    p = A.WeakParams(np.zeros(2, int), np.zeros(2, int), np.zeros(2, bool))
    assert np.array_equal(A.apply_weak(x, p), x)


def test_weak_flip_mirrors_columns():
    x = pattern()
    p = A.WeakParams(np.zeros(2, int), np.zeros(2, int), np.ones(2, bool))
    out = A.apply_weak(x, p)
    assert np.array_equal(out, x[..., ::-1])
    assert not np.array_equal(out, x)


@pytest.mark.parametrize("dy,dx", [(-4, 0), (3, -2), (4, 4)])
def test_weak_interior_is_translate(dy, dx):
    x = pattern(1, 1, 16, 16)
    out = A.apply_weak(x, A.WeakParams(np.array([dy]), np.array([dx]), np.array([False])))
    inner = out[0, 0, 4:-4, 4:-4]
    assert np.array_equal(inner, x[0, 0, 4 + dy : 12 + dy, 4 + dx : 12 + dx])


@pytest.mark.parametrize("fn", [A.weak_augment, A.strong_augment])
def test_reproducible(fn):
    x = philox(0).random((4, 3, 16, 16))
    assert np.array_equal(fn(x, philox(7)), fn(x, philox(7)))
    assert not np.array_equal(fn(x, philox(7)), fn(x, philox(8)))


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3]), st.integers(8, 20))
def test_shape_and_range(seed, c, side):
    x = philox(seed).random((3, c, side, side))
    for fn in (A.weak_augment, A.strong_augment):
        out = fn(x, philox(seed + 1))
        assert out.shape == x.shape
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_strong_identity_policy():
    x = philox(1).random((3, 3, 16, 16))
    out = A.strong_augment(x, philox(2), A.StrongPolicy.identity())
    assert np.allclose(out, x, atol=1e-12)


def test_strong_erasing_forced_leaves_zero_rectangle():
    x = 0.2 + 0.8 * philox(3).random((4, 3, 16, 16))
    pol = A.StrongPolicy(**{**A.policy_to_dict(A.StrongPolicy.identity()), "erase_p": 1.0, "kind": "strong_fixed"})
    params = A.sample_strong(4, 16, 16, philox(4), pol)
    out = A.apply_strong(x, params, pol)
    for i in range(4):
        on, y0, x0, eh, ew = (int(v) for v in params.erase[i])
        assert on == 1
        assert np.all(out[i, :, y0 : y0 + eh, x0 : x0 + ew] == 0.0)
        assert (out[i] == 0.0).sum() == 3 * eh * ew


def test_strong_perturbs_more_than_weak():
    x = philox(5).random((8, 1, 16, 16)) * 0.5 + 0.25
    weak = np.mean([np.abs(A.weak_augment(x, philox(s)) - x).mean() for s in range(100)])
    strong = np.mean([np.abs(A.strong_augment(x, philox(s)) - x).mean() for s in range(100)])
    assert strong > weak


def test_contrast_keeps_mean():
    x = philox(6).random((2, 3, 8, 8))
    out = A.adjust_contrast(x, np.array([1.0, 0.0]))
    assert np.allclose(out[0], x[0])
    assert np.ptp(out[1]) == pytest.approx(0.0)


def test_gaussian_kernel_normalised():
    k = A.gaussian_kernel3(1.5)
    assert k.sum() == pytest.approx(1.0) and np.allclose(k, k.T)


@pytest.mark.parametrize("policy", [A.WeakPolicy(), A.StrongPolicy(), A.StrongPolicy.identity()])
def test_policy_dict_round_trip(policy):
    assert A.policy_from_dict(A.policy_to_dict(policy)) == policy


@pytest.mark.parametrize(
    "d",
    [
        {"kind": "weak", "bogus": 1},
        {"kind": "randaugment"},
        {"kind": "weak", "flip_p": 1.5},
        {"kind": "strong_fixed", "contrast": [1.5, 0.75]},
        {"kind": "strong_fixed", "crop_scale": [0.0, 1.0]},
    ],
)
def test_bad_policies_rejected(d):
    with pytest.raises(ConfigError):
        A.policy_from_dict(d)


def test_small_images_rejected():
    with pytest.raises(ValueError):
        A.weak_augment(np.zeros((1, 1, 4, 4)), philox(0))
