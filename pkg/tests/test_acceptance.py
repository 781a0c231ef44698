"""Exit criteria. Each test prints one ``PASS``/``FAIL`` line.

Run alone with ``pytest tests/test_acceptance.py -v`` (about 5 minutes on one
core) or as a script: ``python3 tests/test_acceptance.py``.
"""

import math
import time

import numpy as np
import pytest

from _reference import supervised_reference
from pairssl import trainer as T
from pairssl import verify
from pairssl.config import resolve_config
from pairssl.data import (
    CIFAR_RECORD,
    CIFAR_TRAIN_FILES,
    encode_cifar10_records,
    load_cifar10_binary,
    write_cifar10_binary,
)
from pairssl.nn import EmaShadow, ParamSet, ema_update, load_checkpoint
from pairssl.rng import make_streams
from pairssl.sslcore import (
    bhattacharyya_sim,
    confidence,
    confidence_bound,
    hard_threshold,
    pair_distance,
    sharpen,
    total_loss,
    LossWeights,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

SEEDS = (0, 1, 2)
VARIANTS = {"supervised": {"lambda_u": 0.0, "lambda_p": 0.0}, "no_pair": {"lambda_p": 0.0}, "full": {}}


def report(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    print(line, flush=True)
    return line


@pytest.fixture
def say(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print()
            report(number, passed, detail)
        assert passed, detail

    return emit


# ---------------------------------------------------------------- 1-3


def test_c1_theorem_suite(say):
    t = time.perf_counter()
    res = verify.theorem_family(samples=100_000, seed=0)
    dt = time.perf_counter() - t
    say(1, res.passed and dt < 10.0, f"bound suite {res.detail}; {dt:.1f}s (limit 10s)")


def test_c2_pair_loss_oracle(say):
    t = time.perf_counter()
    res = verify.pair_loss_family(batches=200, seed=0)
    dt = time.perf_counter() - t
    say(2, res.passed and res.checked == 200 and dt < 30.0, f"200 batches, {res.detail}; {dt:.1f}s (limit 30s)")


def test_c3_gradient_checks(say):
    t = time.perf_counter()
    res = verify.gradient_family(seeds=50, seed0=0)
    dt = time.perf_counter() - t
    say(3, res.passed and dt < 120.0, f"50 seeds, {res.detail}; {dt:.1f}s (limit 120s)")


# ---------------------------------------------------------------- 4-5


def test_c4_supervised_equivalence(say, tmp_path):
    cfg = resolve_config("toy", overrides={"lambda_u": 0.0, "lambda_p": 0.0, "total_steps": 100})
    data = T.build_data(cfg)

    streams = make_streams(cfg.seed)
    lab = T.CyclicSampler(len(data.labeled), cfg.batch_size, streams.pop("labeled_order"))
    unl = T.CyclicSampler(len(data.unlabeled), cfg.batch_size, streams.pop("unlabeled_order"))
    streams.pop("init")
    state = T.init_state(cfg)
    mismatched = []
    for step, (ref_p, ref_e) in enumerate(supervised_reference(cfg, data, 100)):
        li, ui = lab.next(), unl.next()
        state, _ = T.train_step(
            state, data.labeled.images(li), data.labeled.labels(li), data.unlabeled.images(ui), cfg, streams
        )
        for k in ref_p:
            if not (np.array_equal(state.params[k], ref_p[k]) and np.array_equal(state.ema.params[k], ref_e[k])):
                mismatched.append((step, k))

    # the full loop must land on the same parameters too
    T.run_training(cfg, tmp_path, data=data)
    ck = load_checkpoint(tmp_path / "checkpoints" / "last.ckpt")
    loop_ok = all(np.array_equal(ck.arrays[f"params/{k}"], ref_p[k]) for k in ref_p)
    say(
        4,
        not mismatched and loop_ok,
        f"100 steps bitwise identical to the supervised-only loop "
        f"(step mismatches: {len(mismatched)}, run_training final params match: {loop_ok})",
    )


def test_c5_determinism(say, tmp_path):
    cfg = resolve_config("toy", overrides={"seed": 0})
    T.run_training(cfg, tmp_path / "a")
    T.run_training(cfg, tmp_path / "b")
    a = (tmp_path / "a" / "metrics.csv").read_bytes()
    b = (tmp_path / "b" / "metrics.csv").read_bytes()
    say(5, a == b and len(a) > 0, f"two toy-preset runs, metrics.csv identical: {a == b} ({len(a)} bytes)")


# ---------------------------------------------------------------- 6-7


@pytest.fixture(scope="module")
def ssl_runs():
    """Best validation accuracy and final-window diagnostics per (variant, seed)."""
    out = {}
    t = time.perf_counter()
    for seed in SEEDS:
        data = T.build_data(resolve_config("toy", overrides={"seed": seed}))
        for name, over in VARIANTS.items():
            cfg = resolve_config("toy", overrides={**over, "seed": seed})
            hist, best = T.run_training(cfg, data=data)
            out[name, seed] = (best.val_acc, hist[-1].high_conf_ratio, hist[-1].pair_pass_ratio)
    return out, time.perf_counter() - t


def test_c6_ssl_gain(say, ssl_runs):
    runs, dt = ssl_runs
    mean = {n: float(np.mean([runs[n, s][0] for s in SEEDS])) for n in VARIANTS}
    gain = mean["full"] - mean["supervised"]
    margin = mean["full"] - mean["no_pair"]
    ok = gain >= 0.05 and margin >= 0.0 and dt < 900.0
    say(
        6,
        ok,
        f"mean best val full {mean['full']:.4f}, no-pair {mean['no_pair']:.4f}, supervised {mean['supervised']:.4f}; "
        f"gain {100 * gain:+.1f}pp (need >= +5), vs no-pair {100 * margin:+.1f}pp (need >= 0); "
        f"{dt / 60:.1f} min (limit 15)",
    )


def test_c7_diagnostics_direction(say, ssl_runs):
    runs, _ = ssl_runs
    wins = []
    for s in SEEDS:
        _, hc_f, pp_f = runs["full", s]
        _, hc_n, pp_n = runs["no_pair", s]
        wins.append(pp_f >= pp_n and hc_f >= hc_n)
    detail = "; ".join(
        f"seed {s}: pair_pass {runs['full', s][2]:.3f} vs {runs['no_pair', s][2]:.3f}, "
        f"high_conf {runs['full', s][1]:.3f} vs {runs['no_pair', s][1]:.3f}"
        for s in SEEDS
    )
    say(7, sum(wins) >= 2, f"{sum(wins)}/3 seeds with both ratios >= the no-pair run ({detail})")


# ---------------------------------------------------------------- 8-10


def test_c8_unit_examples(say):
    checks = {
        "sharpen uniform": np.array_equal(sharpen([0.5, 0.5], 0.5), [0.5, 0.5]),
        "sharpen one-hot": np.array_equal(sharpen([0.0, 1.0, 0.0], 0.3), [0.0, 1.0, 0.0]),
        "sharpen [.6,.4] T=.5": np.allclose(sharpen([0.6, 0.4], 0.5), [0.69231, 0.30769], rtol=0, atol=1e-5),
        "sharpen exact 9/13": np.allclose(sharpen([0.6, 0.4], 0.5), [9 / 13, 4 / 13], rtol=0, atol=1e-15),
        "confidence": confidence([0.2, 0.5, 0.3]) == 0.5,
        "hard threshold strict": hard_threshold(0.95, 0.95) == 0.0 and hard_threshold(0.96, 0.95) == 0.96,
        "sim self": abs(bhattacharyya_sim([0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) - 1.0) < 1e-15,
        "sim orthogonal": bhattacharyya_sim([1.0, 0.0], [0.0, 1.0]) == 0.0,
        "sim [.5,.5],[1,0]": abs(bhattacharyya_sim([0.5, 0.5], [1.0, 0.0]) - 0.70711) < 1e-5,
        "distance [.5,.5],[1,0]": abs(pair_distance([0.5, 0.5], [1.0, 0.0]) - 0.29289) < 1e-5,
        "bound (1,1)": confidence_bound(1.0, 1.0) == 1.0,
        "bound (.95,.9)": abs(confidence_bound(0.95, 0.9) - math.cos(math.acos(math.sqrt(0.95)) + math.acos(0.9)) ** 2)
        < 1e-15,
        "total 53.5": abs(total_loss(1.0, 0.5, 0.2, LossWeights(75, 75)).total - 53.5) < 1e-12,
    }
    failed = [k for k, v in checks.items() if not v]
    say(8, not failed, f"{len(checks) - len(failed)}/{len(checks)} examples" + (f"; failed {failed}" if failed else ""))


def test_c9_ema_closed_form(say):
    rng = np.random.Generator(np.random.Philox(9))
    start = ParamSet({"w": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)})
    target = ParamSet({"w": rng.standard_normal((4, 3)), "b": rng.standard_normal(3)})
    decay = 0.999
    shadow = EmaShadow(decay, start.copy())
    for _ in range(1000):
        shadow = ema_update(shadow, target)
    a = decay**1000
    err = max(float(np.max(np.abs(shadow.params[k] - (a * start[k] + (1 - a) * target[k])))) for k in start)
    say(9, err <= 1e-12, f"1000 updates, max deviation from decay^t interpolation {err:.2e} (limit 1e-12)")


def test_c10_cifar_loader(say, tmp_path):
    rng = np.random.Generator(np.random.Philox(10))
    first = None
    for name in CIFAR_TRAIN_FILES:
        x = rng.integers(0, 256, (10_000, 3, 32, 32), dtype=np.uint8)
        y = rng.integers(0, 10, 10_000)
        write_cifar10_binary(tmp_path / name, x, y)
        if first is None:
            first = (tmp_path / name).read_bytes()[:CIFAR_RECORD]
    ds = load_cifar10_binary(tmp_path, "train")
    again = encode_cifar10_records(ds.store[:1], ds.labels[:1])
    imgs = ds.images(np.arange(3))
    ok = len(ds) == 50_000 and again == first and imgs.shape == (3, 3, 32, 32) and 0 <= imgs.min() <= imgs.max() <= 1
    say(10, ok, f"{len(ds)} train records parsed, first record round-trips: {again == first}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
