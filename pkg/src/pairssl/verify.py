"""Property suites behind ``pairssl verify``.

Each family returns a :class:`FamilyResult`. On failure the result carries a
small witness (the offending inputs) so the problem can be reproduced by hand.
Library functions are looked up through their modules at call time, so a
patched implementation is what gets checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import ndtensor as nt
from . import sslcore
from .nn import BackboneConfig, forward, init_params

DIMS = (2, 10, 100)
THRESHOLD_GRID = ((0.95, 0.9), (0.95, 0.7), (0.75, 0.9), (0.75, 0.7))
BOUND_SLACK = 1e-12
TIGHTNESS_TOL = 1e-3
GRAD_H = 1e-4
GRAD_TOL = 1e-4
PAIR_TOL = 1e-9


@dataclass
class FamilyResult:
    name: str
    passed: bool
    checked: int
    detail: str = ""
    witness: Optional[dict] = field(default=None)


def _fmt_vec(v: np.ndarray) -> str:
    nz = np.flatnonzero(v > 1e-15)
    if len(nz) <= 6:
        return "{" + ", ".join(f"{i}: {v[i]:.17g}" for i in nz) + f"}} (dim {len(v)})"
    return np.array2string(v, precision=6, threshold=12)


def format_witness(w: dict) -> str:
    lines = []
    for k, v in w.items():
        lines.append(f"  {k} = {_fmt_vec(v) if isinstance(v, np.ndarray) and v.ndim == 1 else v}")
    return "\n".join(lines)


# ---------------------------------------------------------------- theorem


def _dirichlet(rng, n, d, alpha):
    return rng.dirichlet(np.full(d, alpha), size=n)


def _great_circle(rng, n, d, tau_c, tau_s):
    """Pairs whose square roots lie on the arc from a vertex toward the uniform
    mix of the other vertices, with both thresholds passing by a hair."""
    a_max = math.acos(math.sqrt(tau_c))
    b_max = math.acos(tau_s)
    d1 = 10.0 ** rng.uniform(-9, -3, size=n)
    d2 = 10.0 ** rng.uniform(-9, -3, size=n)
    alpha = np.maximum(a_max - d1, 0.0)
    theta = np.minimum(alpha + np.maximum(b_max - d2, 0.0), math.pi / 2)
    j = rng.integers(0, d, size=n)
    others = 1.0 / (d - 1)

    def build(angle):
        out = np.tile((np.sin(angle) ** 2 * others)[:, None], (1, d))
        out[np.arange(n), j] = np.cos(angle) ** 2
        return out

    return build(alpha), build(theta)


def _near_vertex(rng, n, d):
    j = rng.integers(0, d, size=n)
    t = rng.uniform(0.0, 0.3, size=(n, 1))
    p = t * _dirichlet(rng, n, d, 0.5)
    p[np.arange(n), j] += 1.0 - t[:, 0]
    s = rng.uniform(0.0, 1.0, size=(n, 1))
    q = (1.0 - s) * p + s * _dirichlet(rng, n, d, 0.5)
    return p, q


def _achievable(tau_c: float, tau_s: float, d: int) -> Optional[float]:
    """The bound when the great-circle construction attains it in ``d`` dims, else None."""
    theta = math.acos(math.sqrt(tau_c)) + math.acos(tau_s)
    if theta >= math.pi / 2:
        return None
    bound = math.cos(theta) ** 2
    return bound if bound >= math.sin(theta) ** 2 / (d - 1) else None


def theorem_family(samples: int = 100_000, seed: int = 0) -> FamilyResult:
    """Any label pairing with a confident anchor is itself at least ``confidence_bound`` confident.

    Also checks that the bound is approached where it is attainable, which is
    what catches a similarity that is too strict.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    cells = [(d, tc, ts) for d in DIMS for tc, ts in THRESHOLD_GRID]
    per_cell = max(3, samples // len(cells))
    checked = 0
    passing_total = 0
    for d, tc, ts in cells:
        third = per_cell // 3
        parts = [
            (_dirichlet(rng, third, d, 0.2), _dirichlet(rng, third, d, 0.2)),
            _near_vertex(rng, third, d),
            _great_circle(rng, per_cell - 2 * third, d, tc, ts),
        ]
        p = np.concatenate([a for a, _ in parts])
        q = np.concatenate([b for _, b in parts])
        checked += len(p)
        conf_ok = np.asarray(sslcore.hard_threshold(p.max(axis=1), tc)) > 0
        sim = np.asarray(sslcore.bhattacharyya_sim(p, q))
        sim_ok = np.asarray(sslcore.hard_threshold(sim, ts)) > 0
        ok = conf_ok & sim_ok
        passing_total += int(ok.sum())
        bound = sslcore.confidence_bound(tc, ts)
        maxq = q.max(axis=1)
        bad = np.flatnonzero(ok & (maxq <= bound - BOUND_SLACK))
        if len(bad):
            i = bad[np.argmin(maxq[bad])]
            return FamilyResult(
                "theorem",
                False,
                checked,
                f"{len(bad)} pair(s) pass both thresholds with max(q) below the bound {bound!r}",
                {"p": p[i], "q": q[i], "tau_c": tc, "tau_s": ts, "sim": float(sim[i]), "bound": bound},
            )
        target = _achievable(tc, ts, d)
        if target is not None:
            gap = float(maxq[ok].min() - target) if ok.any() else math.inf
            if gap > TIGHTNESS_TOL:
                gp, gq = _great_circle(np.random.Generator(np.random.Philox(seed + 1)), 1, d, tc, ts)
                geo = float(np.sum(np.sqrt(gp[0]) * np.sqrt(gq[0])))
                return FamilyResult(
                    "theorem",
                    False,
                    checked,
                    f"bound {target:.6f} not approached for d={d} (closest passing max(q) is {target + gap:.6f})",
                    {
                        "p": gp[0],
                        "q": gq[0],
                        "tau_c": tc,
                        "tau_s": ts,
                        "sim_reported": float(np.asarray(sslcore.bhattacharyya_sim(gp[0], gq[0]))),
                        "sim_expected": geo,
                    },
                )
    return FamilyResult("theorem", True, checked, f"{passing_total} threshold-passing pairs, no violations")


# ---------------------------------------------------------------- pair loss


def pair_loss_oracle(q: np.ndarray, p: np.ndarray, tau_c: float, tau_s: float) -> float:
    """Exhaustive double loop over ordered pairs."""
    n = len(q)
    total = 0.0
    for i in range(n):
        conf = q[i].max()
        if not conf > tau_c:
            continue
        for j in range(n):
            if i == j:
                continue
            s = float(np.dot(np.sqrt(q[i]), np.sqrt(q[j])))
            if not s > tau_s:
                continue
            total += conf * s * (1.0 - float(np.dot(np.sqrt(q[i]), np.sqrt(p[j]))))
    return total / (n * (n - 1) / 2)


def random_pair_batch(rng, max_n: int = 64, max_l: int = 20):
    n = int(rng.integers(2, max_n + 1))
    L = int(rng.integers(2, max_l + 1))
    raw = rng.dirichlet(np.full(L, 0.3), size=n)
    q = sslcore.sharpen(np.maximum(raw, 1e-300), rng.uniform(0.2, 1.0))
    # duplicate some rows so that similar pairs exist
    dup = rng.integers(0, n, size=n // 3)
    q[rng.integers(0, n, size=len(dup))] = q[dup]
    p = rng.dirichlet(np.full(L, 1.0), size=n)
    return q, p


def pair_loss_family(batches: int = 200, seed: int = 0) -> FamilyResult:
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for b in range(batches):
        th = sslcore.Thresholds(*THRESHOLD_GRID[b % len(THRESHOLD_GRID)])
        q, p = random_pair_batch(rng)
        got = float(sslcore.pair_loss(q, nt.Tensor(p), th).data)
        want = pair_loss_oracle(q, p, th.tau_c, th.tau_s)
        err = abs(got - want)
        worst = max(worst, err)
        if not err <= PAIR_TOL:
            return FamilyResult(
                "pair_loss",
                False,
                b + 1,
                f"batch {b}: vectorized {got!r} vs double loop {want!r}",
                {"q": q, "p": p, "tau_c": th.tau_c, "tau_s": th.tau_s},
            )
    return FamilyResult("pair_loss", True, batches, f"max abs error {worst:.3g}")


# ---------------------------------------------------------------- gradients


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - b) / scale)


def numeric_grad(fn: Callable[[list], float], inputs: list, h: float = GRAD_H) -> list:
    grads = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            args = [a.copy() for a in inputs]
            args[k][idx] = x[idx] + h
            up = fn(args)
            args[k][idx] = x[idx] - h
            down = fn(args)
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def tape_grad(build: Callable[[list], nt.Tensor], inputs: list) -> list:
    tape = nt.Tape()
    leaves = [tape.watch(x) for x in inputs]
    g = nt.backward(build(leaves), tape)
    return [g[t] for t in leaves]


def _weighted(out: nt.Tensor, w: np.ndarray) -> nt.Tensor:
    return nt.sum(nt.mul(out, w))


def _away_from_zero(rng, shape, gap=0.1):
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(gap, 1.0, size=shape)


def gradient_cases(rng) -> dict[str, tuple[Callable, list]]:
    """Scalar-valued builders over small random inputs, one per differentiable op."""
    r = lambda *s: rng.normal(size=s)  # noqa: E731
    cases = {}
    w34 = r(3, 4)
    cases["add"] = (lambda t: _weighted(nt.add(t[0], t[1]), w34), [r(3, 4), r(1, 4)])
    cases["sub"] = (lambda t: _weighted(nt.sub(t[0], t[1]), w34), [r(3, 4), r(3, 1)])
    cases["mul"] = (lambda t: _weighted(nt.mul(t[0], t[1]), w34), [r(3, 4), r(3, 4)])
    cases["mul_scalar"] = (lambda t: _weighted(nt.mul(t[0], t[1]), w34), [r(3, 4), r()])
    w32 = r(3, 2)
    cases["matmul"] = (lambda t: _weighted(nt.matmul(t[0], t[1]), w32), [r(3, 4), r(4, 2)])
    wc1 = r(2, 3, 5, 5)
    cases["conv2d"] = (
        lambda t: _weighted(nt.conv2d(t[0], t[1], t[2], stride=1, pad=1), wc1),
        [r(2, 2, 5, 5), r(3, 2, 3, 3), r(3)],
    )
    wc2 = r(2, 3, 3, 3)
    cases["conv2d_stride2"] = (
        lambda t: _weighted(nt.conv2d(t[0], t[1], None, stride=2, pad=1), wc2),
        [r(2, 2, 5, 5), r(3, 2, 3, 3)],
    )
    cases["relu"] = (lambda t: _weighted(nt.relu(t[0]), w34), [_away_from_zero(rng, (3, 4))])
    wp = r(2, 2, 2, 2)
    # distinct values at least 0.01 apart so no window has a near tie
    pool_in = (rng.permutation(64).astype(float) * 0.01 + rng.normal()).reshape(2, 2, 4, 4)
    cases["maxpool2x2"] = (lambda t: _weighted(nt.maxpool2x2(t[0]), wp), [pool_in])
    w35 = r(3, 5)
    cases["softmax"] = (lambda t: _weighted(nt.softmax(t[0]), w35), [r(3, 5)])
    cases["log"] = (lambda t: _weighted(nt.log(t[0]), w34), [rng.uniform(0.1, 2.0, size=(3, 4))])
    cases["sqrt"] = (lambda t: _weighted(nt.sqrt(t[0]), w34), [rng.uniform(0.1, 2.0, size=(3, 4))])
    w3 = r(3)
    cases["sum_axis"] = (lambda t: _weighted(nt.sum(t[0], axis=1), w3), [r(3, 4)])
    w14 = r(1, 4)
    cases["mean_keepdims"] = (lambda t: _weighted(nt.mean(t[0], axis=0, keepdims=True), w14), [r(3, 4)])
    w26 = r(2, 6)
    cases["reshape"] = (lambda t: _weighted(nt.reshape(t[0], (2, 6)), w26), [r(3, 4)])
    w212 = r(2, 12)
    cases["flatten"] = (lambda t: _weighted(nt.flatten(t[0]), w212), [r(2, 3, 2, 2)])
    cases["dense"] = (lambda t: _weighted(nt.dense(t[0], t[1], t[2]), w32), [r(3, 4), r(4, 2), r(2)])
    cases["total_loss"] = _composed_case(rng)
    return cases


def _composed_case(rng):
    """Full loss through a tiny backbone, gradients w.r.t. every parameter."""
    cfg = BackboneConfig((1, 8, 8), (2,), 5, 3)
    params = init_params(cfg, rng)
    names = params.names()
    n = 4
    x = rng.uniform(0.0, 1.0, size=(n, 1, 8, 8))
    u = rng.uniform(0.0, 1.0, size=(n, 1, 8, 8))
    y = np.eye(3)[rng.integers(0, 3, size=n)]
    q = np.array([[0.97, 0.02, 0.01], [0.96, 0.03, 0.01], [0.2, 0.5, 0.3], [0.01, 0.01, 0.98]])
    th = sslcore.Thresholds(0.95, 0.9)

    def build(t):
        p = dict(zip(names, t))
        l_x = sslcore.supervised_loss(y, nt.softmax(forward(p, cfg, x)))
        pu = nt.softmax(forward(p, cfg, u))
        l_u = sslcore.unsupervised_loss(q, pu, th.tau_c, 3)
        l_p = sslcore.pair_loss(q, pu, th)
        return nt.add(nt.add(l_x, nt.mul(l_u, 75.0)), nt.mul(l_p, 75.0))

    return build, [params[k] for k in names]


def gradient_family(seeds: int = 5, seed0: int = 0) -> FamilyResult:
    checked = 0
    for s in range(seed0, seed0 + seeds):
        rng = np.random.Generator(np.random.Philox(s))
        for name, (build, inputs) in gradient_cases(rng).items():
            analytic = tape_grad(build, inputs)
            numeric = numeric_grad(lambda args: float(build([nt.Tensor(a) for a in args]).data), inputs)
            checked += 1
            for k, (a, b) in enumerate(zip(analytic, numeric)):
                err = relative_error(a, b)
                if not err < GRAD_TOL:
                    return FamilyResult(
                        "gradients",
                        False,
                        checked,
                        f"{name} (seed {s}, input {k}): relative error {err:.3g}",
                        {"op": name, "seed": s, "input": k, "analytic": a.ravel()[:8], "numeric": b.ravel()[:8]},
                    )
    return FamilyResult("gradients", True, checked, f"{checked} op/seed combinations")


# ---------------------------------------------------------------- sharpen / similarity


def sharpen_similarity_family(samples: int = 2000, seed: int = 0) -> FamilyResult:
    rng = np.random.Generator(np.random.Philox(seed))
    fixed = [
        ("sharpen([.6,.4],.5)", sslcore.sharpen([0.6, 0.4], 0.5), np.array([9 / 13, 4 / 13]), 1e-12),
        ("sim([.5,.5],[1,0])", sslcore.bhattacharyya_sim([0.5, 0.5], [1.0, 0.0]), math.sqrt(0.5), 1e-12),
        ("sim(e1,e2)", sslcore.bhattacharyya_sim([1.0, 0.0], [0.0, 1.0]), 0.0, 0.0),
    ]
    for name, got, want, tol in fixed:
        if not np.all(np.abs(np.asarray(got) - want) <= tol):
            return FamilyResult("sharpen_similarity", False, 0, f"{name} gave {got}, expected {want}",
                                {"case": name, "got": np.atleast_1d(got), "expected": np.atleast_1d(want)})
    for i in range(samples):
        d = int(rng.integers(2, 30))
        p = rng.dirichlet(np.full(d, 0.7))
        q = rng.dirichlet(np.full(d, 0.7))
        T = float(rng.uniform(0.1, 2.0))
        sp = sslcore.sharpen(p, T)
        s_pq = float(sslcore.bhattacharyya_sim(p, q))
        s_qp = float(sslcore.bhattacharyya_sim(q, p))
        s_pp = float(sslcore.bhattacharyya_sim(p, p))
        problems = []
        if abs(sp.sum() - 1.0) > 1e-12:
            problems.append("sharpened vector does not sum to 1")
        if np.argmax(sp) != np.argmax(p):
            problems.append("sharpening moved the argmax")
        if T < 1 and sp.max() < p.max() - 1e-12:
            problems.append("T<1 lowered the confidence")
        if not 0.0 <= s_pq <= 1.0:
            problems.append("similarity outside [0, 1]")
        if s_pq != s_qp:
            problems.append("similarity not symmetric")
        if abs(s_pp - 1.0) > 1e-12:
            problems.append("self-similarity is not 1")
        if problems:
            return FamilyResult("sharpen_similarity", False, i + 1, "; ".join(problems), {"p": p, "q": q, "T": T})
    return FamilyResult("sharpen_similarity", True, samples + len(fixed))


FAMILIES = ("theorem", "pair_loss", "gradients", "sharpen_similarity")


def run_all(samples: int = 100_000, seed: int = 0, grad_seeds: int = 5) -> list[FamilyResult]:
    return [
        theorem_family(samples, seed),
        pair_loss_family(200, seed),
        gradient_family(grad_seeds, seed),
        sharpen_similarity_family(2000, seed),
    ]
