"""Pseudo-labelling maths and the three training losses.

Probability batches are plain ``[N, L]`` numpy arrays when they are targets
(pseudo labels, one-hot labels) and :class:`~pairssl.ndtensor.Tensor` when they
are live model predictions that gradients must flow through.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ndtensor as nt
from .errors import ConfigError, ShapeError
from .nn import BackboneConfig, ParamSet, forward

logger = logging.getLogger(__name__)

LOG_EPS = 1e-12


@dataclass(frozen=True)
class Thresholds:
    tau_c: float = 0.95
    tau_s: float = 0.9

    def __post_init__(self):
        for name in ("tau_c", "tau_s"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class LossWeights:
    lambda_u: float = 75.0
    lambda_p: float = 75.0

    def __post_init__(self):
        if self.lambda_u < 0 or self.lambda_p < 0:
            raise ConfigError("loss weights must be nonnegative")


@dataclass(frozen=True)
class PairDiagnostics:
    high_conf_ratio: float
    pair_pass_ratio: float
    false_positive_pair_rate: Optional[float]
    # raw counts, kept so windows can be pooled exactly
    n_labels: int = 0
    n_high_conf: int = 0
    n_pairs: int = 0
    n_pass: int = 0
    n_false_pos: Optional[int] = None


@dataclass(frozen=True)
class LossBreakdown:
    l_x: float
    l_u: float
    l_p: float
    total: float
    diagnostics: Optional[PairDiagnostics] = None
    pair_degenerate: bool = False


# ---------------------------------------------------------------- label maths


def sharpen(p, T: float) -> np.ndarray:
    """Temperature sharpening ``p**(1/T) / sum(p**(1/T))`` along the last axis."""
    if T <= 0:
        raise ValueError(f"temperature must be positive, got {T}")
    p = np.asarray(p, dtype=np.float64)
    top = p.max(axis=-1, keepdims=True)
    if np.any(top <= 0):
        raise ValueError("cannot sharpen a vector with zero mass")
    # dividing by the row max first keeps p**(1/T) away from underflow
    powered = (p / top) ** (1.0 / T)
    return powered / powered.sum(axis=-1, keepdims=True)


def confidence(p) -> np.ndarray:
    return np.asarray(p, dtype=np.float64).max(axis=-1)


def hard_threshold(x, t: float):
    """``x`` where ``x > t`` (strictly), else 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > t, x, 0.0)
    return float(out) if out.ndim == 0 else out


def bhattacharyya_sim(p, q) -> np.ndarray:
    """Bhattacharyya coefficient ``sqrt(p) . sqrt(q)`` along the last axis, clipped to [0, 1]."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    s = np.sum(np.sqrt(p) * np.sqrt(q), axis=-1)
    return np.clip(s, 0.0, 1.0)


def pair_distance(p, q) -> np.ndarray:
    return 1.0 - bhattacharyya_sim(p, q)


def confidence_bound(tau_c: float, tau_s: float) -> float:
    """Smallest confidence a label can have while pairing with an anchor.

    ``cos(acos(sqrt(tau_c)) + acos(tau_s))**2``; zero once the angle sum
    reaches a right angle.
    """
    angle = math.acos(math.sqrt(tau_c)) + math.acos(tau_s)
    if angle >= math.pi / 2:
        return 0.0
    return math.cos(angle) ** 2


def pair_gate(pseudo: np.ndarray, thresholds: Thresholds) -> np.ndarray:
    """``gate[i, j] = phi_c(max q_i) * phi_s(sim(q_i, q_j))`` with a zero diagonal."""
    q = np.asarray(pseudo, dtype=np.float64)
    conf = hard_threshold(q.max(axis=1), thresholds.tau_c)
    root = np.sqrt(q)
    sim = np.clip(root @ root.T, 0.0, 1.0)
    gate = np.atleast_1d(conf)[:, None] * np.where(sim > thresholds.tau_s, sim, 0.0)
    np.fill_diagonal(gate, 0.0)
    return gate


# ---------------------------------------------------------------- losses


def guess_labels(
    ema_params: ParamSet,
    cfg: BackboneConfig,
    weak_views: Sequence[np.ndarray],
    T: float,
) -> np.ndarray:
    """Sharpened mean EMA prediction over ``K`` weakly augmented views; no gradient."""
    if len(weak_views) == 0:
        raise ValueError("need at least one weak view to guess labels")
    n = len(weak_views[0])
    if any(len(v) != n for v in weak_views):
        raise ShapeError("all weak views must share the batch size")
    stacked = np.concatenate(list(weak_views), axis=0)
    probs = nt.softmax(forward(ema_params, cfg, stacked)).data
    mean = probs.reshape(len(weak_views), n, -1).mean(axis=0)
    return sharpen(mean, T)


def supervised_loss(labels: np.ndarray, preds: nt.Tensor) -> nt.Tensor:
    """Mean cross-entropy ``-sum(y * log p)`` over the batch."""
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != preds.shape:
        raise ShapeError(f"labels {y.shape} and predictions {preds.shape} differ")
    return nt.mul(nt.sum(nt.mul(nt.log(preds, LOG_EPS), y)), -1.0 / y.shape[0])


def unsupervised_loss(pseudo: np.ndarray, preds: nt.Tensor, tau_c: float, num_classes: int) -> nt.Tensor:
    """Confidence-masked squared L2, divided by ``num_classes * N`` (rejected rows still count in N)."""
    q = np.asarray(pseudo, dtype=np.float64)
    if q.shape != preds.shape:
        raise ShapeError(f"pseudo labels {q.shape} and predictions {preds.shape} differ")
    if q.shape[1] != num_classes:
        raise ShapeError(f"label length {q.shape[1]} does not match class count {num_classes}")
    mask = (q.max(axis=1) > tau_c).astype(np.float64)[:, None]
    diff = nt.sub(preds, q)
    return nt.mul(nt.sum(nt.mul(nt.mul(diff, diff), mask)), 1.0 / (num_classes * q.shape[0]))


def pair_loss(pseudo: np.ndarray, strong_preds: nt.Tensor, thresholds: Thresholds) -> nt.Tensor:
    """Pair loss over index-aligned (pseudo label, strong prediction) entries.

    Sums ``gate[i, j] * (1 - sim(q_i, p_j))`` over ordered pairs ``i != j`` and
    divides by ``C(n, 2)``. Gradients reach only ``strong_preds``.
    """
    q = np.asarray(pseudo, dtype=np.float64)
    if q.shape != strong_preds.shape:
        raise ShapeError(f"pseudo labels {q.shape} and predictions {strong_preds.shape} differ")
    n = q.shape[0]
    if n < 2:
        logger.debug("pair loss needs at least two entries, got %d", n)
        return nt.Tensor(0.0)
    gate = pair_gate(q, thresholds)
    # sum_ij gate_ij * sqrt(q_i).sqrt(p_j) == sum_jk (gate^T sqrt(q))_jk * sqrt(p_jk)
    pull = gate.T @ np.sqrt(q)
    overlap = nt.sum(nt.mul(nt.sqrt(strong_preds), pull))
    norm = n * (n - 1) / 2
    return nt.mul(nt.sub(gate.sum(), overlap), 1.0 / norm)


def total_loss(l_x, l_u, l_p, weights: LossWeights, diagnostics: Optional[PairDiagnostics] = None) -> LossBreakdown:
    lx, lu, lp = (float(v.data) if isinstance(v, nt.Tensor) else float(v) for v in (l_x, l_u, l_p))
    total = lx + weights.lambda_u * lu + weights.lambda_p * lp
    return LossBreakdown(lx, lu, lp, total, diagnostics)


# ---------------------------------------------------------------- diagnostics


def pair_diagnostics(
    pseudo: np.ndarray, thresholds: Thresholds, true_classes: Optional[np.ndarray] = None
) -> PairDiagnostics:
    q = np.asarray(pseudo, dtype=np.float64)
    n = q.shape[0]
    n_high = int(np.sum(q.max(axis=1) > thresholds.tau_c))
    n_pairs = n * (n - 1)
    passing = pair_gate(q, thresholds) > 0
    n_pass = int(passing.sum())
    fp = fp_rate = None
    if true_classes is not None:
        t = np.asarray(true_classes)
        differ = t[:, None] != t[None, :]
        fp = int(np.sum(passing & differ))
        fp_rate = fp / n_pass if n_pass else 0.0
    return PairDiagnostics(
        high_conf_ratio=n_high / n if n else 0.0,
        pair_pass_ratio=n_pass / n_pairs if n_pairs else 0.0,
        false_positive_pair_rate=fp_rate,
        n_labels=n,
        n_high_conf=n_high,
        n_pairs=n_pairs,
        n_pass=n_pass,
        n_false_pos=fp,
    )


@dataclass
class DiagnosticsWindow:
    """Pools per-step diagnostic counts over the most recent ``size`` steps."""

    size: int = 100
    rows: list = field(default_factory=list)

    def push(self, d: PairDiagnostics) -> None:
        self.rows.append((d.n_labels, d.n_high_conf, d.n_pairs, d.n_pass, d.n_false_pos))
        if len(self.rows) > self.size:
            del self.rows[: len(self.rows) - self.size]

    def summary(self) -> tuple[Optional[float], Optional[float], Optional[float]]:
        if not self.rows:
            return None, None, None
        arr = np.array([[r[0], r[1], r[2], r[3]] for r in self.rows], dtype=np.int64).sum(axis=0)
        high = arr[1] / arr[0] if arr[0] else 0.0
        pair = arr[3] / arr[2] if arr[2] else 0.0
        fps = [r[4] for r in self.rows]
        if any(f is None for f in fps):
            fp = None
        else:
            fp = sum(fps) / arr[3] if arr[3] else 0.0
        return float(high), float(pair), (None if fp is None else float(fp))
