"""Training loop: batch assembly, the SSL step, EMA evaluation, checkpoints and metrics."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import ndtensor as nt
from .augment import strong_augment, weak_augment
from .config import TrainConfig
from .data import (
    LabeledDataset,
    LabeledView,
    UnlabeledView,
    generate_toy_shapes,
    load_cifar10_binary,
    stratified_split,
)
from .errors import ConfigError, NonFiniteError, ShapeError
from .nn import (
    EmaShadow,
    OptimizerState,
    ParamSet,
    cosine_lr,
    ema_update,
    forward,
    init_optimizer,
    init_params,
    load_checkpoint,
    optimizer_step,
    predict_proba,
    save_checkpoint,
)
from .rng import make_stream, make_streams, restore_stream, stream_state
from .sslcore import (
    DiagnosticsWindow,
    LossBreakdown,
    guess_labels,
    pair_diagnostics,
    pair_loss,
    supervised_loss,
    total_loss,
    unsupervised_loss,
)

logger = logging.getLogger(__name__)

METRICS_HEADER = (
    "step",
    "l_x",
    "l_u",
    "l_p",
    "total",
    "lr",
    "val_acc",
    "test_acc",
    "high_conf_ratio",
    "pair_pass_ratio",
    "fp_pair_rate",
)

# test set of the toy dataset is drawn from a different generator seed
_TOY_TEST_SEED_OFFSET = 1_000_003


@dataclass
class ModelState:
    params: ParamSet
    ema: EmaShadow
    opt: OptimizerState
    step: int = 0


@dataclass(frozen=True)
class MetricsRow:
    step: int
    l_x: Optional[float]
    l_u: Optional[float]
    l_p: Optional[float]
    total: Optional[float]
    lr: float
    val_acc: float
    test_acc: Optional[float] = None
    high_conf_ratio: Optional[float] = None
    pair_pass_ratio: Optional[float] = None
    fp_pair_rate: Optional[float] = None

    def to_csv(self) -> list[str]:
        return ["" if v is None else repr(v) for v in (getattr(self, k) for k in METRICS_HEADER)]

    @classmethod
    def from_csv(cls, row: dict) -> "MetricsRow":
        kw = {}
        for f in fields(cls):
            raw = row[f.name]
            kw[f.name] = None if raw == "" else (int(raw) if f.name == "step" else float(raw))
        return cls(**kw)


@dataclass(frozen=True)
class CheckpointRecord:
    step: int
    val_acc: float
    path: Optional[str]
    config_digest: str


@dataclass
class TrainData:
    labeled: LabeledView
    unlabeled: UnlabeledView
    validation: LabeledView
    test: Optional[LabeledView] = None


# ---------------------------------------------------------------- data / state


def build_data(cfg: TrainConfig) -> TrainData:
    """Dataset and split for ``cfg``; deterministic in ``cfg.resolved_data_seed``."""
    if cfg.dataset == "toy":
        ds = generate_toy_shapes(cfg.num_classes, cfg.n_per_class, cfg.image_size, cfg.resolved_data_seed)
        test = None
        if cfg.test_per_class > 0:
            tds = generate_toy_shapes(
                cfg.num_classes, cfg.test_per_class, cfg.image_size, cfg.resolved_data_seed + _TOY_TEST_SEED_OFFSET
            )
            test = LabeledView(tds, np.arange(len(tds)))
    else:
        if cfg.data_dir is None:
            raise ConfigError("dataset 'cifar10' needs data_dir")
        if cfg.num_classes != 10 or cfg.image_size != 32:
            raise ConfigError("cifar10 needs num_classes=10 and image_size=32")
        ds = load_cifar10_binary(cfg.data_dir, "train")
        test = None
        if (Path(cfg.data_dir) / "test_batch.bin").is_file():
            tds = load_cifar10_binary(cfg.data_dir, "test")
            test = LabeledView(tds, np.arange(len(tds)))
    labeled, unlabeled, validation = stratified_split(ds, cfg.split)
    return TrainData(labeled, unlabeled, validation, test)


def init_state(cfg: TrainConfig) -> ModelState:
    params = init_params(cfg.backbone, make_stream(cfg.seed, "init"))
    opt = init_optimizer(params, cfg.optimizer, lr=cfg.lr, weight_decay=cfg.weight_decay, momentum=cfg.momentum)
    return ModelState(params, EmaShadow.from_params(params, cfg.ema_decay), opt, 0)


class CyclicSampler:
    """Yields index batches from a permutation that is reshuffled every epoch.

    Batches may straddle an epoch boundary: the tail of one permutation is
    completed from the head of the next.
    """

    def __init__(self, n: int, batch: int, rng: np.random.Generator):
        if n < 1:
            raise ConfigError("cannot sample batches from an empty split")
        self.n, self.batch, self.rng = n, batch, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        out = []
        need = self.batch
        while need:
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            take = min(need, self.n - self.pos)
            out.append(self.perm[self.pos : self.pos + take])
            self.pos += take
            need -= take
        return np.concatenate(out)

    def state(self) -> dict:
        return {"perm": self.perm.tolist(), "pos": self.pos, "rng": stream_state(self.rng)}

    @classmethod
    def restore(cls, n: int, batch: int, state: dict) -> "CyclicSampler":
        obj = cls.__new__(cls)
        obj.n, obj.batch = n, batch
        obj.rng = restore_stream(state["rng"])
        obj.perm = np.asarray(state["perm"], dtype=np.int64)
        obj.pos = int(state["pos"])
        return obj


# ---------------------------------------------------------------- step


def learning_rate(cfg: TrainConfig, step: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.lr
    return cosine_lr(min(step, cfg.total_steps), cfg.total_steps, cfg.lr, cfg.lr_decay_rate)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(labels, dtype=np.int64)]


def train_step(
    state: ModelState,
    x: np.ndarray,
    y: np.ndarray,
    u: np.ndarray,
    cfg: TrainConfig,
    streams: dict[str, np.random.Generator],
    u_truth: Optional[np.ndarray] = None,
) -> tuple[ModelState, LossBreakdown]:
    """One optimisation step on a labeled batch ``(x, y)`` and unlabeled batch ``u``."""
    if len(x) != cfg.batch_size or len(u) != cfg.batch_size or len(y) != len(x):
        raise ShapeError(
            f"expected batches of {cfg.batch_size}, got labeled {len(x)}/{len(y)} and unlabeled {len(u)}"
        )
    bcfg = cfg.backbone
    x_weak = weak_augment(x, streams["weak_labeled"], cfg.weak_aug)
    u_weak = [weak_augment(u, streams["weak_unlabeled"], cfg.weak_aug) for _ in range(cfg.k_weak)]
    u_strong = [strong_augment(u, streams["strong"], cfg.strong_aug) for _ in range(cfg.k_strong)]

    try:
        pseudo = guess_labels(state.ema.params, bcfg, u_weak, cfg.temperature)
        # entry k*B + b of the strong set pairs view k of sample b with its guess
        pseudo_hat = np.tile(pseudo, (cfg.k_strong, 1))
        strong_batch = np.concatenate(u_strong, axis=0)

        tape = nt.Tape()
        live = state.params.track(tape)
        px = nt.softmax(forward(live, bcfg, x_weak))
        l_x = supervised_loss(one_hot(y, cfg.num_classes), px)
        # with both unlabeled weights at zero the unlabeled branch stays off the tape
        unsup_params = live if (cfg.lambda_u > 0 or cfg.lambda_p > 0) else state.params.constants()
        pu = nt.softmax(forward(unsup_params, bcfg, strong_batch))
        l_u = unsupervised_loss(pseudo_hat, pu, cfg.tau_c, cfg.num_classes)
        l_p = pair_loss(pseudo_hat, pu, cfg.thresholds)
        total = nt.add(nt.add(l_x, nt.mul(l_u, cfg.lambda_u)), nt.mul(l_p, cfg.lambda_p))

        grads = nt.backward(total, tape)
    except NonFiniteError as exc:
        raise NonFiniteError(f"non-finite value at step {state.step}: {exc}") from exc
    gmap = {k: grads[t] for k, t in live.items()}
    params, opt = optimizer_step(state.opt, state.params, gmap, learning_rate(cfg, state.step))
    ema = ema_update(state.ema, params)

    diag = pair_diagnostics(pseudo, cfg.thresholds, u_truth)
    breakdown = total_loss(l_x, l_u, l_p, cfg.weights, diag)
    return ModelState(params, ema, opt, state.step + 1), breakdown


# ---------------------------------------------------------------- evaluation


def evaluate(params: ParamSet, cfg: TrainConfig, split: LabeledView) -> float:
    """Top-1 accuracy; ``argmax`` ties resolve to the lowest class index."""
    if len(split) == 0:
        raise ValueError("cannot evaluate on an empty split")
    probs = predict_proba(params, cfg.backbone, split.images())
    return float(np.mean(np.argmax(probs, axis=1) == split.labels()))


def convergence_step(history) -> int:
    """Earliest evaluated step whose validation accuracy reaches 95% of the best."""
    rows = list(history)
    if not rows:
        raise ValueError("empty history")
    best = max(r.val_acc for r in rows)
    return next(r.step for r in rows if r.val_acc >= 0.95 * best)


# ---------------------------------------------------------------- loop


class MetricsWriter:
    """Append-only CSV; every row is flushed and synced before the loop moves on."""

    def __init__(self, path: Path, truncate_after: Optional[int] = None):
        self.path = Path(path)
        if truncate_after is not None and self.path.exists():
            kept = [r for r in read_metrics(self.path) if r.step <= truncate_after]
            self._rewrite(kept)
        new = not self.path.exists() or self.path.stat().st_size == 0
        self.fh = open(self.path, "a", newline="")
        self.writer = csv.writer(self.fh)
        if new:
            self.writer.writerow(METRICS_HEADER)
            self._flush()

    def _rewrite(self, rows) -> None:
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRICS_HEADER)
            for r in rows:
                w.writerow(r.to_csv())
        os.replace(tmp, self.path)

    def _flush(self) -> None:
        self.fh.flush()
        os.fsync(self.fh.fileno())

    def write(self, row: MetricsRow) -> None:
        self.writer.writerow(row.to_csv())
        self._flush()

    def close(self) -> None:
        self.fh.close()


def read_metrics(path) -> list[MetricsRow]:
    with open(path, newline="") as fh:
        return [MetricsRow.from_csv(r) for r in csv.DictReader(fh)]


@dataclass
class _LoopState:
    model: ModelState
    streams: dict
    lab_sampler: CyclicSampler
    unl_sampler: CyclicSampler
    window: DiagnosticsWindow
    history: list = field(default_factory=list)
    best: Optional[CheckpointRecord] = None


def _state_arrays(model: ModelState) -> dict[str, np.ndarray]:
    arrays = {f"params/{k}": v for k, v in model.params.items()}
    arrays.update({f"ema/{k}": v for k, v in model.ema.params.items()})
    for buf, d in model.opt.buffers.items():
        arrays.update({f"opt/{buf}/{k}": v for k, v in d.items()})
    return arrays


def _save(path: Path, cfg: TrainConfig, ls: _LoopState) -> None:
    opt = {k: v for k, v in ls.model.opt.__dict__.items() if k != "buffers"}
    meta = {
        "config": cfg.to_dict(),
        "config_digest": cfg.digest(),
        "step": ls.model.step,
        "optimizer": opt,
        "streams": {k: stream_state(g) for k, g in ls.streams.items()},
        "labeled_sampler": ls.lab_sampler.state(),
        "unlabeled_sampler": ls.unl_sampler.state(),
        "diag_window": [list(r) for r in ls.window.rows],
        "history": [[getattr(r, k) for k in METRICS_HEADER] for r in ls.history],
        "best": None if ls.best is None else ls.best.__dict__,
    }
    save_checkpoint(path, _state_arrays(ls.model), meta)


def _restore(path, cfg: TrainConfig, data: TrainData) -> _LoopState:
    ck = load_checkpoint(path)
    meta = ck.meta
    if meta.get("config_digest") != cfg.digest():
        raise ConfigError(f"{path}: checkpoint was written by a different config ({meta.get('config_digest')})")

    def group(prefix):
        n = len(prefix)
        return {k[n:]: v for k, v in ck.arrays.items() if k.startswith(prefix)}

    params = ParamSet(group("params/"))
    ema = EmaShadow(cfg.ema_decay, ParamSet(group("ema/")))
    bufs = {}
    for k, v in ck.arrays.items():
        if k.startswith("opt/"):
            _, buf, name = k.split("/", 2)
            bufs.setdefault(buf, {})[name] = v
    opt = OptimizerState(**meta["optimizer"], buffers=bufs)
    model = ModelState(params, ema, opt, int(meta["step"]))
    streams = {k: restore_stream(s) for k, s in meta["streams"].items()}
    lab = CyclicSampler.restore(len(data.labeled), cfg.batch_size, meta["labeled_sampler"])
    unl = CyclicSampler.restore(len(data.unlabeled), cfg.batch_size, meta["unlabeled_sampler"])
    window = DiagnosticsWindow(cfg.diag_window, [tuple(r) for r in meta["diag_window"]])
    history = [MetricsRow(*r) for r in meta["history"]]
    best = None if meta["best"] is None else CheckpointRecord(**meta["best"])
    return _LoopState(model, streams, lab, unl, window, history, best)


def run_training(
    cfg: TrainConfig,
    out_dir=None,
    resume=None,
    data: Optional[TrainData] = None,
    on_row: Optional[Callable[[MetricsRow], None]] = None,
) -> tuple[list[MetricsRow], CheckpointRecord]:
    """Run ``cfg.total_steps`` steps, evaluating every ``cfg.eval_every``.

    With ``out_dir`` set, writes ``metrics.csv`` plus ``checkpoints/last.ckpt``
    and ``checkpoints/best.ckpt``. ``resume`` continues from a checkpoint
    written by the same config. Returns the full metrics history and the record
    of the best-validation evaluation.
    """
    data = data or build_data(cfg)
    out = Path(out_dir) if out_dir is not None else None
    ckpt_dir = None
    if out is not None:
        ckpt_dir = out / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    if resume is not None:
        ls = _restore(resume, cfg, data)
    else:
        streams = make_streams(cfg.seed)
        lab = CyclicSampler(len(data.labeled), cfg.batch_size, streams.pop("labeled_order"))
        unl = CyclicSampler(len(data.unlabeled), cfg.batch_size, streams.pop("unlabeled_order"))
        streams.pop("init")
        ls = _LoopState(init_state(cfg), streams, lab, unl, DiagnosticsWindow(cfg.diag_window))

    writer = MetricsWriter(out / "metrics.csv", truncate_after=ls.model.step) if out is not None else None
    sums = np.zeros(4)
    count = 0

    def record(row: MetricsRow) -> None:
        ls.history.append(row)
        if writer is not None:
            writer.write(row)
        if ls.best is None or row.val_acc > ls.best.val_acc:
            path = str(ckpt_dir / "best.ckpt") if ckpt_dir is not None else None
            ls.best = CheckpointRecord(row.step, row.val_acc, path, cfg.digest())
            if ckpt_dir is not None:
                _save(ckpt_dir / "best.ckpt", cfg, ls)
        if ckpt_dir is not None:
            _save(ckpt_dir / "last.ckpt", cfg, ls)
        if on_row is not None:
            on_row(row)

    def eval_row(losses) -> MetricsRow:
        ema = ls.model.ema.params
        high, pair, fp = ls.window.summary()
        test = evaluate(ema, cfg, data.test) if data.test is not None else None
        return MetricsRow(
            ls.model.step,
            *losses,
            learning_rate(cfg, ls.model.step),
            evaluate(ema, cfg, data.validation),
            test,
            high,
            pair,
            fp,
        )

    try:
        if ls.model.step == 0 and not ls.history:
            record(eval_row((None, None, None, None)))
        while ls.model.step < cfg.total_steps:
            li = ls.lab_sampler.next()
            ui = ls.unl_sampler.next()
            ls.model, br = train_step(
                ls.model,
                data.labeled.images(li),
                data.labeled.labels(li),
                data.unlabeled.images(ui),
                cfg,
                ls.streams,
                u_truth=data.unlabeled.diagnostic_truth(ui),
            )
            ls.window.push(br.diagnostics)
            sums += (br.l_x, br.l_u, br.l_p, br.total)
            count += 1
            if ls.model.step % cfg.eval_every == 0 or ls.model.step == cfg.total_steps:
                record(eval_row(tuple(float(v) for v in sums / count)))
                sums[:] = 0.0
                count = 0
    finally:
        if writer is not None:
            writer.close()
    return ls.history, ls.best
