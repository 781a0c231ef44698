"""Command line entry point: ``pairssl {train,eval,ablate,verify}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure, 3 property
violation (``verify`` only).
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import statistics
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional, Sequence

import yaml

from . import __version__
from .config import PRESETS, TrainConfig, load_config_file, resolve_config, set_nested
from .errors import ConfigError
from .nn import ParamSet, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PROPERTY = 0, 1, 2, 3

logger = logging.getLogger("pairssl")

_NESTED = ("weak_aug", "strong_aug")
_SCALAR_KEYS = [f.name for f in fields(TrainConfig) if f.name not in _NESTED]


@dataclass
class RunManifest:
    config: dict
    version: str
    started: str
    finished: Optional[str] = None
    status: str = "running"
    layout: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, path: Path) -> None:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.to_json() + "\n")
        tmp.replace(path)


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


# ---------------------------------------------------------------- parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML/JSON config file")
    p.add_argument("--preset", choices=sorted(PRESETS), help="start from a named preset (default: toy)")
    p.add_argument(
        "--set",
        dest="sets",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any key, dotted for nested ones (strong_aug.erase_p=0)",
    )
    g = p.add_argument_group("config keys (override file and preset)")
    for key in _SCALAR_KEYS:
        g.add_argument("--" + key.replace("_", "-"), dest="opt_" + key, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairssl", description="Semi-supervised training with pair loss on a numpy engine.")
    parser.add_argument("--version", action="version", version=f"pairssl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="run one training job")
    _add_config_args(t)
    t.add_argument("--out", type=Path, help="run directory (default runs/<digest>)")
    t.add_argument("--resume", type=Path, help="continue from a checkpoint written by the same config")

    e = sub.add_parser("eval", help="evaluate the EMA model stored in a checkpoint")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("--split", choices=("validation", "test", "both"), default="both")

    a = sub.add_parser("ablate", help="run a grid of configs over several seeds")
    _add_config_args(a)
    a.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2", help="repeatable; cells are the product")
    a.add_argument("--seeds", default="0", help="comma separated seeds shared by every cell")
    a.add_argument("--out", type=Path, default=Path("runs/ablate"))
    a.add_argument("--jobs", type=int, default=1, help="parallel processes")

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--samples", type=int, default=100_000, help="random label pairs for the bound check")
    v.add_argument("--grad-seeds", type=int, default=5, help="random seeds for the gradient checks")
    v.add_argument("--seed", type=int, default=0)
    return parser


def _parse_value(text: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def config_from_args(args) -> TrainConfig:
    """Preset, then ``--config`` file, then ``--set``, then named flags."""
    file_values = load_config_file(args.config) if args.config else {}
    preset = args.preset
    if preset is None and "preset" not in file_values:
        preset = "toy"
    overrides: dict[str, Any] = {}
    for item in args.sets:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        set_nested(overrides, key.replace("-", "_"), _parse_value(value))
    for key in _SCALAR_KEYS:
        value = getattr(args, "opt_" + key)
        if value is not None:
            overrides[key] = _parse_value(value) if key != "data_dir" else value
    return resolve_config(preset, file_values, overrides)


def _config_given(args) -> bool:
    return bool(args.config or args.preset or args.sets or any(getattr(args, "opt_" + k) is not None for k in _SCALAR_KEYS))


# ---------------------------------------------------------------- commands


def summary_line(history, best) -> str:
    from .trainer import convergence_step

    best_row = next(r for r in history if r.step == best.step)
    test = "na" if best_row.test_acc is None else f"{best_row.test_acc:.4f}"
    return f"best_val={best.val_acc:.4f} test={test} convergence_step={convergence_step(history)}"


def cmd_train(args) -> int:
    from .trainer import run_training

    if args.resume is not None:
        ck = load_checkpoint(args.resume)
        cfg = config_from_args(args) if _config_given(args) else TrainConfig.from_dict(ck.meta["config"])
        out = args.out or args.resume.resolve().parent.parent
    else:
        cfg = config_from_args(args)
        out = args.out or Path("runs") / f"{cfg.digest()}-seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    layout = {"manifest": "manifest.json", "metrics": "metrics.csv", "checkpoints": ["checkpoints/best.ckpt", "checkpoints/last.ckpt"]}
    manifest_path = out / "manifest.json"
    manifest = RunManifest(cfg.to_dict(), __version__, _now(), layout=layout)
    if args.resume is not None and manifest_path.exists():
        old = RunManifest.from_json(manifest_path.read_text())
        manifest.started = old.started
    manifest.write(manifest_path)

    def progress(row):
        logger.info("step %d val_acc %.4f", row.step, row.val_acc)

    try:
        history, best = run_training(cfg, out, resume=args.resume, on_row=progress)
    except BaseException:
        manifest.status = "failed"
        manifest.finished = _now()
        manifest.write(manifest_path)
        raise
    line = summary_line(history, best)
    manifest.status = "completed"
    manifest.finished = _now()
    manifest.summary = {"best_step": best.step, "best_val": best.val_acc, "line": line}
    manifest.write(manifest_path)
    print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import build_data, evaluate

    ck = load_checkpoint(args.checkpoint)
    cfg = TrainConfig.from_dict(ck.meta["config"])
    ema = ParamSet({k[4:]: v for k, v in ck.arrays.items() if k.startswith("ema/")})
    data = build_data(cfg)
    parts = [f"step={ck.meta['step']}"]
    if args.split in ("validation", "both"):
        parts.append(f"val_acc={evaluate(ema, cfg, data.validation):.4f}")
    if args.split in ("test", "both"):
        if data.test is None:
            if args.split == "test":
                raise ConfigError("this config has no test split")
        else:
            parts.append(f"test_acc={evaluate(ema, cfg, data.test):.4f}")
    print(" ".join(parts))
    return EXIT_OK


def parse_grid(items: Sequence[str]) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items:
        key, sep, values = item.partition("=")
        key = key.strip().replace("-", "_")
        vals = [_parse_value(v) for v in values.split(",") if v.strip()]
        if not sep or not key or not vals:
            raise ConfigError(f"--grid expects KEY=V1,V2,..., got {item!r}")
        grid[key] = vals
    if not grid:
        raise ConfigError("ablate needs at least one --grid entry")
    return grid


def _run_cell(job):
    from .trainer import convergence_step, run_training

    cfg_dict, out = job
    cfg = TrainConfig.from_dict(cfg_dict)
    history, best = run_training(cfg, out)
    best_row = next(r for r in history if r.step == best.step)
    last = history[-1]
    return {
        "best_val": best.val_acc,
        "test_at_best": best_row.test_acc,
        "convergence_step": convergence_step(history),
        "high_conf_ratio": last.high_conf_ratio,
        "pair_pass_ratio": last.pair_pass_ratio,
        "fp_pair_rate": last.fp_pair_rate,
    }


_AGG = ("best_val", "test_at_best", "convergence_step", "high_conf_ratio", "pair_pass_ratio", "fp_pair_rate")


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return "", ""
    mean = statistics.fmean(vals)
    std = statistics.stdev(vals) if len(vals) > 1 else ""
    return repr(mean), ("" if std == "" else repr(std))


def cmd_ablate(args) -> int:
    grid = parse_grid(args.grid)
    seeds = [int(s) for s in str(args.seeds).split(",") if s.strip()]
    if not seeds:
        raise ConfigError("--seeds is empty")
    base = config_from_args(args).to_dict()
    keys = list(grid)
    cells = list(itertools.product(*(grid[k] for k in keys)))
    jobs, index = [], []
    for ci, values in enumerate(cells):
        for seed in seeds:
            d = json.loads(json.dumps(base))
            for k, v in zip(keys, values):
                set_nested(d, k, v)
            d["seed"] = seed
            cfg = TrainConfig.from_dict(d)  # validates every cell before anything runs
            jobs.append((cfg.to_dict(), args.out / f"cell{ci:03d}" / f"seed{seed}"))
            index.append((ci, seed))
    args.out.mkdir(parents=True, exist_ok=True)
    if args.jobs > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(args.jobs) as pool:
            results = pool.map(_run_cell, jobs)
    else:
        results = [_run_cell(j) for j in jobs]

    with open(args.out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", *keys, "seed", *_AGG])
        for (ci, seed), res in zip(index, results):
            w.writerow([ci, *cells[ci], seed, *("" if res[k] is None else repr(res[k]) for k in _AGG)])
    with open(args.out / "results.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*keys, "n_seeds", *(f"{k}_{s}" for k in _AGG for s in ("mean", "std"))])
        for ci, values in enumerate(cells):
            rows = [res for (c, _), res in zip(index, results) if c == ci]
            stats = [x for k in _AGG for x in _mean_std([r[k] for r in rows])]
            w.writerow([*values, len(rows), *stats])
    print(f"wrote {args.out / 'results.csv'} ({len(cells)} cells x {len(seeds)} seeds)")
    return EXIT_OK


def cmd_verify(args) -> int:
    from . import verify

    if args.samples < 12 or args.grad_seeds < 1:
        raise ConfigError("--samples must be >= 12 and --grad-seeds >= 1")
    ok = True
    for res in verify.run_all(args.samples, args.seed, args.grad_seeds):
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name} ({res.checked} checked) {res.detail}".rstrip())
        if not res.passed:
            ok = False
            if res.witness:
                print("counterexample:")
                print(verify.format_witness(res.witness))
    return EXIT_OK if ok else EXIT_PROPERTY


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "verify": cmd_verify}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("interrupted; partial outputs kept", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
