"""Command line: ``sleepyco <subcommand> --config <file> [--set key=value ...] --out <dir>``."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

from .config import ConfigError, RunConfig, dump_config, load_config

DATA_ENV = "SLEEPYCO_DATA"
SUBCOMMANDS = ("synth", "pretrain", "finetune", "evaluate", "crossval", "gradcheck")

log = logging.getLogger("sleepyco")


def git_blob_hash(data: bytes) -> str:
    """SHA-1 over ``blob <len>\\0<data>``, as git hashes file contents."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _input_files(cfg: RunConfig, args) -> List[Path]:
    files = []
    if cfg.data.root and Path(cfg.data.root).is_dir():
        files += sorted(p for p in Path(cfg.data.root).rglob("*") if p.is_file())
    if getattr(args, "checkpoint", None):
        stem = Path(args.checkpoint).with_suffix("")
        files += [stem.with_suffix(".json"), stem.with_suffix(".bin")]
    return files


def write_run_record(cfg: RunConfig, args, out: Path) -> dict:
    """Echo the resolved config and hash every input so the run can be replayed."""
    config_path = dump_config(cfg, out / "config.json")
    inputs = {"config.json": git_blob_hash(config_path.read_bytes())}
    for path in _input_files(cfg, args):
        if path.is_file():
            inputs[str(path)] = git_blob_hash(path.read_bytes())
    listing = "".join(f"{h} {name}\n" for name, h in sorted(inputs.items())).encode()
    record = {
        "command": args.command,
        "argv": sys.argv[1:],
        "inputs": inputs,
        "input_hash": git_blob_hash(listing),
        "config": cfg.to_dict(),
    }
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    return record


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, args.set)
    if not cfg.data.root and os.environ.get(DATA_ENV) and args.command != "synth":
        cfg.data.root = os.environ[DATA_ENV]
    cfg.out_dir = str(args.out)
    return cfg


def _split_for(cfg: RunConfig, data, fold: int):
    from .signal_io import kfold_split

    splits = kfold_split(sorted(data), cfg.data.k, cfg.data.n_val, cfg.seed)
    if not 0 <= fold < len(splits):
        raise ValueError(f"fold {fold} out of range for k={cfg.data.k}")
    return splits[fold]


def _require_checkpoint(args) -> Path:
    if not args.checkpoint:
        raise FileNotFoundError(f"{args.command} needs --checkpoint")
    path = Path(args.checkpoint).with_suffix(".json")
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    return path


def cmd_synth(cfg: RunConfig, args, out: Path) -> int:
    from .signal_io import synth_dataset, write_dataset

    items = synth_dataset(cfg.seed, cfg.data.n_subjects, cfg.data.epochs_per_subject)
    fmt = "edf" if cfg.data.format == "edf" else "raw"
    write_dataset(out / "data", items, fmt)
    log.info("wrote %d synthetic subjects to %s", len(items), out / "data")
    return 0


def cmd_pretrain(cfg: RunConfig, args, out: Path) -> int:
    from .pipeline import fold_config, load_data, pretrain
    from .training import TrainingLog

    data = load_data(cfg)
    split = _split_for(cfg, data, args.fold)
    cfg = fold_config(cfg, split.fold_index)
    result = pretrain(cfg, [data[s] for s in split.train], [data[s] for s in split.validation], out,
                      TrainingLog(out / "training_log.csv"))
    log.info("best validation loss %.4f at iteration %d", result.best_val_loss, result.best_iteration)
    return 0


def cmd_finetune(cfg: RunConfig, args, out: Path) -> int:
    from .autodiff import load_checkpoint, save_checkpoint
    from .pipeline import finetune, fold_config, load_data
    from .training import TrainingLog

    state, _ = load_checkpoint(_require_checkpoint(args))
    data = load_data(cfg)
    split = _split_for(cfg, data, args.fold)
    cfg = fold_config(cfg, split.fold_index)
    model, result = finetune(cfg, state, [data[s] for s in split.train], [data[s] for s in split.validation],
                             out, TrainingLog(out / "training_log.csv"))
    save_checkpoint(out / "model", model.state_dict(), {"fold": split.fold_index, "seed": cfg.seed})
    log.info("best validation loss %.4f at iteration %d", result.best_val_loss, result.best_iteration)
    return 0


def cmd_evaluate(cfg: RunConfig, args, out: Path) -> int:
    from .evaluation import render_report
    from .pipeline import evaluate, load_data, load_model

    model = load_model(cfg, _require_checkpoint(args))
    data = load_data(cfg)
    if args.split == "all":
        ids = sorted(data)
    else:
        ids = getattr(_split_for(cfg, data, args.fold), args.split)
    result = evaluate(cfg, model, [data[s] for s in ids], args.fold)
    render_report([result], out)
    return 0


def cmd_crossval(cfg: RunConfig, args, out: Path) -> int:
    from .pipeline import crossval, load_data

    crossval(cfg, load_data(cfg), out, jobs=args.jobs)
    return 0


def cmd_gradcheck(cfg: RunConfig, args, out: Path) -> int:
    from .gradsuite import TOLERANCE, run_suite

    reports = run_suite(args.instances, cfg.seed)
    lines = ["op,instances,max_rel_error,passed"]
    for r in reports:
        lines.append(f"{r.name},{r.instances},{r.max_rel_error!r},{r.passed}")
        log.info("%-22s %-4s max rel err %.2e", r.name, "ok" if r.passed else "FAIL", r.max_rel_error)
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    failed = [r.name for r in reports if not r.passed]
    if failed:
        log.error("gradient check above %.0e for: %s", TOLERANCE, ", ".join(failed))
        return 1
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "crossval": cmd_crossval,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sleepyco", description="Single-channel EEG sleep staging.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file (defaults apply when omitted)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key by dotted path, e.g. train.phi=5")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("pretrain", "finetune", "evaluate"):
            p.add_argument("--fold", type=int, default=0, help="which k-fold split to use")
        if name in ("finetune", "evaluate"):
            p.add_argument("--checkpoint", help="checkpoint manifest (.json) to start from")
        if name == "evaluate":
            p.add_argument("--split", choices=("test", "validation", "train", "all"), default="test")
        if name == "crossval":
            p.add_argument("--jobs", type=int, default=1, help="folds to run in parallel")
        if name == "gradcheck":
            p.add_argument("--instances", type=int, default=20, help="random instances per operation")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_run_record(cfg, args, out)
        return COMMANDS[args.command](cfg, args, out)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return 2
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        log.error("%s failed: %s", args.command, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
