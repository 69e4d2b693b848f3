"""Fold-level orchestration shared by the command line and the test-suite."""

from __future__ import annotations

import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .autodiff import load_checkpoint, save_checkpoint
from .config import RunConfig
from .evaluation import FoldResult, confusion, render_report
from .model import SleePyCo
from .signal_io import FoldSplit, SubjectEpochs, kfold_split, load_dataset, preprocess, synth_dataset
from .training import (
    EpochPool,
    SequencePool,
    StageResult,
    TrainingLog,
    calibrate_batchnorm,
    predict_subjects,
    run_crl,
    run_mtcl,
)

log = logging.getLogger(__name__)


def load_data(cfg: RunConfig) -> Dict[str, SubjectEpochs]:
    """Preprocessed subjects keyed by id: from ``data.root`` or, for format synth without a root, generated."""
    d = cfg.data
    if d.format == "synth" and not d.root:
        items = synth_dataset(cfg.seed, d.n_subjects, d.epochs_per_subject)
        return {it.recording.subject_id: preprocess(it.recording, it.labels, d.trim_wake) for it in items}
    fmt = "raw" if d.format == "synth" else d.format
    return load_dataset(d.root, fmt, d.channel, d.trim_wake)


def fold_seed(seed: int, fold: int) -> int:
    """Seed of one fold, independent of which worker runs it."""
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


def fold_config(cfg: RunConfig, fold: int) -> RunConfig:
    return dataclasses.replace(cfg, seed=fold_seed(cfg.seed, fold))


@dataclass
class FoldOutcome:
    result: FoldResult
    crl: Optional[StageResult]
    mtcl: StageResult
    model: SleePyCo


def pretrain(cfg: RunConfig, train: List[SubjectEpochs], val: List[SubjectEpochs],
             out_dir=None, train_log: Optional[TrainingLog] = None) -> StageResult:
    model = SleePyCo(cfg.model, cfg.seed)
    return run_crl(model, EpochPool.from_subjects(train), EpochPool.from_subjects(val), cfg, train_log, out_dir)


def untrained_backbone_state(cfg: RunConfig, train: List[SubjectEpochs]) -> Dict[str, np.ndarray]:
    """Randomly initialised backbone with batch-norm statistics calibrated on training epochs."""
    model = SleePyCo(cfg.model, cfg.seed)
    calibrate_batchnorm(model, EpochPool.from_subjects(train).epochs, seed=cfg.seed)
    return {k: v for k, v in model.state_dict().items() if k.startswith("backbone.")}


def finetune(cfg: RunConfig, backbone_state: Dict[str, np.ndarray], train: List[SubjectEpochs],
             val: List[SubjectEpochs], out_dir=None, train_log: Optional[TrainingLog] = None):
    model = SleePyCo(cfg.model, cfg.seed)
    L, pad = cfg.model.L, cfg.train.pad_head
    result = run_mtcl(model, SequencePool(train, L, pad), SequencePool(val, L, pad), backbone_state, cfg,
                      train_log, out_dir)
    model.load_state_dict(result.best_state)
    return model, result


def evaluate(cfg: RunConfig, model: SleePyCo, test: List[SubjectEpochs], fold: int = 0) -> FoldResult:
    hyp = predict_subjects(model, test, cfg.model.L, cfg.train.pad_head, cfg.train.micro_batch, cfg.train.frozen_bn)
    true = np.concatenate([t for t, _ in hyp.values()])
    pred = np.concatenate([p for _, p in hyp.values()])
    return FoldResult(fold, confusion(pred, true), hyp)


def load_model(cfg: RunConfig, checkpoint) -> SleePyCo:
    state, _ = load_checkpoint(checkpoint)
    model = SleePyCo(cfg.model, cfg.seed, with_projector=any(k.startswith("projector.") for k in state))
    model.load_state_dict(state)
    model.backbone.freeze()
    return model


def run_fold(cfg: RunConfig, data: Dict[str, SubjectEpochs], split: FoldSplit, out_dir=None) -> FoldOutcome:
    """Pretrain (unless ``train.skip_crl``), fine-tune and score one fold."""
    cfg = fold_config(cfg, split.fold_index)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    train = [data[s] for s in split.train]
    val = [data[s] for s in split.validation]
    test = [data[s] for s in split.test]
    train_log = TrainingLog(out / "training_log.csv" if out else None)
    crl = None
    if cfg.train.skip_crl:
        backbone_state = untrained_backbone_state(cfg, train)
    else:
        crl = pretrain(cfg, train, val, out, train_log)
        backbone_state = crl.best_state
    model, mtcl = finetune(cfg, backbone_state, train, val, out, train_log)
    if out:
        save_checkpoint(out / "model", model.state_dict(), {"fold": split.fold_index, "seed": cfg.seed})
    result = evaluate(cfg, model, test, split.fold_index)
    log.info("fold %d: %d test epochs, crl %s, mtcl %.0f s", split.fold_index, result.cm.n,
             f"{crl.seconds:.0f} s" if crl else "skipped", mtcl.seconds)
    return FoldOutcome(result, crl, mtcl, model)


def _fold_worker(args):
    cfg, data, split, out_dir = args
    return run_fold(cfg, data, split, out_dir).result


def crossval(cfg: RunConfig, data: Dict[str, SubjectEpochs], out_dir, jobs: int = 1,
             plots: bool = True) -> List[FoldResult]:
    """Run every fold of the k-fold protocol and write the pooled report."""
    out = Path(out_dir)
    splits = kfold_split(sorted(data), cfg.data.k, cfg.data.n_val, cfg.seed)
    tasks = [(cfg, data, split, out / f"fold{split.fold_index}") for split in splits]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_fold_worker, tasks))
    else:
        results = [_fold_worker(t) for t in tasks]
    render_report(results, out, plots=plots)
    return results
