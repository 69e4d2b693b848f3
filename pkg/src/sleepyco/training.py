"""Two-stage training: contrastive pretraining of the backbone, then frozen-backbone
multi-level classification, both with validation-loss early stopping."""

from __future__ import annotations

import contextlib
import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .augment import multiview_batch
from .autodiff import Adam, AdamState, Tensor, load_checkpoint, no_grad, ops, save_checkpoint
from .autodiff.nn import BatchNorm1d, Module
from .classifier import predict_stage
from .config import RunConfig
from .contrastive import LatentBatch, supcon_loss
from .model import SleePyCo
from .signal_io import EPOCH_SAMPLES, SubjectEpochs, sequence_windows

log = logging.getLogger(__name__)

# Independent RNG streams derived from the run seed.
STREAM_CRL_BATCHES = 1
STREAM_MTCL_BATCHES = 2
STREAM_DROPOUT = 3
STREAM_BN_CALIBRATION = 4


# ---------------------------------------------------------------------------
# losses and early stopping


def mtcl_loss(logits: Sequence[Tensor], y) -> Tensor:
    """Sum over pyramid levels of the batch-mean cross-entropy."""
    if isinstance(logits, dict):
        logits = [logits[k] for k in sorted(logits)]
    y = np.asarray(y, dtype=np.int64)
    total = None
    for o in logits:
        ce = ops.cross_entropy(o, y)
        total = ce if total is None else total + ce
    return total


@dataclass
class EarlyStopState:
    phi: int
    best_val_loss: float = math.inf
    p: int = 0
    best_checkpoint: Optional[Dict[str, np.ndarray]] = None
    best_iteration: int = -1
    n_updates: int = 0

    def to_meta(self) -> dict:
        return {"phi": self.phi, "best_val_loss": self.best_val_loss, "p": self.p,
                "best_iteration": self.best_iteration, "n_updates": self.n_updates}


def early_stop_update(state: EarlyStopState, val_loss: float,
                      snapshot: Optional[Callable[[], Dict[str, np.ndarray]]] = None,
                      iteration: int = -1) -> bool:
    """Record one validation loss; returns True when training should stop.

    Strict improvement over the best loss so far stores a checkpoint and
    resets the patience counter; anything else increments it. Training stops
    once the counter exceeds ``phi``.
    """
    if math.isnan(val_loss):
        raise ValueError("validation loss is NaN")
    state.n_updates += 1
    if val_loss < state.best_val_loss:
        state.best_val_loss = float(val_loss)
        state.best_checkpoint = snapshot() if snapshot is not None else None
        state.best_iteration = iteration
        state.p = 0
    else:
        state.p += 1
    return state.p > state.phi


# ---------------------------------------------------------------------------
# data pools and sampling


class BatchSampler:
    """Uniform sampling without replacement, reshuffled every pass.

    The batch for a given iteration is a pure function of (seed, stream,
    iteration), so a resumed run sees the same batches.
    """

    def __init__(self, n: int, batch: int, seed: int, stream: int):
        if n < 1:
            raise ValueError("cannot sample from an empty training set")
        self.n, self.batch, self.seed, self.stream = n, batch, seed, stream
        self._orders: Dict[int, np.ndarray] = {}

    def _order(self, epoch: int) -> np.ndarray:
        if epoch not in self._orders:
            self._orders = {epoch: np.random.default_rng([self.seed, self.stream, epoch]).permutation(self.n)}
        return self._orders[epoch]

    def indices(self, iteration: int) -> np.ndarray:
        pos = iteration * self.batch + np.arange(self.batch)
        return np.array([self._order(int(p // self.n))[p % self.n] for p in pos])


@dataclass
class EpochPool:
    """Single epochs (L = 1) pooled over subjects, the contrastive stage's input."""

    epochs: np.ndarray
    labels: np.ndarray

    @classmethod
    def from_subjects(cls, subjects: Sequence[SubjectEpochs]) -> "EpochPool":
        if not subjects:
            return cls(np.empty((0, EPOCH_SAMPLES)), np.empty(0, dtype=np.int64))
        return cls(np.concatenate([s.epochs for s in subjects]), np.concatenate([s.labels for s in subjects]))

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class SequencePool:
    """Every L-epoch window of a set of subjects, gathered lazily into batches."""

    subjects: List[SubjectEpochs]
    L: int
    pad_head: str = "repeat"
    index: np.ndarray = field(init=False)  # rows of (subject position, window row)

    def __post_init__(self) -> None:
        self._windows = [sequence_windows(len(s), self.L, self.pad_head) for s in self.subjects]
        rows = [np.stack([np.full(len(w), i), np.arange(len(w))], axis=1) for i, w in enumerate(self._windows)]
        self.index = np.concatenate(rows) if rows else np.empty((0, 2), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.index)

    def gather(self, rows: Sequence[int]):
        """Inputs (B x 1 x 3000L) and target labels for the given pool rows."""
        x = np.empty((len(rows), 1, EPOCH_SAMPLES * self.L))
        y = np.empty(len(rows), dtype=np.int64)
        for j, r in enumerate(rows):
            s, w = self.index[r]
            window = self._windows[s][w]
            subject = self.subjects[s]
            x[j, 0] = subject.epochs[window].reshape(-1)
            y[j] = subject.labels[window[-1]]
        return x, y

    def labels(self) -> np.ndarray:
        return np.array([self.subjects[s].labels[self._windows[s][w][-1]] for s, w in self.index])


def _validation_rows(n: int, limit: int, seed: int) -> np.ndarray:
    if n <= limit:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, size=limit, replace=False))


# ---------------------------------------------------------------------------
# training log


class TrainingLog:
    COLUMNS = ["iteration", "split", "loss", "accuracy"]

    def __init__(self, path=None):
        self.rows: List[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(self.COLUMNS)

    def add(self, iteration: int, split: str, loss: float, accuracy: Optional[float] = None) -> None:
        row = {"iteration": iteration, "split": split, "loss": float(loss),
               "accuracy": "" if accuracy is None else float(accuracy)}
        self.rows.append(row)
        if self.path:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(
                    [iteration, split, repr(float(loss)), "" if accuracy is None else repr(float(accuracy))]
                )

    @staticmethod
    def read(path) -> List[dict]:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# helpers


@dataclass
class StageResult:
    best_state: Dict[str, np.ndarray]
    best_val_loss: float
    best_iteration: int
    iterations: int
    stopped_early: bool
    val_history: List[float]
    seconds: float


def _batchnorms(module: Module) -> List[BatchNorm1d]:
    return [m for m in module.modules() if isinstance(m, BatchNorm1d)]


@contextlib.contextmanager
def preserved_buffers(module: Module):
    """Restore every batch-norm running statistic on exit."""
    saved = [(bn, bn.running_mean.copy(), bn.running_var.copy(), np.array(bn.num_batches_tracked))
             for bn in _batchnorms(module)]
    try:
        yield
    finally:
        for bn, mean, var, count in saved:
            bn.running_mean[...] = mean
            bn.running_var[...] = var
            bn.num_batches_tracked = count


def calibrate_batchnorm(model: SleePyCo, epochs: np.ndarray, n: int = 256, seed: int = 0, chunk: int = 256) -> None:
    """Set backbone batch-norm running stats from one pass over ``n`` sampled epochs.

    Used when the backbone never saw training batches (e.g. the no-pretraining
    ablation), so eval-mode normalisation has statistics to use.
    """
    rows = np.sort(np.random.default_rng([seed, STREAM_BN_CALIBRATION]).choice(
        len(epochs), size=min(n, len(epochs)), replace=False))
    x = epochs[rows][:, None, :]
    if len(x) > chunk:
        x = x[:chunk]
    bns = _batchnorms(model.backbone)
    momenta = [bn.momentum for bn in bns]
    was = model.backbone.training
    model.backbone.train()
    try:
        for bn in bns:
            bn.momentum = 1.0
        with no_grad():
            model.backbone(Tensor(x), taps=(5,))
    finally:
        for bn, m in zip(bns, momenta):
            bn.momentum = m
        model.backbone.train(was)


def _adam_state(cfg: RunConfig) -> AdamState:
    t = cfg.train
    return AdamState(eta=t.eta, beta1=t.beta1, beta2=t.beta2, eps=t.eps, weight_decay=t.weight_decay)


def save_trainer_state(path, model: Module, adam: AdamState, es: EarlyStopState, iteration: int,
                       stage: str) -> Path:
    """Checkpoint holding parameters, Adam moments and early-stop bookkeeping for resumption."""
    state = dict(model.state_dict())
    for name, m in adam.first_moment.items():
        state[f"adam.m.{name}"] = m
    for name, v in adam.second_moment.items():
        state[f"adam.v.{name}"] = v
    if es.best_checkpoint is not None:
        for name, arr in es.best_checkpoint.items():
            state[f"best.{name}"] = arr
    meta = {"kind": "trainer", "stage": stage, "iteration": iteration, "adam_step": adam.step_count,
            "early_stop": es.to_meta()}
    return save_checkpoint(path, state, meta)


def load_trainer_state(path, model: Module, adam: AdamState, es: EarlyStopState, stage: str) -> int:
    """Restore a :func:`save_trainer_state` checkpoint in place; returns the iteration reached."""
    state, meta = load_checkpoint(path)
    if meta.get("kind") != "trainer" or meta.get("stage") != stage:
        raise ValueError(f"{path} is not a {stage} trainer checkpoint")
    params = {k: v for k, v in state.items() if not k.startswith(("adam.", "best."))}
    model.load_state_dict(params)
    adam.first_moment = {k[len("adam.m."):]: v for k, v in state.items() if k.startswith("adam.m.")}
    adam.second_moment = {k[len("adam.v."):]: v for k, v in state.items() if k.startswith("adam.v.")}
    adam.step_count = int(meta["adam_step"])
    best = {k[len("best."):]: v for k, v in state.items() if k.startswith("best.")}
    es_meta = meta["early_stop"]
    es.best_val_loss = float(es_meta["best_val_loss"])
    es.p = int(es_meta["p"])
    es.best_iteration = int(es_meta["best_iteration"])
    es.n_updates = int(es_meta["n_updates"])
    es.best_checkpoint = best or None
    return int(meta["iteration"])


# ---------------------------------------------------------------------------
# stage 1: contrastive representation learning


def _embed_chunks(model: SleePyCo, views: np.ndarray, chunk: int) -> np.ndarray:
    with no_grad():
        return np.concatenate([model.embed(Tensor(views[s : s + chunk, None, :])).data
                               for s in range(0, len(views), chunk)])


def crl_step_gradients(model: SleePyCo, views: np.ndarray, labels: np.ndarray, tau: float, chunk: int) -> float:
    """Accumulate d L_sc / d theta for one multiviewed batch; returns the loss.

    Batches larger than ``chunk`` views are embedded in chunks: a no-grad pass
    gives every embedding, the loss gradient w.r.t. the embeddings is taken
    once, and each chunk is then re-run with that gradient as its upstream
    signal. Batch-norm statistics are per chunk in that case.
    """
    if len(views) <= chunk:
        z = model.embed(Tensor(views[:, None, :]))
        loss = supcon_loss(LatentBatch(z, labels), tau)
        loss.backward()
        return loss.item()
    with preserved_buffers(model.backbone):
        z_all = _embed_chunks(model, views, chunk)
    z = Tensor(z_all, requires_grad=True)
    loss = supcon_loss(LatentBatch(z, labels), tau)
    loss.backward()
    for s in range(0, len(views), chunk):
        zc = model.embed(Tensor(views[s : s + chunk, None, :]))
        (zc * Tensor(z.grad[s : s + chunk])).sum().backward()
    return loss.item()


def crl_validation_loss(model: SleePyCo, views: np.ndarray, labels: np.ndarray, tau: float, chunk: int) -> float:
    was = model.training
    model.eval()
    try:
        z = _embed_chunks(model, views, chunk)
    finally:
        model.train(was)
    with no_grad():
        return supcon_loss(LatentBatch(Tensor(z), labels), tau).item()


def run_crl(model: SleePyCo, train: EpochPool, val: EpochPool, cfg: RunConfig,
            train_log: Optional[TrainingLog] = None, out_dir=None, resume=None) -> StageResult:
    """Pretrain backbone and projector with the supervised contrastive loss.

    Returns the backbone+projector state with the lowest validation loss.
    """
    if len(train) == 0:
        raise ValueError("contrastive pretraining needs a non-empty training set")
    if len(val) == 0:
        raise ValueError("contrastive pretraining needs validation epochs for early stopping")
    t0 = time.process_time()
    tc = cfg.train
    out = Path(out_dir) if out_dir else None
    model.backbone.unfreeze()
    model.train()
    params = model.crl_parameters()
    adam_state = _adam_state(cfg)
    optimizer = Adam(params, adam_state)
    es = EarlyStopState(tc.phi)
    sampler = BatchSampler(len(train), tc.batch_crl, cfg.seed, STREAM_CRL_BATCHES)

    rows = _validation_rows(len(val), tc.val_samples_crl, tc.val_seed)
    val_views, val_labels = multiview_batch(val.epochs[rows], val.labels[rows], cfg.augmentation,
                                            tc.val_seed, rows)

    trained = ("backbone.", "projector.") + (("lateral.5.",) if cfg.model.crl_feature == "f5" else ())

    def snapshot():
        return {k: v for k, v in model.state_dict().items() if k.startswith(trained)}

    start = 0
    if resume:
        start = load_trainer_state(resume, model, adam_state, es, "crl")
    history: List[float] = []
    it, stopped = start, False
    while True:
        if tc.max_iters_crl and it >= tc.max_iters_crl:
            break
        idx = sampler.indices(it)
        views, labels = multiview_batch(train.epochs[idx], train.labels[idx], cfg.augmentation,
                                        cfg.seed, it * tc.batch_crl + np.arange(len(idx)))
        optimizer.zero_grad()
        loss = crl_step_gradients(model, views, labels, cfg.model.tau, tc.crl_chunk)
        optimizer.step()
        it += 1
        if train_log:
            train_log.add(it, "crl_train", loss)
        last = bool(tc.max_iters_crl) and it >= tc.max_iters_crl
        if it % tc.psi1 == 0 or last:
            val_loss = crl_validation_loss(model, val_views, val_labels, cfg.model.tau, tc.crl_chunk)
            history.append(val_loss)
            stopped = early_stop_update(es, val_loss, snapshot, it)
            log.info("crl iter %d train %.4f val %.4f (best %.4f, p=%d)", it, loss, val_loss, es.best_val_loss, es.p)
            if train_log:
                train_log.add(it, "crl_val", val_loss)
            if out:
                if es.best_iteration == it:
                    save_checkpoint(out / "crl_best", es.best_checkpoint, {"stage": "crl", "iteration": it,
                                                                          "val_loss": val_loss})
                save_trainer_state(out / "crl_last", model, adam_state, es, it, "crl")
            if stopped:
                break
    if es.best_checkpoint is None:
        raise RuntimeError("contrastive pretraining ended before any validation")
    return StageResult(es.best_checkpoint, es.best_val_loss, es.best_iteration, it, stopped, history,
                       time.process_time() - t0)


# ---------------------------------------------------------------------------
# stage 2: multiscale temporal context learning


def restore_and_freeze_backbone(model: SleePyCo, crl_state: Dict[str, np.ndarray], frozen_bn: str = "eval") -> None:
    """Load the pretrained backbone, freeze it and drop the projector."""
    model.backbone.load_state_dict(crl_state, prefix="backbone.")
    lateral5 = {k: v for k, v in crl_state.items() if k.startswith("lateral.5.")}
    if lateral5 and "5" in model.lateral:
        model.lateral["5"].load_state_dict(lateral5, prefix="lateral.5.")  # warm start, stays trainable
    model.backbone.freeze()
    model.drop_projector()
    if frozen_bn == "eval":
        model.backbone.eval()
    else:
        model.backbone.train()


def _set_mode(model: SleePyCo, training: bool, frozen_bn: str) -> None:
    model.train(training)
    if frozen_bn == "eval":
        model.backbone.eval()


def sequence_forward(model: SleePyCo, x: np.ndarray, frozen_bn: str = "eval"):
    """Per-level logits for a batch of sequences through the frozen backbone."""
    if frozen_bn == "batch":
        with preserved_buffers(model.backbone):
            feats = model.features(Tensor(x), frozen=True)
    else:
        feats = model.features(Tensor(x), frozen=True)
    return model(feats)


def mtcl_validation(model: SleePyCo, pool: SequencePool, rows: np.ndarray, micro_batch: int,
                    frozen_bn: str = "eval"):
    """Mean multi-level loss and accuracy of summed-logit predictions over ``rows``."""
    was = model.training
    _set_mode(model, False, frozen_bn)
    total, correct = 0.0, 0
    try:
        with no_grad():
            for s in range(0, len(rows), micro_batch):
                x, y = pool.gather(rows[s : s + micro_batch])
                out = sequence_forward(model, x, frozen_bn)
                levels = [out[k] for k in sorted(out)]
                total += mtcl_loss(levels, y).item() * len(y)
                correct += int((predict_stage([o.data for o in levels]) == y).sum())
    finally:
        _set_mode(model, was, frozen_bn)
    return total / len(rows), correct / len(rows)


def run_mtcl(model: SleePyCo, train: SequencePool, val: SequencePool, crl_state: Dict[str, np.ndarray],
             cfg: RunConfig, train_log: Optional[TrainingLog] = None, out_dir=None, resume=None) -> StageResult:
    """Train lateral connections and the classifier over a frozen pretrained backbone.

    Returns the full-model state (no projector) with the lowest validation loss.
    """
    if len(train) == 0:
        raise ValueError("classifier training needs a non-empty training set")
    if len(val) == 0:
        raise ValueError("classifier training needs validation sequences for early stopping")
    t0 = time.process_time()
    tc = cfg.train
    out = Path(out_dir) if out_dir else None
    restore_and_freeze_backbone(model, crl_state, tc.frozen_bn)
    _set_mode(model, True, tc.frozen_bn)
    adam_state = _adam_state(cfg)
    optimizer = Adam(model.classifier_parameters(), adam_state)
    es = EarlyStopState(tc.phi)
    sampler = BatchSampler(len(train), tc.batch_mtcl, cfg.seed, STREAM_MTCL_BATCHES)
    val_rows = _validation_rows(len(val), tc.val_samples_mtcl, tc.val_seed)

    def snapshot():
        return model.state_dict()

    start = 0
    if resume:
        start = load_trainer_state(resume, model, adam_state, es, "mtcl")
    history: List[float] = []
    it, stopped = start, False
    while True:
        if tc.max_iters_mtcl and it >= tc.max_iters_mtcl:
            break
        model.encoder.set_rng(np.random.default_rng([cfg.seed, STREAM_DROPOUT, it]))
        rows = sampler.indices(it)
        optimizer.zero_grad()
        loss_sum, correct = 0.0, 0
        for s in range(0, len(rows), tc.micro_batch):
            x, y = train.gather(rows[s : s + tc.micro_batch])
            out_logits = sequence_forward(model, x, tc.frozen_bn)
            levels = [out_logits[k] for k in sorted(out_logits)]
            loss = mtcl_loss(levels, y) * (len(y) / len(rows))
            loss.backward()
            loss_sum += loss.item()
            correct += int((predict_stage([o.data for o in levels]) == y).sum())
        optimizer.step()
        it += 1
        if train_log:
            train_log.add(it, "mtcl_train", loss_sum, correct / len(rows))
        last = bool(tc.max_iters_mtcl) and it >= tc.max_iters_mtcl
        if it % tc.psi2 == 0 or last:
            model.encoder.set_rng(None)
            val_loss, val_acc = mtcl_validation(model, val, val_rows, tc.micro_batch, tc.frozen_bn)
            history.append(val_loss)
            stopped = early_stop_update(es, val_loss, snapshot, it)
            log.info("mtcl iter %d train %.4f val %.4f acc %.3f (best %.4f, p=%d)",
                     it, loss_sum, val_loss, val_acc, es.best_val_loss, es.p)
            if train_log:
                train_log.add(it, "mtcl_val", val_loss, val_acc)
            if out:
                if es.best_iteration == it:
                    save_checkpoint(out / "mtcl_best", es.best_checkpoint,
                                    {"stage": "mtcl", "iteration": it, "val_loss": val_loss})
                save_trainer_state(out / "mtcl_last", model, adam_state, es, it, "mtcl")
            if stopped:
                break
    if es.best_checkpoint is None:
        raise RuntimeError("classifier training ended before any validation")
    return StageResult(es.best_checkpoint, es.best_val_loss, es.best_iteration, it, stopped, history,
                       time.process_time() - t0)


# ---------------------------------------------------------------------------
# inference


def predict_subjects(model: SleePyCo, subjects: Sequence[SubjectEpochs], L: int, pad_head: str = "repeat",
                     micro_batch: int = 8, frozen_bn: str = "eval") -> Dict[str, tuple]:
    """Per-subject (true stages, predicted stages) over every scored target epoch."""
    out = {}
    was = model.training
    _set_mode(model, False, frozen_bn)
    try:
        with no_grad():
            for subject in subjects:
                pool = SequencePool([subject], L, pad_head)
                preds = []
                for s in range(0, len(pool), micro_batch):
                    x, _ = pool.gather(np.arange(s, min(s + micro_batch, len(pool))))
                    logits = sequence_forward(model, x, frozen_bn)
                    preds.append(predict_stage([logits[k].data for k in sorted(logits)]))
                out[subject.subject_id] = (pool.labels(), np.concatenate(preds) if preds else np.empty(0, int))
    finally:
        _set_mode(model, was, frozen_bn)
    return out
