"""Representation extraction, hypersphere projection and the supervised contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Linear, Module, Tensor, ops


def represent(c5: Tensor) -> Tensor:
    """Global average over time of a B x C x T feature sequence -> B x C."""
    return c5.mean(axis=2)


class ProjectionHead(Module):
    def __init__(self, d_in: int, hidden: int, d_z: int, rng: np.random.Generator):
        super().__init__()
        self.hidden = Linear(d_in, hidden, rng, slope=0.0)
        self.out = Linear(hidden, d_z, rng, slope=1.0)

    def forward(self, r: Tensor) -> Tensor:
        return self.out(ops.relu(self.hidden(r)))


def project_normalize(r: Tensor, head: ProjectionHead) -> Tensor:
    """z = p(r) / ||p(r)||; rejects a zero pre-normalisation vector."""
    return ops.l2_normalize(head(r), axis=-1)


@dataclass
class LatentBatch:
    """Unit embeddings of a multiviewed batch with their stage labels."""

    z: Tensor
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.z.ndim != 2 or self.z.shape[0] != self.labels.shape[0]:
            raise ValueError("z must be (2N_b x d_z) with one label per row")

    @property
    def positives(self) -> np.ndarray:
        """N_p(n): how many other rows share row n's label."""
        same = self.labels[:, None] == self.labels[None, :]
        return same.sum(axis=1) - 1

    @property
    def no_positive_count(self) -> int:
        return int((self.positives == 0).sum())


def pair_views(labels: np.ndarray) -> np.ndarray:
    """Labels of the multiviewed batch: each source label repeated for its two views."""
    return np.repeat(np.asarray(labels, dtype=np.int64), 2)


def supcon_loss(batch: LatentBatch, tau: float) -> Tensor:
    """Supervised contrastive loss summed over anchors.

    For anchor n with positives P(n) (same label, excluding n) the term is
    -(1/|P(n)|) sum_{m in P(n)} log(exp(z_n.z_m/tau) / sum_{a != n} exp(z_n.z_a/tau)).
    Anchors without positives contribute zero.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z, labels = batch.z, batch.labels
    n = z.shape[0]
    if n < 2:
        raise ValueError("supcon loss needs at least two samples")
    offdiag = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & offdiag
    n_pos = pos.sum(axis=1)
    weights = np.where(n_pos > 0, 1.0 / np.maximum(n_pos, 1), 0.0)[:, None] * pos

    sim = ops.matmul(z, z.transpose(1, 0)) * (1.0 / tau)
    row_max = np.where(offdiag, sim.data, -np.inf).max(axis=1, keepdims=True)
    shifted = sim - Tensor(row_max)
    denom = (ops.exp(shifted) * Tensor(offdiag.astype(np.float64))).sum(axis=1, keepdims=True)
    log_prob = shifted - ops.log(denom)
    return -(log_prob * Tensor(weights)).sum()
