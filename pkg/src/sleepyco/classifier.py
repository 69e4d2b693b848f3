"""Feature-pyramid classifier: lateral 1x1 convs, shared embedding with hopped
positional encoding, transformer encoder, attention pooling and a shared head."""

from __future__ import annotations

import math
from typing import Dict, Optional, Sequence

import numpy as np

from .autodiff import LayerNorm, Linear, Module, ModuleDict, Parameter, PReLU, Tensor, ops
from .autodiff.nn import fan_in_uniform, kaiming_uniform
from .config import STAGES, ModelConfig


class LateralConnection(Module):
    """Width-1 convolution from a backbone tap (c_i channels) to d_f channels."""

    def __init__(self, c_in: int, d_f: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (d_f, c_in, 1), c_in, 1.0))
        self.bias = Parameter(fan_in_uniform(rng, (d_f,), c_in))

    def forward(self, c: Tensor) -> Tensor:
        return ops.conv1d(c, self.weight, self.bias)


def lateral_connect(laterals: ModuleDict, stage: int, c: Tensor) -> Tensor:
    if stage not in laterals:
        raise KeyError(f"no lateral connection for stage {stage}; available: {sorted(laterals)}")
    return laterals[stage](c)


def hop_position(t, stage: int, R: int = 5):
    """Absolute position encoded at index ``t`` of pyramid level ``stage``."""
    hop = R ** (stage - 3)
    return t * hop + hop // 2


def positional_encoding(stage: int, length: int, d_m: int, R: int = 5, exponent: str = "printed") -> np.ndarray:
    """Sinusoidal table (length x d_m) whose time index hops by R^(stage-3).

    ``exponent="printed"`` divides by 10000^(k/d_m); ``"paired"`` uses the
    usual 10000^(2 floor(k/2)/d_m) so sin/cos columns share a frequency.
    """
    if stage not in (3, 4, 5):
        raise ValueError(f"stage must be 3, 4 or 5, got {stage}")
    pos = hop_position(np.arange(length, dtype=np.float64), stage, R)[:, None]
    k = np.arange(d_m)
    if exponent == "printed":
        expo = k / d_m
    elif exponent == "paired":
        expo = 2 * (k // 2) / d_m
    else:
        raise ValueError(f"unknown exponent mode {exponent!r}")
    angle = pos / np.power(10000.0, expo)[None, :]
    return np.where(k % 2 == 0, np.sin(angle), np.cos(angle))


class SharedEmbedding(Module):
    """Fully connected d_f -> d_m with PReLU, shared by every pyramid level."""

    def __init__(self, d_f: int, d_m: int, rng: np.random.Generator, prelu_init: float = 0.25):
        super().__init__()
        self.weight = Parameter(kaiming_uniform(rng, (d_f, d_m), d_f, prelu_init))
        self.bias = Parameter(fan_in_uniform(rng, (d_m,), d_f))
        self.prelu = PReLU(d_m, init=prelu_init, axis=-1)

    def forward(self, f: Tensor, pe: Optional[np.ndarray] = None) -> Tensor:
        """``f`` is B x d_f x T; returns Z = PReLU(F W + b) + P as B x T x d_m."""
        if f.shape[1] != self.weight.shape[0]:
            raise ValueError(f"embedding expects {self.weight.shape[0]} features, got {f.shape[1]}")
        z = self.prelu(ops.linear(f.transpose(0, 2, 1), self.weight, self.bias))
        if pe is not None:
            z = z + Tensor(pe)
        return z


def embed_sequence(f: Tensor, pe: np.ndarray, shared: SharedEmbedding) -> Tensor:
    return shared(f, pe)


class MultiHeadSelfAttention(Module):
    def __init__(self, d_m: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_m % n_heads:
            raise ValueError(f"d_m={d_m} is not divisible by {n_heads} heads")
        self.wq = Linear(d_m, d_m, rng, slope=1.0)
        self.wk = Linear(d_m, d_m, rng, slope=1.0)
        self.wv = Linear(d_m, d_m, rng, slope=1.0)
        self.wo = Linear(d_m, d_m, rng, slope=1.0)
        self.n_heads = n_heads

    def _split(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        return x.reshape(b, t, self.n_heads, d // self.n_heads).transpose(0, 2, 1, 3)

    def attention_weights(self, x: Tensor) -> Tensor:
        """Scaled dot-product weights, B x heads x T x T."""
        dh = x.shape[2] // self.n_heads
        q = self._split(self.wq(x)) * (1.0 / math.sqrt(dh))
        k = self._split(self.wk(x))
        return ops.softmax(q @ k.transpose(0, 1, 3, 2), axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        b, t, d = x.shape
        q = self._split(self.wq(x))
        k = self._split(self.wk(x))
        v = self._split(self.wv(x))
        ctx = ops.scaled_dot_attention(q, k, v)
        return self.wo(ctx.transpose(0, 2, 1, 3).reshape(b, t, d))


class EncoderLayer(Module):
    """Post-norm transformer encoder layer with a ReLU feed-forward block.

    Dropout hits each sub-layer output before its residual add and the FFN
    hidden activation; attention weights themselves are not dropped.
    """

    def __init__(self, d_m: int, d_ff: int, n_heads: int, rng: np.random.Generator, dropout: float = 0.1):
        super().__init__()
        self.attn = MultiHeadSelfAttention(d_m, n_heads, rng)
        self.norm1 = LayerNorm(d_m)
        self.ff1 = Linear(d_m, d_ff, rng, slope=0.0)
        self.ff2 = Linear(d_ff, d_m, rng, slope=1.0)
        self.norm2 = LayerNorm(d_m)
        self.dropout = dropout
        self.rng: Optional[np.random.Generator] = None

    def forward(self, x: Tensor) -> Tensor:
        a = ops.dropout(self.attn(x), self.dropout, self.rng, self.training)
        x = self.norm1(x + a)
        f = self.ff2(ops.dropout(ops.relu(self.ff1(x)), self.dropout, self.rng, self.training))
        f = ops.dropout(f, self.dropout, self.rng, self.training)
        return self.norm2(x + f)


class TransformerEncoder(ModuleDict):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        for i in range(cfg.n_layers):
            self[f"layer{i}"] = EncoderLayer(cfg.d_m, cfg.d_ff, cfg.n_heads, rng, cfg.dropout)

    def set_rng(self, rng: Optional[np.random.Generator]) -> None:
        for layer in self.values():
            layer.rng = rng

    def forward(self, z: Tensor) -> Tensor:
        h = z
        for layer in self.values():
            h = layer(h)
        return h


def transformer_encode(z: Tensor, encoder: TransformerEncoder) -> Tensor:
    return encoder(z)


class AttentionPool(Module):
    """a_t = act(H_t W + b); alpha = softmax_t(a_t . w_att); pooled = sum_t alpha_t a_t."""

    def __init__(self, d_m: int, rng: np.random.Generator, activation: str = "tanh"):
        super().__init__()
        self.proj = Linear(d_m, d_m, rng, slope=1.0)
        self.w_att = Parameter(fan_in_uniform(rng, (d_m, 1), d_m))
        self.activation = activation
        self.last_alpha: Optional[np.ndarray] = None

    def hidden(self, h: Tensor) -> Tensor:
        a = self.proj(h)
        if self.activation == "tanh":
            return ops.tanh(a)
        if self.activation == "relu":
            return ops.relu(a)
        return a

    def pool(self, a: Tensor) -> Tensor:
        scores = ops.matmul(a, self.w_att)  # B x T x 1
        alpha = ops.softmax(scores, axis=1)
        self.last_alpha = alpha.data[..., 0]
        return (alpha * a).sum(axis=1)

    def forward(self, h: Tensor) -> Tensor:
        return self.pool(self.hidden(h))


def attention_pool(h: Tensor, pool: AttentionPool) -> Tensor:
    return pool(h)


class ClassHead(Module):
    def __init__(self, d_m: int, n_classes: int, rng: np.random.Generator):
        super().__init__()
        self.weight = Parameter(fan_in_uniform(rng, (d_m, n_classes), d_m))
        self.bias = Parameter(np.zeros(n_classes))

    def forward(self, a: Tensor) -> Tensor:
        return ops.linear(a, self.weight, self.bias)


def stage_logits(a: Tensor, head: ClassHead) -> Tensor:
    return head(a)


def predict_stage(logits: Sequence[np.ndarray]) -> np.ndarray:
    """Argmax of the summed per-level logits; ties go to the lowest stage index.

    Accepts per-level arrays of shape (N_c,) or (B, N_c) and returns stage
    indices of matching leading shape.
    """
    arrays = [np.asarray(o.data if isinstance(o, Tensor) else o, dtype=np.float64) for o in logits]
    if not arrays:
        raise ValueError("need at least one logit vector")
    shape = arrays[0].shape
    if shape[-1] != len(STAGES) or any(a.shape != shape for a in arrays):
        raise ValueError(f"every logit vector must have {len(STAGES)} entries and equal shape")
    if any(np.isnan(a).any() for a in arrays):
        raise ValueError("NaN logit")
    total = arrays[0].copy()
    for a in arrays[1:]:
        total = total + a
    return np.argmax(total, axis=-1)


class PyramidClassifier(Module):
    """Lateral connections plus the shared classifier network."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.lateral = ModuleDict({
            str(s): LateralConnection(cfg.tap_channels(s), cfg.d_f, rng) for s in cfg.taps
        })
        self.shared_fc = SharedEmbedding(cfg.d_f, cfg.d_m, rng, cfg.backbone.prelu_init)
        self.encoder = TransformerEncoder(cfg, rng)
        self.attnpool = AttentionPool(cfg.d_m, rng, cfg.attn_activation)
        self.head = ClassHead(cfg.d_m, cfg.n_classes, rng)
        self._pe_cache: Dict[tuple, np.ndarray] = {}

    def pe(self, stage: int, length: int) -> np.ndarray:
        key = (stage, length)
        if key not in self._pe_cache:
            self._pe_cache[key] = positional_encoding(
                stage, length, self.cfg.d_m, self.cfg.hop_factor, self.cfg.pe_exponent
            )
        return self._pe_cache[key]

    def level_logits(self, stage: int, c: Tensor) -> Tensor:
        f = lateral_connect(self.lateral, stage, c)
        z = self.shared_fc(f, self.pe(stage, f.shape[2]))
        h = self.encoder(z)
        return self.head(self.attnpool(h))

    def forward(self, features) -> Dict[int, Tensor]:
        return {s: self.level_logits(s, features[s]) for s in self.cfg.taps}
