"""Five-block 1-D CNN with squeeze-and-excitation, tapped after blocks 3, 4 and 5."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from .autodiff import BatchNorm1d, Linear, Module, Parameter, PReLU, Tensor, ops
from .autodiff.nn import fan_in_uniform, kaiming_uniform
from .config import BackboneConfig

EPOCH_SAMPLES = 3000
TAP_STAGES = (3, 4, 5)


def se_block(u: Tensor, fc1: Linear, fc2: Linear) -> Tensor:
    """Rescale each channel of ``u`` (B x C x T) by a learned gate in (0, 1)."""
    return u * se_gate(u, fc1, fc2)


def se_gate(u: Tensor, fc1: Linear, fc2: Linear) -> Tensor:
    squeezed = u.mean(axis=2)
    gate = ops.sigmoid(fc2(ops.relu(fc1(squeezed))))
    return gate.reshape(gate.shape + (1,))


class SEBlock(Module):
    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.fc1 = Linear(channels, hidden, rng, slope=0.0)
        self.fc2 = Linear(hidden, channels, rng, slope=1.0)

    def gate(self, u: Tensor) -> Tensor:
        return se_gate(u, self.fc1, self.fc2)

    def forward(self, u: Tensor) -> Tensor:
        return u * self.gate(u)


class ConvUnit(Module):
    """Conv -> BN -> [SE] -> PReLU."""

    def __init__(self, c_in: int, c_out: int, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        fan_in = c_in * cfg.kernel
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, cfg.kernel), fan_in, cfg.prelu_init))
        self.bias = Parameter(fan_in_uniform(rng, (c_out,), fan_in))
        self.bn = BatchNorm1d(c_out, eps=cfg.bn_eps, momentum=cfg.bn_momentum)
        self.prelu = PReLU(c_out, init=cfg.prelu_init)
        self.stride = cfg.stride
        self.padding = cfg.padding

    def pre_activation(self, x: Tensor) -> Tensor:
        y = ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)
        return self.bn(y)

    def forward(self, x: Tensor, se: SEBlock = None) -> Tensor:
        y = self.pre_activation(x)
        if se is not None:
            y = se(y)
        return self.prelu(y)


class ConvBlock(Module):
    def __init__(self, c_in: int, c_out: int, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.conv1 = ConvUnit(c_in, c_out, cfg, rng)
        self.conv2 = ConvUnit(c_out, c_out, cfg, rng)
        self.se = SEBlock(c_out, cfg.se_reduction, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv2(self.conv1(x), se=self.se)


@dataclass
class FeatureSequenceSet:
    """Backbone taps keyed by stage index; each is B x c_i x ceil(3000 L / r_i)."""

    levels: Dict[int, Tensor]
    L: int

    def __getitem__(self, stage: int) -> Tensor:
        return self.levels[stage]

    @property
    def C3(self) -> Tensor:
        return self.levels[3]

    @property
    def C4(self) -> Tensor:
        return self.levels[4]

    @property
    def C5(self) -> Tensor:
        return self.levels[5]


def expected_length(L: int, stage: int, pool: int = 5) -> int:
    """ceil(3000 L / r_i) computed the way the network does it, one ceil per pool."""
    t = EPOCH_SAMPLES * L
    for _ in range(stage - 1):
        t = math.ceil(t / pool)
    return t


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        widths = [1] + list(cfg.block_channels)
        self.block1 = ConvBlock(widths[0], widths[1], cfg, rng)
        self.block2 = ConvBlock(widths[1], widths[2], cfg, rng)
        self.block3 = ConvBlock(widths[2], widths[3], cfg, rng)
        self.block4 = ConvBlock(widths[3], widths[4], cfg, rng)
        self.block5 = ConvBlock(widths[4], widths[5], cfg, rng)

    def blocks(self):
        return [self.block1, self.block2, self.block3, self.block4, self.block5]

    def forward(self, x: Tensor, taps=TAP_STAGES) -> FeatureSequenceSet:
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"backbone expects B x 1 x 3000L input, got shape {x.shape}")
        if x.shape[2] % EPOCH_SAMPLES:
            raise ValueError(f"input length {x.shape[2]} is not a multiple of {EPOCH_SAMPLES}")
        last = max(taps)
        out: Dict[int, Tensor] = {}
        h = x
        for stage, block in enumerate(self.blocks(), start=1):
            if stage > 1:
                h = ops.maxpool1d_ceil(h, self.cfg.pool)
            h = block(h)
            if stage in taps:
                out[stage] = h
            if stage == last:
                break
        return FeatureSequenceSet(out, x.shape[2] // EPOCH_SAMPLES)

    def conv_layer_count(self) -> int:
        return sum(1 for b in self.blocks() for _ in (b.conv1, b.conv2))
