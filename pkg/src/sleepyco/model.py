"""The full network: backbone, feature-pyramid classifier and (CRL-only) projector."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .autodiff import Module, Tensor, no_grad, ops
from .backbone import Backbone
from .classifier import PyramidClassifier
from .config import ModelConfig
from .contrastive import ProjectionHead, represent


class SleePyCo(PyramidClassifier):
    """Parameter names: ``backbone.*``, ``lateral.{3,4,5}.*``, ``shared_fc.*``,
    ``encoder.layer{i}.*``, ``attnpool.*``, ``head.*`` and ``projector.*``."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, with_projector: bool = True):
        rng = np.random.default_rng(seed)
        backbone = Backbone(cfg.backbone, rng)
        super().__init__(cfg, rng)
        self.backbone = backbone
        self.projector: Optional[ProjectionHead] = None
        if with_projector:
            d_in = cfg.d_f if cfg.crl_feature == "f5" else cfg.tap_channels(5)
            self.projector = ProjectionHead(d_in, cfg.proj_hidden, cfg.d_z, rng)
        self.assign_names()

    # -- contrastive branch ---------------------------------------------------

    def representation(self, x: Tensor) -> Tensor:
        feats = self.backbone(x, taps=(5,))
        c5 = feats[5]
        if self.cfg.crl_feature == "f5":
            c5 = self.lateral["5"](c5)
        return represent(c5)

    def embed(self, x: Tensor) -> Tensor:
        if self.projector is None:
            raise RuntimeError("projector was removed; the model is in classification mode")
        return ops.l2_normalize(self.projector(self.representation(x)), axis=-1)

    def crl_parameters(self):
        params = self.backbone.parameters() + self.projector.parameters()
        if self.cfg.crl_feature == "f5":
            params += self.lateral["5"].parameters()
        return params

    def drop_projector(self) -> None:
        self.projector = None

    # -- classification branch ------------------------------------------------

    def features(self, x: Tensor, frozen: bool = True):
        if frozen:
            with no_grad():
                return self.backbone(x, taps=tuple(self.cfg.taps))
        return self.backbone(x, taps=tuple(self.cfg.taps))

    def logits(self, x: Tensor, frozen: bool = True) -> Dict[int, Tensor]:
        return self(self.features(x, frozen=frozen))

    def classifier_parameters(self):
        names = ("lateral", "shared_fc", "encoder", "attnpool", "head")
        return [p for n, p in self.named_parameters() if n.split(".", 1)[0] in names]

    def predict(self, x: np.ndarray, batch: int = 4) -> tuple:
        """Predicted stage indices and the stacked per-level logits for ``x`` (B x 1 x 3000L)."""
        from .classifier import predict_stage

        was = self.training
        self.eval()
        preds, per_level = [], []
        with no_grad():
            for start in range(0, len(x), batch):
                out = self.logits(Tensor(x[start : start + batch]))
                levels = [out[s].data for s in self.cfg.taps]
                preds.append(predict_stage(levels))
                per_level.append(np.stack(levels, axis=0))
        self.train(was)
        return np.concatenate(preds), np.concatenate(per_level, axis=1)
