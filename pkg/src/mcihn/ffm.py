"""Feature fusion: per-core multi-head attention, prediction, losses.

Each core modality drives one attention path whose queries and keys come
from the two gated joint representations involving that modality and whose
values are the core latent itself. The three path outputs are summed,
pooled over time, and mapped to a single sentiment score; an optional
softmax class head rides along for categorical readouts but is never
trained by its own loss.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .tensor import (
    Tensor,
    abs_,
    add,
    add_bias,
    bias_param,
    concat_features,
    dropout,
    matmul,
    mean_all,
    mean_rows,
    reshape,
    row_softmax,
    scale,
    sub,
    transpose_rows,
    weight_param,
)


@dataclass
class FfmParams:
    """Per-path multi-head attention weights plus the prediction heads.

    Paths are keyed by their core modality. Every head i of a path owns
    query/key/value projections d -> d/heads; each path owns an output
    projection d -> d. The score scale is sqrt(d / heads).
    """

    heads: int
    latent_dim: int
    wq: dict[str, list[Tensor]]
    wk: dict[str, list[Tensor]]
    wv: dict[str, list[Tensor]]
    wo: dict[str, Tensor]
    pred_w: Tensor  # d x 1
    pred_b: Tensor  # 1
    class_w: Optional[Tensor] = None  # d x C
    class_b: Optional[Tensor] = None  # C
    dropout_rate: float = 0.5

    @classmethod
    def init(
        cls,
        latent_dim: int,
        heads: int,
        rng: np.random.Generator,
        paths: Sequence[str] = ("v", "t", "a"),
        num_classes: Optional[int] = None,
        dropout_rate: float = 0.5,
    ) -> "FfmParams":
        if heads < 1 or latent_dim % heads != 0:
            raise ValueError(f"head count {heads} must divide latent dim {latent_dim}")
        dh = latent_dim // heads
        return cls(
            heads=heads,
            latent_dim=latent_dim,
            wq={p: [weight_param(rng, latent_dim, dh) for _ in range(heads)] for p in paths},
            wk={p: [weight_param(rng, latent_dim, dh) for _ in range(heads)] for p in paths},
            wv={p: [weight_param(rng, latent_dim, dh) for _ in range(heads)] for p in paths},
            wo={p: weight_param(rng, latent_dim, latent_dim) for p in paths},
            pred_w=weight_param(rng, latent_dim, 1),
            pred_b=bias_param(1),
            class_w=weight_param(rng, latent_dim, num_classes) if num_classes else None,
            class_b=bias_param(num_classes) if num_classes else None,
            dropout_rate=dropout_rate,
        )

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for p in self.wq:
            for i in range(self.heads):
                out[f"wq.{p}.{i}"] = self.wq[p][i]
                out[f"wk.{p}.{i}"] = self.wk[p][i]
                out[f"wv.{p}.{i}"] = self.wv[p][i]
            out[f"wo.{p}"] = self.wo[p]
        out["pred_w"] = self.pred_w
        out["pred_b"] = self.pred_b
        if self.class_w is not None:
            out["class_w"] = self.class_w
            out["class_b"] = self.class_b
        return out


@dataclass
class Prediction:
    """Model outputs for a batch: continuous scores, optional class probs."""

    scores: Tensor  # (B,)
    class_probs: Optional[Tensor] = None  # (B, C), rows on the simplex


def multihead_path(params: FfmParams, q_in: Tensor, k_in: Tensor, v_in: Tensor, path: str) -> Tensor:
    """Scaled dot-product attention with per-path heads, output (..., T, d)."""
    if path not in params.wq:
        raise ValueError(f"unknown path tag {path!r}; have {tuple(params.wq)}")
    inv_scale = 1.0 / math.sqrt(params.latent_dim / params.heads)
    heads = []
    for i in range(params.heads):
        q = matmul(q_in, params.wq[path][i])
        k = matmul(k_in, params.wk[path][i])
        v = matmul(v_in, params.wv[path][i])
        alpha = row_softmax(scale(matmul(q, transpose_rows(k)), inv_scale))
        heads.append(matmul(alpha, v))
    return matmul(concat_features(heads), params.wo[path])


def fuse_predict(
    params: FfmParams,
    path_outputs: Sequence[Tensor],
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Prediction:
    """Sum the path outputs, pool over time, and apply the heads.

    Dropout hits the pooled fusion vector before the linear heads, at train
    time only (``rng`` supplies the mask).
    """
    fused = path_outputs[0]
    for f in path_outputs[1:]:
        fused = add(fused, f)
    pooled = mean_rows(fused)  # (..., 1, d)
    if train and params.dropout_rate > 0.0:
        if rng is None:
            raise ValueError("training-mode fuse_predict needs an rng for dropout")
        pooled = dropout(pooled, params.dropout_rate, rng)
    batch = pooled.shape[0] if pooled.ndim == 3 else 1
    raw = add_bias(matmul(pooled, params.pred_w), params.pred_b)
    scores = reshape(raw, (batch,))
    probs = None
    if params.class_w is not None:
        logits = add_bias(matmul(pooled, params.class_w), params.class_b)
        probs = reshape(row_softmax(logits), (batch, params.class_w.shape[1]))
    return Prediction(scores=scores, class_probs=probs)


def mae_loss(scores: Tensor, labels: Tensor) -> Tensor:
    """Mean absolute error between predicted and true scores."""
    if scores.shape != labels.shape:
        raise ValueError(f"score/label lengths differ: {scores.shape} vs {labels.shape}")
    return mean_all(abs_(sub(scores, labels)))


def combined_loss(mul_loss: Tensor, adp_loss: Tensor) -> Tensor:
    """Unweighted sum of the prediction and adaptation losses."""
    return add(adp_loss, mul_loss)
