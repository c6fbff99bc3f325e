"""Cross-modal gate mechanism.

Given the per-modality latent codes, this module computes attention-based
affective transfer per core modality, gated pairwise joint representations,
and a cross-modal adaptation loss that shrinks the maximum mean discrepancy
between each core modality's latent rows and the pooled rows of the others.
Every output is (..., T, d), so any assignment of latents to core/auxiliary
roles is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .tensor import (
    Tensor,
    add,
    add_bias,
    bias_param,
    concat_features,
    concat_rows,
    matmul,
    mean_rows,
    mul,
    relu,
    reshape,
    row_softmax,
    rbf_mmd2,
    sub,
    sum_all,
    transpose_rows,
    weight_param,
)

PAIR_ORDER = ("vt", "va", "ta")


def canonical_pair(a: str, b: str) -> str:
    """Unordered modality pair as its canonical tag ('vt', 'va' or 'ta')."""
    for pair in PAIR_ORDER:
        if {a, b} == set(pair):
            return pair
    raise ValueError(f"no pair for modalities {a!r}, {b!r}")


def pairs_for(modalities: Sequence[str]) -> tuple[str, ...]:
    mods = list(modalities)
    out = []
    for i in range(len(mods)):
        for j in range(i + 1, len(mods)):
            out.append(canonical_pair(mods[i], mods[j]))
    return tuple(p for p in PAIR_ORDER if p in out)


@dataclass
class LatentTriple:
    """The three aligned latent codes, each (..., T, d)."""

    s_v: Tensor
    s_t: Tensor
    s_a: Tensor

    def as_dict(self) -> dict[str, Tensor]:
        return {"v": self.s_v, "t": self.s_t, "a": self.s_a}


@dataclass
class CgmmParams:
    """Trainable pieces of the gate mechanism.

    ``interaction`` is the d x d matrix shared across core-modality paths
    (or one per core when ``per_core`` was requested at init). Each pair
    owns a 4d -> d gate and two 2d -> d fusion projections; ``adapt`` holds
    the fully connected layers applied before measuring discrepancy.
    """

    interaction: dict[str, Tensor]
    gate_w: dict[str, Tensor]
    gate_b: dict[str, Tensor]
    fuse_w1: dict[str, Tensor]
    fuse_w2: dict[str, Tensor]
    adapt_w: list[Tensor] = field(default_factory=list)
    adapt_b: list[Tensor] = field(default_factory=list)
    mmd_kernel: str = "linear"
    rbf_bandwidth: Optional[float] = None

    @classmethod
    def init(
        cls,
        latent_dim: int,
        rng: np.random.Generator,
        modalities: Sequence[str] = ("v", "t", "a"),
        adapt_dim: Optional[int] = None,
        adapt_layers: int = 1,
        per_core_interaction: bool = False,
        mmd_kernel: str = "linear",
        rbf_bandwidth: Optional[float] = None,
    ) -> "CgmmParams":
        if mmd_kernel not in ("linear", "rbf"):
            raise ValueError(f"mmd_kernel must be 'linear' or 'rbf', got {mmd_kernel!r}")
        d = latent_dim
        d_xi = d if adapt_dim is None else adapt_dim
        pairs = pairs_for(modalities)
        if per_core_interaction:
            interaction = {m: weight_param(rng, d, d) for m in modalities}
        else:
            shared = weight_param(rng, d, d)
            interaction = {m: shared for m in modalities}
        return cls(
            interaction=interaction,
            gate_w={p: weight_param(rng, 4 * d, d) for p in pairs},
            gate_b={p: bias_param(d) for p in pairs},
            fuse_w1={p: weight_param(rng, 2 * d, d) for p in pairs},
            fuse_w2={p: weight_param(rng, 2 * d, d) for p in pairs},
            adapt_w=[weight_param(rng, d, d_xi) for _ in range(adapt_layers)],
            adapt_b=[bias_param(d_xi) for _ in range(adapt_layers)],
            mmd_kernel=mmd_kernel,
            rbf_bandwidth=rbf_bandwidth,
        )

    @property
    def pairs(self) -> tuple[str, ...]:
        return tuple(p for p in PAIR_ORDER if p in self.gate_w)

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        seen: set[int] = set()
        for m, w in self.interaction.items():
            if id(w) not in seen:
                # Shared matrices appear once, under the first core that uses them.
                out[f"interaction.{m}"] = w
                seen.add(id(w))
        for p in self.pairs:
            out[f"gate_w.{p}"] = self.gate_w[p]
            out[f"gate_b.{p}"] = self.gate_b[p]
            out[f"fuse_w1.{p}"] = self.fuse_w1[p]
            out[f"fuse_w2.{p}"] = self.fuse_w2[p]
        for i, (w, b) in enumerate(zip(self.adapt_w, self.adapt_b)):
            out[f"adapt_w.{i}"] = w
            out[f"adapt_b.{i}"] = b
        return out


def interaction_matrix(
    params: CgmmParams,
    s_core: Tensor,
    s_o1: Tensor,
    s_o2: Optional[Tensor] = None,
    core: str = "v",
) -> Tensor:
    """Interaction matching matrix s_core (W s_o1^T + W s_o2^T), shape (..., T, T)."""
    w = params.interaction[core]
    acc = matmul(w, transpose_rows(s_o1))
    if s_o2 is not None:
        acc = add(acc, matmul(w, transpose_rows(s_o2)))
    return matmul(s_core, acc)


def attention_transfer(m: Tensor, s_core: Tensor) -> Tensor:
    """Row-softmax the interaction matrix, reweight it elementwise, then
    carry the core latent through it: (softmax(M) * M) @ s_core."""
    alpha = row_softmax(m)
    a = mul(alpha, m)
    return matmul(a, s_core)


def pair_gate(params: CgmmParams, s_p: Tensor, s_q: Tensor, pair: str) -> Tensor:
    """ReLU gate over [s_p, s_q, s_p - s_q, s_p * s_q] W + b, shape (..., T, d)."""
    if pair not in params.gate_w:
        raise ValueError(f"unknown pair tag {pair!r}; have {params.pairs}")
    cat = concat_features([s_p, s_q, sub(s_p, s_q), mul(s_p, s_q)])
    return relu(add_bias(matmul(cat, params.gate_w[pair]), params.gate_b[pair]))


def joint_representation(
    params: CgmmParams,
    a_p: Tensor,
    s_p: Tensor,
    a_q: Tensor,
    s_q: Tensor,
    g_pq: Tensor,
    pair: str,
) -> Tensor:
    """Gated sum of both modal branches: g * ([a_p, s_p] W1) + g * ([a_q, s_q] W2)."""
    f_p = mul(g_pq, matmul(concat_features([a_p, s_p]), params.fuse_w1[pair]))
    f_q = mul(g_pq, matmul(concat_features([a_q, s_q]), params.fuse_w2[pair]))
    return add(f_p, f_q)


def _adapt(params: CgmmParams, rows: Tensor, layer: int) -> Tensor:
    return add_bias(matmul(rows, params.adapt_w[layer]), params.adapt_b[layer])


def mmd_squared(params: CgmmParams, core_batch: Tensor, other_batch: Tensor, layer: int = 0) -> Tensor:
    """Squared discrepancy between two row batches after the adaptation layer.

    The linear kernel reduces to the squared distance between the mapped
    batch means; 'rbf' switches to a Gaussian-kernel estimate.
    """
    if core_batch.ndim != 2 or other_batch.ndim != 2:
        raise ValueError("mmd_squared expects rank-2 row batches")
    if core_batch.shape[0] < 1 or other_batch.shape[0] < 1:
        raise ValueError("mmd_squared batches must be nonempty")
    fa = _adapt(params, core_batch, layer)
    fb = _adapt(params, other_batch, layer)
    if params.mmd_kernel == "rbf":
        return rbf_mmd2(fa, fb, params.rbf_bandwidth)
    diff = sub(mean_rows(fa), mean_rows(fb))
    return sum_all(mul(diff, diff))


def adaptation_loss(params: CgmmParams, latents: dict[str, Tensor] | LatentTriple) -> Tensor:
    """Sum over core modalities of the discrepancy between the core's latent
    rows and the pooled rows of the remaining modalities."""
    if isinstance(latents, LatentTriple):
        latents = latents.as_dict()
    mods = [m for m in ("v", "t", "a") if m in latents]
    rows = {m: _flatten_rows(latents[m]) for m in mods}
    total: Optional[Tensor] = None
    for core in mods:
        others = [rows[m] for m in mods if m != core]
        other_rows = others[0] if len(others) == 1 else concat_rows(others)
        for layer in range(len(params.adapt_w)):
            term = mmd_squared(params, rows[core], other_rows, layer)
            total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("adaptation_loss needs at least two modalities")
    return total


def _flatten_rows(s: Tensor) -> Tensor:
    d = s.shape[-1]
    return reshape(s, (s.data.size // d, d))
