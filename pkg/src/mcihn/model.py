"""Full-model assembly: parameters, forward pass, ablation wiring.

A model owns one autoencoder per active modality, optionally the gate
mechanism, and the fusion module. Ablation tags control the wiring:
bimodal variants drop one modality end to end, 'mcihn-1' keeps the
encoders as plain trainable projections (no reconstruction/adversarial
phases), and 'mcihn-2' feeds latents straight into fusion as per-modality
self-attention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import aae as aae_mod
from . import cgmm as cgmm_mod
from . import ffm as ffm_mod
from .aae import AaeParams
from .cgmm import CgmmParams, canonical_pair
from .ffm import FfmParams, Prediction
from .tensor import Tensor, dropout

ABLATIONS = ("full", "-VT", "-VA", "-TA", "mcihn-1", "mcihn-2")
ALL_MODALITIES = ("v", "t", "a")


def modalities_for(ablation: str) -> tuple[str, ...]:
    if ablation not in ABLATIONS:
        raise ValueError(f"unknown ablation tag {ablation!r}; expected one of {ABLATIONS}")
    return {
        "-VT": ("v", "t"),
        "-VA": ("v", "a"),
        "-TA": ("t", "a"),
    }.get(ablation, ALL_MODALITIES)


@dataclass
class ModelParams:
    """Complete learnable state for one configuration."""

    ablation: str
    modalities: tuple[str, ...]
    aae: dict[str, AaeParams]
    cgmm: Optional[CgmmParams]
    ffm: FfmParams

    @classmethod
    def init(
        cls,
        shapes: dict[str, tuple[int, int]],
        latent_len: int,
        latent_dim: int,
        heads: int,
        rng: np.random.Generator,
        ablation: str = "full",
        disc_hidden: Optional[int] = None,
        adapt_layers: int = 1,
        per_core_interaction: bool = False,
        mmd_kernel: str = "linear",
        rbf_bandwidth: Optional[float] = None,
        num_classes: Optional[int] = None,
        dropout_rate: float = 0.5,
    ) -> "ModelParams":
        modalities = modalities_for(ablation)
        aae_params = {
            m: AaeParams.init(
                m, shapes[m][0], shapes[m][1], latent_len, latent_dim, rng, disc_hidden
            )
            for m in modalities
        }
        cgmm_params = None
        if ablation != "mcihn-2":
            cgmm_params = CgmmParams.init(
                latent_dim,
                rng,
                modalities=modalities,
                adapt_layers=adapt_layers,
                per_core_interaction=per_core_interaction,
                mmd_kernel=mmd_kernel,
                rbf_bandwidth=rbf_bandwidth,
            )
        ffm_params = FfmParams.init(
            latent_dim,
            heads,
            rng,
            paths=modalities,
            num_classes=num_classes,
            dropout_rate=dropout_rate,
        )
        return cls(ablation, modalities, aae_params, cgmm_params, ffm_params)

    def named_tensors(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m in self.modalities:
            for k, t in self.aae[m].named_tensors().items():
                out[f"aae.{m}.{k}"] = t
        if self.cgmm is not None:
            for k, t in self.cgmm.named_tensors().items():
                out[f"cgmm.{k}"] = t
        for k, t in self.ffm.named_tensors().items():
            out[f"ffm.{k}"] = t
        return out

    def joint_tensors(self) -> list[Tensor]:
        """Parameters trained by the combined loss: encoders, gate mechanism,
        fusion. Decoders and discriminators train only in their own phases."""
        out: list[Tensor] = []
        for m in self.modalities:
            out.extend(self.aae[m].encoder_tensors().values())
        if self.cgmm is not None:
            out.extend(self.cgmm.named_tensors().values())
        out.extend(self.ffm.named_tensors().values())
        return out

    def uses_aae_phases(self) -> bool:
        return self.ablation != "mcihn-1"

    def latent_shape(self) -> tuple[int, int]:
        return self.aae[self.modalities[0]].latent_shape()


@dataclass
class ForwardResult:
    latents: dict[str, Tensor]
    transferred: dict[str, Tensor] = field(default_factory=dict)
    gates: dict[str, Tensor] = field(default_factory=dict)
    joints: dict[str, Tensor] = field(default_factory=dict)
    path_outputs: dict[str, Tensor] = field(default_factory=dict)
    prediction: Optional[Prediction] = None


def encode_all(params: ModelParams, feats: dict[str, Tensor]) -> dict[str, Tensor]:
    return {m: aae_mod.encode(params.aae[m], feats[m]) for m in params.modalities}


def gate_forward(params: ModelParams, latents: dict[str, Tensor]) -> ForwardResult:
    """Attention transfer, pairwise gates and joint representations."""
    res = ForwardResult(latents=latents)
    assert params.cgmm is not None
    mods = params.modalities
    for core in mods:
        others = [m for m in mods if m != core]
        m_core = cgmm_mod.interaction_matrix(
            params.cgmm,
            latents[core],
            latents[others[0]],
            latents[others[1]] if len(others) > 1 else None,
            core=core,
        )
        res.transferred[core] = cgmm_mod.attention_transfer(m_core, latents[core])
    for pair in params.cgmm.pairs:
        p, q = pair[0], pair[1]
        res.gates[pair] = cgmm_mod.pair_gate(params.cgmm, latents[p], latents[q], pair)
        res.joints[pair] = cgmm_mod.joint_representation(
            params.cgmm,
            res.transferred[p],
            latents[p],
            res.transferred[q],
            latents[q],
            res.gates[pair],
            pair,
        )
    return res


def _path_inputs(params: ModelParams, res: ForwardResult, core: str) -> tuple[Tensor, Tensor, Tensor]:
    s_core = res.latents[core]
    if params.cgmm is None:
        return s_core, s_core, s_core
    others = [m for m in params.modalities if m != core]
    if len(others) == 1:
        f = res.joints[canonical_pair(core, others[0])]
        return f, f, s_core
    q = res.joints[canonical_pair(core, others[0])]
    k = res.joints[canonical_pair(core, others[1])]
    return q, k, s_core


def model_forward(
    params: ModelParams,
    feats: dict[str, Tensor],
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
    latent_dropout: float = 0.0,
) -> ForwardResult:
    """Run the full pipeline on a batch of per-modality feature tensors.

    ``latent_dropout`` optionally thins the latent codes feeding the fusion
    stages at train time; the autoencoder phases never see it.
    """
    latents = encode_all(params, feats)
    if train and latent_dropout > 0.0:
        if rng is None:
            raise ValueError("latent dropout needs an rng")
        latents = {m: dropout(s, latent_dropout, rng) for m, s in latents.items()}
    if params.cgmm is not None:
        res = gate_forward(params, latents)
    else:
        res = ForwardResult(latents=latents)
    for core in params.modalities:
        q_in, k_in, v_in = _path_inputs(params, res, core)
        res.path_outputs[core] = ffm_mod.multihead_path(params.ffm, q_in, k_in, v_in, core)
    res.prediction = ffm_mod.fuse_predict(
        params.ffm,
        [res.path_outputs[m] for m in params.modalities],
        train=train,
        rng=rng,
    )
    return res


def predict_scores(params: ModelParams, feats: dict[str, np.ndarray]) -> np.ndarray:
    """Evaluation-mode scores for stacked (B, T_m, D_m) feature arrays."""
    tensors = {m: Tensor(feats[m]) for m in params.modalities}
    res = model_forward(params, tensors, train=False)
    return res.prediction.scores.data.copy()


def copy_params(params: ModelParams) -> ModelParams:
    """Deep copy used for best-checkpoint snapshots."""
    named = params.named_tensors()
    clone = ModelParams(
        params.ablation, params.modalities, dict(params.aae), params.cgmm, params.ffm
    )
    fresh = {k: Tensor(v.data.copy(), requires_grad=True) for k, v in named.items()}
    _rebind_tensors(clone, fresh)
    return clone


def _rebind_tensors(params: ModelParams, replacements: dict[str, Tensor]) -> None:
    """Replace every named tensor on a (shallow-copied) params tree."""
    for m in params.modalities:
        src = params.aae[m]
        fresh = AaeParams.__new__(AaeParams)
        fresh.modality = src.modality
        for k in src.named_tensors():
            setattr(fresh, k, replacements[f"aae.{m}.{k}"])
        params.aae[m] = fresh
    if params.cgmm is not None:
        src_c = params.cgmm
        # A shared interaction matrix was saved once, under its first core tag.
        saved = {
            k.split(".", 2)[2]: v
            for k, v in replacements.items()
            if k.startswith("cgmm.interaction.")
        }
        if len(saved) == 1:
            shared = next(iter(saved.values()))
            interaction = {m: shared for m in src_c.interaction}
        else:
            interaction = {m: saved[m] for m in src_c.interaction}
        params.cgmm = CgmmParams(
            interaction=interaction,
            gate_w={p: replacements[f"cgmm.gate_w.{p}"] for p in src_c.pairs},
            gate_b={p: replacements[f"cgmm.gate_b.{p}"] for p in src_c.pairs},
            fuse_w1={p: replacements[f"cgmm.fuse_w1.{p}"] for p in src_c.pairs},
            fuse_w2={p: replacements[f"cgmm.fuse_w2.{p}"] for p in src_c.pairs},
            adapt_w=[replacements[f"cgmm.adapt_w.{i}"] for i in range(len(src_c.adapt_w))],
            adapt_b=[replacements[f"cgmm.adapt_b.{i}"] for i in range(len(src_c.adapt_b))],
            mmd_kernel=src_c.mmd_kernel,
            rbf_bandwidth=src_c.rbf_bandwidth,
        )
    src_f = params.ffm
    params.ffm = FfmParams(
        heads=src_f.heads,
        latent_dim=src_f.latent_dim,
        wq={p: [replacements[f"ffm.wq.{p}.{i}"] for i in range(src_f.heads)] for p in src_f.wq},
        wk={p: [replacements[f"ffm.wk.{p}.{i}"] for i in range(src_f.heads)] for p in src_f.wk},
        wv={p: [replacements[f"ffm.wv.{p}.{i}"] for i in range(src_f.heads)] for p in src_f.wv},
        wo={p: replacements[f"ffm.wo.{p}"] for p in src_f.wo},
        pred_w=replacements["ffm.pred_w"],
        pred_b=replacements["ffm.pred_b"],
        class_w=replacements.get("ffm.class_w"),
        class_b=replacements.get("ffm.class_b"),
        dropout_rate=src_f.dropout_rate,
    )
