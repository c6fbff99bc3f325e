"""Training loop, optimizer, checkpoints, evaluation, ablation suite.

Each batch runs the staged update: the three autoencoder phases per
modality, then one joint step on the combined loss (prediction error plus,
when enabled, the cross-modal adaptation term). Encoders therefore receive
two kinds of updates per batch, as the staged schedule prescribes; a
``merged_update`` switch folds the autoencoder objectives into the joint
step instead (the discriminator always keeps its own phase).

Everything is seed-deterministic: parameter init, shuffling, prior draws
and dropout masks all derive from the single config seed.

Only one learning rate exists here. The source setup's separate, smaller
fine-tuning rate for a pretrained text encoder does not apply because
feature extraction is out of scope (features arrive precomputed).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import aae as aae_mod
from . import ffm as ffm_mod
from .cgmm import adaptation_loss
from .data import DESK_SHAPES, PAPER_SHAPES, ModalSample, batch_arrays, make_batches
from .metrics import MetricsReport, evaluate as evaluate_metrics
from .model import ABLATIONS, ModelParams, copy_params, model_forward, modalities_for
from .tensor import Tape, Tensor, backward, grad_check, zero_grads


class TrainingDivergedError(RuntimeError):
    """Raised when a loss stops being finite; names the offending stage."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    shapes: dict[str, tuple[int, int]] = field(default_factory=lambda: dict(DESK_SHAPES))
    latent_len: int = 8
    latent_dim: int = 16
    heads: int = 4
    lr: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    adaptation: bool = True
    ablation: str = "full"
    seed: int = 0
    mmd_kernel: str = "linear"
    rbf_bandwidth: Optional[float] = None
    adapt_layers: int = 1
    per_core_interaction: bool = False
    disc_hidden: Optional[int] = None
    class_head: bool = False
    num_classes: int = 3
    merged_update: bool = False
    scheme: str = "mosi"
    acc2_drop_neutral: bool = False
    latent_dropout: float = 0.0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.heads < 1 or self.latent_dim % self.heads != 0:
            raise ValueError(f"heads {self.heads} must divide latent_dim {self.latent_dim}")
        self.shapes = {m: tuple(v) for m, v in self.shapes.items()}

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        return cls(**overrides)

    @classmethod
    def paper_scale(cls, **overrides) -> "TrainConfig":
        base = dict(shapes=dict(PAPER_SHAPES), latent_len=32, latent_dim=256, heads=8)
        base.update(overrides)
        return cls(**base)

    def modalities(self) -> tuple[str, ...]:
        return modalities_for(self.ablation)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["shapes"] = {m: list(v) for m, v in self.shapes.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "shapes" in d:
            d["shapes"] = {m: tuple(v) for m, v in d["shapes"].items()}
        return cls(**d)

    def init_params(self, rng: np.random.Generator) -> ModelParams:
        return ModelParams.init(
            shapes=self.shapes,
            latent_len=self.latent_len,
            latent_dim=self.latent_dim,
            heads=self.heads,
            rng=rng,
            ablation=self.ablation,
            disc_hidden=self.disc_hidden,
            adapt_layers=self.adapt_layers,
            per_core_interaction=self.per_core_interaction,
            mmd_kernel=self.mmd_kernel,
            rbf_bandwidth=self.rbf_bandwidth,
            num_classes=self.num_classes if self.class_head else None,
            dropout_rate=self.dropout,
        )


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_update(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam step, in place on theta."""
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError(
            f"mismatched shapes: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}"
        )
    state.t += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    m_hat = state.m / (1.0 - beta1**state.t)
    v_hat = state.v / (1.0 - beta2**state.t)
    theta -= lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam over Tensor parameters, with per-parameter moment buffers."""

    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._state: dict[int, tuple[Tensor, AdamState]] = {}

    def state_for(self, t: Tensor) -> AdamState:
        entry = self._state.get(id(t))
        if entry is None:
            entry = (t, AdamState(np.zeros_like(t.data), np.zeros_like(t.data)))
            self._state[id(t)] = entry
        return entry[1]

    def step(self, tensors: Sequence[Tensor]) -> None:
        for t in tensors:
            if t.grad is None:
                raise ValueError("cannot step a tensor without a grad buffer")
            adam_update(t.data, t.grad, self.state_for(t), self.lr, self.beta1, self.beta2, self.eps)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    params: ModelParams
    config: TrainConfig
    epoch: int
    best_val_mae: float
    seed: int

    def save(self, path) -> None:
        meta = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "best_val_mae": self.best_val_mae,
            "seed": self.seed,
        }
        arrays = {f"tensor/{k}": t.data for k, t in self.params.named_tensors().items()}
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            arrays = {k[len("tensor/"):]: z[k] for k in z.files if k.startswith("tensor/")}
        config = TrainConfig.from_dict(meta["config"])
        params = config.init_params(np.random.default_rng(0))
        named = params.named_tensors()
        if set(named) != set(arrays):
            missing = set(named) ^ set(arrays)
            raise ValueError(f"checkpoint tensor names do not match the config: {sorted(missing)}")
        for k, t in named.items():
            if t.data.shape != arrays[k].shape:
                raise ValueError(f"checkpoint tensor {k} has shape {arrays[k].shape}, expected {t.data.shape}")
            t.data[...] = arrays[k]
        return cls(params, config, meta["epoch"], meta["best_val_mae"], meta["seed"])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _check_finite(value: float, stage: str, epoch: int, batch: int) -> float:
    if not math.isfinite(value):
        raise TrainingDivergedError(
            f"{stage} loss became non-finite at epoch {epoch}, batch {batch}"
        )
    return value


def _check_dataset(samples: Sequence[ModalSample], config: TrainConfig, name: str) -> None:
    for m in config.modalities():
        got = tuple(samples[0].feature(m).shape)
        want = tuple(config.shapes[m])
        if got != want:
            raise ValueError(f"{name} set modality {m!r} has shape {got}, config expects {want}")


@dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]
    val: MetricsReport

    def to_dict(self) -> dict:
        row = {"epoch": self.epoch}
        row.update(self.losses)
        row["val_mae"] = self.val.mae
        row["val_corr"] = self.val.corr
        return row


def train(
    config: TrainConfig,
    train_samples: Sequence[ModalSample],
    valid_samples: Sequence[ModalSample],
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Run the staged training schedule with early stopping on validation MAE."""
    if not train_samples or not valid_samples:
        raise ValueError("train and validation sets must be nonempty")
    _check_dataset(train_samples, config, "train")
    _check_dataset(valid_samples, config, "validation")

    seeds = np.random.SeedSequence(config.seed).generate_state(4)
    init_seed, shuffle_seed, prior_seed, dropout_seed = (int(s) for s in seeds)
    params = config.init_params(np.random.default_rng(init_seed))
    optimizer = Adam(config.lr, (config.beta1, config.beta2), config.epsilon)
    dropout_rng = np.random.default_rng(dropout_seed)
    modalities = config.modalities()

    best_mae = math.inf
    best_params: Optional[ModelParams] = None
    best_epoch = -1
    since_best = 0
    history: list[EpochRecord] = []
    step_counter = 0

    for epoch in range(config.max_epochs):
        batches = make_batches(
            train_samples, config.batch_size, seed=shuffle_seed + epoch, shuffle=True
        )
        sums: dict[str, float] = {}
        for b_idx, batch in enumerate(batches):
            feats_np, labels_np = batch_arrays(batch, modalities)
            feats = {m: Tensor(feats_np[m]) for m in modalities}
            labels = Tensor(labels_np)

            if params.uses_aae_phases():
                for m in modalities:
                    phase_seed = prior_seed + step_counter * 7 + ord(m)
                    if config.merged_update:
                        l_disc = aae_mod.discriminator_step(
                            params.aae[m], feats[m], optimizer, seed=phase_seed
                        )
                        _check_finite(l_disc, f"discriminator[{m}]", epoch, b_idx)
                        _accumulate(sums, "l_disc", l_disc / len(modalities))
                    else:
                        _, losses = aae_mod.aae_step(
                            params.aae[m], feats[m], optimizer, seed=phase_seed
                        )
                        _check_finite(losses.reconstruction, f"reconstruction[{m}]", epoch, b_idx)
                        _check_finite(losses.discriminator, f"discriminator[{m}]", epoch, b_idx)
                        _check_finite(losses.adversarial, f"adversarial[{m}]", epoch, b_idx)
                        _accumulate(sums, f"l_ae_{m}", losses.reconstruction)
                        _accumulate(sums, "l_disc", losses.discriminator / len(modalities))
                        _accumulate(sums, "l_adv", losses.adversarial / len(modalities))

            joint = params.joint_tensors()
            extra_losses: list[Tensor] = []
            zero_grads(joint)
            if params.uses_aae_phases() and config.merged_update:
                zero_grads([t for m in modalities for t in params.aae[m].decoder_tensors().values()])
            with Tape() as tape:
                if params.uses_aae_phases() and config.merged_update:
                    extra_losses = _merged_aae_losses(params, feats, modalities, sums, epoch, b_idx)
                res = model_forward(
                    params, feats, train=True, rng=dropout_rng,
                    latent_dropout=config.latent_dropout,
                )
                l_mul = ffm_mod.mae_loss(res.prediction.scores, labels)
                if config.adaptation and params.cgmm is not None:
                    l_adp = adaptation_loss(params.cgmm, res.latents)
                else:
                    l_adp = Tensor(np.asarray(0.0))
                l_combined = ffm_mod.combined_loss(l_mul, l_adp)
                total = l_combined
                for extra in extra_losses:
                    total = ffm_mod.combined_loss(extra, total)
            mul_val = _check_finite(l_mul.item(), "prediction", epoch, b_idx)
            adp_val = _check_finite(l_adp.item(), "adaptation", epoch, b_idx)
            _check_finite(l_combined.item(), "combined", epoch, b_idx)
            backward(total, tape)
            step_tensors = list(joint)
            if params.uses_aae_phases() and config.merged_update:
                for m in modalities:
                    step_tensors.extend(params.aae[m].decoder_tensors().values())
            optimizer.step(step_tensors)
            _accumulate(sums, "l_mul", mul_val)
            _accumulate(sums, "l_adp", adp_val)
            step_counter += 1

        n_batches = len(batches)
        losses = {k: v / n_batches for k, v in sums.items()}
        # The combined loss is the exact sum of its logged components.
        losses["l_combined"] = losses["l_adp"] + losses["l_mul"]
        val_report = evaluate_params(params, valid_samples, config)
        history.append(EpochRecord(epoch, losses, val_report))

        if val_report.mae < best_mae:
            best_mae = val_report.mae
            best_params = copy_params(params)
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    assert best_params is not None
    checkpoint = Checkpoint(best_params, config, best_epoch, best_mae, config.seed)
    return checkpoint, history


def _merged_aae_losses(params, feats, modalities, sums, epoch, b_idx) -> list[Tensor]:
    """Reconstruction + adversarial terms recorded on the current tape."""
    out = []
    for m in modalities:
        s = aae_mod.encode(params.aae[m], feats[m])
        x_hat = aae_mod.decode(params.aae[m], s)
        l_rec = aae_mod.reconstruction_loss(feats[m], x_hat)
        l_adv = aae_mod.encoder_adversarial_loss(params.aae[m], aae_mod.latent_rows(s))
        _check_finite(l_rec.item(), f"reconstruction[{m}]", epoch, b_idx)
        _check_finite(l_adv.item(), f"adversarial[{m}]", epoch, b_idx)
        _accumulate(sums, f"l_ae_{m}", l_rec.item())
        _accumulate(sums, "l_adv", l_adv.item() / len(modalities))
        out.extend([l_rec, l_adv])
    return out


def _accumulate(sums: dict[str, float], key: str, value: float) -> None:
    sums[key] = sums.get(key, 0.0) + value


def evaluate_params(
    params: ModelParams, samples: Sequence[ModalSample], config: TrainConfig
) -> MetricsReport:
    """Deterministic forward-only evaluation (dropout off)."""
    scores = predict_all(params, samples, config.batch_size)
    labels = [s.label for s in samples]
    return evaluate_metrics(scores, labels, config.scheme, config.acc2_drop_neutral)


def predict_all(
    params: ModelParams, samples: Sequence[ModalSample], batch_size: int = 32
) -> list[float]:
    out: list[float] = []
    for batch in make_batches(samples, batch_size, shuffle=False):
        feats_np, _ = batch_arrays(batch, params.modalities)
        feats = {m: Tensor(feats_np[m]) for m in params.modalities}
        res = model_forward(params, feats, train=False)
        out.extend(float(v) for v in res.prediction.scores.data)
    return out


def evaluate_checkpoint(
    checkpoint: Checkpoint, samples: Sequence[ModalSample], scheme: Optional[str] = None
) -> MetricsReport:
    config = checkpoint.config
    if scheme is not None and scheme != config.scheme:
        config = dataclasses.replace(config, scheme=scheme)
    return evaluate_params(checkpoint.params, samples, config)


# ---------------------------------------------------------------------------
# Ablation suite
# ---------------------------------------------------------------------------

SUITE_ORDER = ("-VT", "-VA", "-TA", "mcihn-1", "mcihn-2", "full")


@dataclass
class AblationRow:
    ablation: str
    seeds: list[int]
    val_maes: list[float]
    reports: list[MetricsReport]

    def mean_metric(self, key: str) -> Optional[float]:
        vals = [getattr(r, key) for r in self.reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))


@dataclass
class AblationResult:
    rows: dict[str, AblationRow]
    scheme: str

    def table_text(self) -> str:
        if self.scheme == "mosi":
            cols = ["acc2", "f1", "acc7", "mae", "corr"]
        else:
            cols = ["acc2", "f1", "acc3", "acc5", "mae", "corr"]
        header = ["method"] + cols
        lines = ["  ".join(f"{h:>8}" for h in header)]
        for tag in SUITE_ORDER:
            if tag not in self.rows:
                continue
            row = self.rows[tag]
            name = "MCIHN" if tag == "full" else tag.upper()
            cells = [f"{name:>8}"]
            for c in cols:
                v = row.mean_metric(c)
                cells.append(f"{v:8.3f}" if v is not None else f"{'-':>8}")
            lines.append("  ".join(cells))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "rows": {
                tag: {
                    "seeds": row.seeds,
                    "val_maes": row.val_maes,
                    "reports": [r.to_dict() for r in row.reports],
                }
                for tag, row in self.rows.items()
            },
        }


def run_ablation_suite(
    config: TrainConfig,
    train_samples: Sequence[ModalSample],
    valid_samples: Sequence[ModalSample],
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    variants: Sequence[str] = SUITE_ORDER,
) -> AblationResult:
    """Train and evaluate every requested variant across paired seeds."""
    rows: dict[str, AblationRow] = {}
    for tag in variants:
        maes, reports = [], []
        for seed in seeds:
            cfg = dataclasses.replace(config, ablation=tag, seed=seed)
            checkpoint, _ = train(cfg, train_samples, valid_samples)
            report = evaluate_checkpoint(checkpoint, valid_samples)
            maes.append(checkpoint.best_val_mae)
            reports.append(report)
        rows[tag] = AblationRow(tag, list(seeds), maes, reports)
    return AblationResult(rows=rows, scheme=config.scheme)


# ---------------------------------------------------------------------------
# Whole-model gradient check
# ---------------------------------------------------------------------------


def model_grad_check(
    config: TrainConfig,
    batch: Sequence[ModalSample],
    eps: float = 1e-5,
    max_params: Optional[int] = None,
) -> dict[str, float]:
    """Central-difference check of the combined loss against every parameter
    it trains. Returns {tensor name: max relative error}."""
    params = config.init_params(np.random.default_rng(config.seed))
    feats_np, labels_np = batch_arrays(batch, config.modalities())
    feats = {m: Tensor(feats_np[m]) for m in config.modalities()}
    labels = Tensor(labels_np)
    mask_seed = config.seed + 1

    def loss_fn(_: Tensor) -> Tensor:
        rng = np.random.default_rng(mask_seed)  # frozen dropout mask per call
        res = model_forward(params, feats, train=config.dropout > 0, rng=rng)
        l_mul = ffm_mod.mae_loss(res.prediction.scores, labels)
        if config.adaptation and params.cgmm is not None:
            l_adp = adaptation_loss(params.cgmm, res.latents)
            return ffm_mod.combined_loss(l_mul, l_adp)
        return l_mul

    joint_ids = {id(t) for t in params.joint_tensors()}
    names = {k: t for k, t in params.named_tensors().items() if id(t) in joint_ids}
    if max_params is not None:
        names = dict(list(names.items())[:max_params])
    return {name: grad_check(loss_fn, t, eps) for name, t in names.items()}
