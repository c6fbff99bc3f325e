"""Command-line surface.

Subcommands: synth-gen, data-info, train, eval, ablate, gradcheck. Training
options come from built-in defaults, then an optional key=value config file,
then command-line flags, in that precedence order. Run directories collect
the resolved config, per-epoch history (JSON lines), the best checkpoint and
the final validation metrics.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from .data import (
    DESK_SHAPES,
    PAPER_SHAPES,
    DatasetHeader,
    SyntheticSpec,
    generate_synthetic,
    read_feature_file,
    write_feature_file,
)
from .train import (
    Checkpoint,
    TrainConfig,
    evaluate_checkpoint,
    model_grad_check,
    run_ablation_suite,
    train,
)

CONFIG_KEYS = (
    "latent_len",
    "latent_dim",
    "heads",
    "lr",
    "batch_size",
    "dropout",
    "beta1",
    "beta2",
    "epsilon",
    "max_epochs",
    "patience",
    "adaptation",
    "ablation",
    "seed",
    "mmd_kernel",
    "rbf_bandwidth",
    "adapt_layers",
    "per_core_interaction",
    "disc_hidden",
    "class_head",
    "num_classes",
    "merged_update",
    "scheme",
    "acc2_drop_neutral",
)

_BOOL_KEYS = {"adaptation", "per_core_interaction", "class_head", "merged_update", "acc2_drop_neutral"}
_INT_KEYS = {
    "latent_len", "latent_dim", "heads", "batch_size", "max_epochs", "patience",
    "seed", "adapt_layers", "num_classes",
}
_FLOAT_KEYS = {"lr", "dropout", "beta1", "beta2", "epsilon"}
_OPT_KEYS = {"rbf_bandwidth": float, "disc_hidden": int}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {key!r} expects a boolean, got {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _OPT_KEYS:
        return None if raw.lower() in ("none", "") else _OPT_KEYS[key](raw)
    return raw


def load_config_file(path) -> dict:
    """Parse newline-delimited key=value pairs; '#' starts a comment."""
    out: dict = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key.startswith("shape_") and key[len("shape_"):] in ("v", "t", "a"):
            t, d = raw.lower().split("x")
            out.setdefault("shapes", dict(DESK_SHAPES))[key[len("shape_"):]] = (int(t), int(d))
            continue
        if key not in CONFIG_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def _shapes_from_arg(name: str) -> dict:
    return dict(PAPER_SHAPES) if name == "paper" else dict(DESK_SHAPES)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--ablation", choices=("full", "-VT", "-VA", "-TA", "mcihn-1", "mcihn-2"))
    p.add_argument("--latent-len", type=int, dest="latent_len")
    p.add_argument("--latent-dim", type=int, dest="latent_dim")
    p.add_argument("--heads", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--mmd-kernel", choices=("linear", "rbf"), dest="mmd_kernel")
    p.add_argument("--rbf-bandwidth", type=float, dest="rbf_bandwidth")
    p.add_argument("--no-adaptation", action="store_true")
    p.add_argument("--merged-update", action="store_true", dest="merged_update")
    p.add_argument("--scheme", choices=("mosi", "sims"))


def _resolve_config(args, header: DatasetHeader) -> TrainConfig:
    values: dict = {"shapes": dict(header.shapes)}
    values["scheme"] = "mosi" if header.scheme == "mosi7" else "sims"
    if args.config:
        values.update(load_config_file(args.config))
    for key in CONFIG_KEYS:
        if key == "merged_update":  # store_true flag, handled below
            continue
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "no_adaptation", False):
        values["adaptation"] = False
    if getattr(args, "merged_update", False):
        values["merged_update"] = True
    return TrainConfig(**values)


def _write_run_dir(run_dir: Path, config: TrainConfig, checkpoint, history, report) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, value in config.to_dict().items():
        if key == "shapes":
            for m, (t, d) in value.items():
                lines.append(f"shape_{m}={t}x{d}")
        else:
            lines.append(f"{key}={value}")
    (run_dir / "config.txt").write_text("\n".join(lines) + "\n")
    with open(run_dir / "history.jsonl", "w") as f:
        for record in history:
            f.write(json.dumps(record.to_dict()) + "\n")
    checkpoint.save(run_dir / "checkpoint.npz")
    (run_dir / "metrics.json").write_text(report.to_json() + "\n")


def _cmd_synth_gen(args) -> int:
    shapes = _shapes_from_arg(args.shapes)
    spec = SyntheticSpec(
        count=args.count,
        shapes=shapes,
        rho=args.rho,
        label_dist=args.label_dist,
        scheme=args.scheme,
        seed=args.seed,
        geometry_seed=args.geometry_seed,
        noise_scale=args.noise_scale,
    )
    samples = generate_synthetic(spec)
    header = DatasetHeader(shapes=shapes, count=len(samples), scheme=args.scheme)
    write_feature_file(args.out, header, samples)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _cmd_data_info(args) -> int:
    header, samples = read_feature_file(args.path)
    info = header.to_dict()
    labels = [s.label for s in samples]
    info["label_min"] = min(labels)
    info["label_max"] = max(labels)
    print(json.dumps(info, indent=2))
    return 0


def _cmd_train(args) -> int:
    header, train_samples = read_feature_file(args.train)
    _, valid_samples = read_feature_file(args.valid)
    config = _resolve_config(args, header)
    checkpoint, history = train(config, train_samples, valid_samples)
    report = evaluate_checkpoint(checkpoint, valid_samples)
    _write_run_dir(Path(args.run_dir), config, checkpoint, history, report)
    print(f"best epoch {checkpoint.epoch}: validation MAE {checkpoint.best_val_mae:.4f}")
    print(f"run artifacts in {args.run_dir}")
    return 0


def _cmd_eval(args) -> int:
    checkpoint = Checkpoint.load(args.checkpoint)
    _, samples = read_feature_file(args.data)
    report = evaluate_checkpoint(checkpoint, samples, scheme=args.scheme)
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_ablate(args) -> int:
    header, train_samples = read_feature_file(args.train)
    _, valid_samples = read_feature_file(args.valid)
    config = _resolve_config(args, header)
    seeds = [int(s) for s in args.seeds.split(",")]
    result = run_ablation_suite(config, train_samples, valid_samples, seeds)
    table = result.table_text()
    print(table)
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "ablation.txt").write_text(table + "\n")
    (run_dir / "ablation.json").write_text(json.dumps(result.to_dict(), indent=2) + "\n")
    return 0


def _cmd_gradcheck(args) -> int:
    shapes = _shapes_from_arg(args.shapes)
    config = TrainConfig(
        shapes=shapes,
        latent_len=args.latent_len,
        latent_dim=args.latent_dim,
        heads=args.heads,
        seed=args.seed,
    )
    spec = SyntheticSpec(count=args.batch, shapes=shapes, rho=0.8, seed=args.seed)
    batch = generate_synthetic(spec)
    errors = model_grad_check(config, batch, eps=args.eps)
    worst = max(errors.values())
    worst_name = max(errors, key=errors.get)
    print(f"checked {len(errors)} parameter tensors")
    print(f"max relative error {worst:.3e} ({worst_name})")
    if worst < args.tolerance:
        print("gradcheck PASS")
        return 0
    print(f"gradcheck FAIL (tolerance {args.tolerance:g})")
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcihn",
        description="Train and evaluate the multimodal sentiment model on MCIH feature files.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth-gen", help="generate a synthetic MCIH feature file")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--geometry-seed", type=int, default=None, dest="geometry_seed",
        help="share planted directions across files (defaults to --seed)",
    )
    p.add_argument("--noise-scale", type=float, default=1.0, dest="noise_scale")
    p.add_argument("--label-dist", default="uniform", choices=("uniform", "mosi7", "sims5"))
    p.add_argument("--scheme", default="mosi7", choices=("mosi7", "sims5"))
    p.add_argument("--shapes", default="desk", choices=("desk", "paper"))
    p.set_defaults(func=_cmd_synth_gen)

    p = sub.add_parser("data-info", help="print an MCIH file header")
    p.add_argument("path")
    p.set_defaults(func=_cmd_data_info)

    p = sub.add_parser("train", help="train a model and write a run directory")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--run-dir", required=True, dest="run_dir")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on an MCIH file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out")
    p.add_argument("--scheme", choices=("mosi", "sims"))
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the ablation suite over paired seeds")
    p.add_argument("--train", required=True)
    p.add_argument("--valid", required=True)
    p.add_argument("--run-dir", required=True, dest="run_dir")
    p.add_argument("--seeds", default="0,1,2,3,4")
    _add_train_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the combined loss")
    p.add_argument("--shapes", default="desk", choices=("desk", "paper"))
    p.add_argument("--latent-len", type=int, default=8, dest="latent_len")
    p.add_argument("--latent-dim", type=int, default=16, dest="latent_dim")
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    # Default seed picked so no ReLU preactivation sits within eps of zero,
    # where finite differences are invalid.
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
