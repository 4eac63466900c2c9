"""Command-line entry point: train, convert, evaluate, cost-report.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure (non-finite loss).  All randomness flows from the configured seed;
experiment commands refuse to run without one.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import cost_model, netspec
from .convert import (ConversionError, ConversionPlan, incremental_convert_and_train,
                      stage_log_to_csv, stage_log_to_ndjson)
from .data import AugmentConfig, DataBundle, DataError, load_cifar10, load_mnist
from .network import Network, instantiate
from .optim import Adam, AdamConfig
from .train import NumericFailure, evaluate, train_epochs


class ConfigError(ValueError):
    """Bad experiment configuration."""


EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3

_DATASET_SHAPES = {"mnist": (28, 28, 1), "cifar10": (32, 32, 3)}


@dataclass
class ExperimentConfig:
    dataset_name: str = ""
    dataset_path: str = ""
    network: str | dict = "lenet-like"
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    batch_size: int = 128
    epochs: int = 1
    conversion: ConversionPlan | None = None  # layer_order filled at run time
    epochs_per_layer: int = 50
    final_epochs: int | None = 0
    patience: int = 10
    augment: AugmentConfig | None = None
    seed: int | None = None
    out_dir: str = "out"
    approx_math: bool = False
    threads: int = 1
    train_limit: int | None = None
    test_limit: int | None = None
    classical_checkpoint: str | None = None

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from e
        cfg = cls()
        known = {
            "dataset", "network", "optimizer", "batch_size", "epochs",
            "epochs_per_layer", "final_epochs", "patience", "augment", "seed",
            "out_dir", "approx_math", "threads", "train_limit", "test_limit",
            "classical_checkpoint",
        }
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        ds = doc.get("dataset", {})
        cfg.dataset_name = ds.get("name", "")
        cfg.dataset_path = ds.get("path", "")
        cfg.network = doc.get("network", cfg.network)
        if "optimizer" in doc:
            cfg.optimizer = AdamConfig(**doc["optimizer"])
        if "augment" in doc:
            cfg.augment = AugmentConfig(**doc["augment"])
        for k in ("batch_size", "epochs", "epochs_per_layer", "final_epochs", "patience",
                  "seed", "out_dir", "approx_math", "threads", "train_limit",
                  "test_limit", "classical_checkpoint"):
            if k in doc:
                setattr(cfg, k, doc[k])
        return cfg

    def require_seed(self) -> int:
        if self.seed is None:
            raise ConfigError("experiment commands require a seed (config key or --seed)")
        return int(self.seed)


def _limit(ds, n):
    if n is None or n >= len(ds):
        return ds
    from .data import Dataset

    return Dataset(ds.images[:n], ds.labels[:n], ds.name)


def load_bundle(cfg: ExperimentConfig, mean_image=None) -> DataBundle:
    if cfg.dataset_name == "mnist":
        bundle = load_mnist(cfg.dataset_path, seed=cfg.seed or 0)
    elif cfg.dataset_name == "cifar10":
        bundle = load_cifar10(cfg.dataset_path, seed=cfg.seed or 0, mean_image=mean_image)
    else:
        raise ConfigError(f"unknown dataset {cfg.dataset_name!r} (expected mnist or cifar10)")
    bundle.train = _limit(bundle.train, cfg.train_limit)
    bundle.test = _limit(bundle.test, cfg.test_limit)
    bundle.val = _limit(bundle.val, cfg.train_limit)
    return bundle


def resolve_spec(cfg: ExperimentConfig) -> netspec.NetworkSpec:
    shape = _DATASET_SHAPES.get(cfg.dataset_name, (28, 28, 1))
    if isinstance(cfg.network, dict):
        path = cfg.network.get("spec_file")
        if not path:
            raise ConfigError("network object must carry a spec_file")
        spec = netspec.load_spec(path)
    elif cfg.network == "lenet-like":
        spec = netspec.build_lenet_like(10, shape)
    elif cfg.network == "resnet22":
        spec = netspec.build_resnet22(10, shape)
    else:
        raise ConfigError(f"unknown network {cfg.network!r}")
    if cfg.dataset_name and tuple(spec.input_shape) != shape:
        raise ConfigError(f"network input {spec.input_shape} does not match dataset {cfg.dataset_name} {shape}")
    return spec


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _config_with_overrides(args)
    seed = cfg.require_seed()
    spec = resolve_spec(cfg)
    bundle = load_bundle(cfg)
    net = instantiate(spec, np.random.Generator(np.random.PCG64(seed)))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    history = train_epochs(net, bundle.train, cfg.epochs, cfg.batch_size,
                           Adam(cfg.optimizer), seed, augment=cfg.augment, val=bundle.val)
    lines = ["epoch,loss,val_accuracy"]
    lines += [f"{h.epoch},{h.loss!r},{h.val_accuracy!r}" for h in history]
    (out / "train_metrics.csv").write_text("\n".join(lines) + "\n")
    meta = {"seed": seed, "dataset": cfg.dataset_name, "network": spec.name,
            "mean_image": ckpt.encode_mean_image(bundle.mean_image)}
    ckpt.save_checkpoint(net, out / "classical_checkpoint.json", meta)
    test = evaluate(net, bundle.test, threads=cfg.threads)
    print(json.dumps({"test_accuracy": test["accuracy"], "epochs": cfg.epochs,
                      "checkpoint": str(out / "classical_checkpoint.json")}))
    return 0


def _load_classical(cfg: ExperimentConfig) -> tuple[Network, dict]:
    path = cfg.classical_checkpoint or str(Path(cfg.out_dir) / "classical_checkpoint.json")
    if not Path(path).exists():
        raise DataError(f"classical checkpoint not found: {path}")
    return ckpt.load_checkpoint(path)


def cmd_convert(args) -> int:
    cfg = _config_with_overrides(args)
    seed = cfg.require_seed()
    net, meta = _load_classical(cfg)
    bundle = load_bundle(cfg, mean_image=ckpt.decode_mean_image(meta))
    order = net.convertible_layers()
    if args.layers is not None:
        if not 0 <= args.layers <= len(order):
            raise ConfigError(f"--layers {args.layers} outside 0..{len(order)}")
        order = order[: args.layers]
    plan = ConversionPlan(order, cfg.epochs_per_layer, cfg.final_epochs, cfg.patience)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def progress(rec):
        print(f"stage {rec.stage} {rec.phase:<9} layer={rec.layer_id or '-':<12} "
              f"acc={rec.accuracy:.4f} P={rec.macro_precision:.4f} R={rec.macro_recall:.4f}",
              flush=True)

    result = incremental_convert_and_train(net, bundle, plan, cfg.optimizer, seed,
                                           cfg.batch_size, augment=cfg.augment,
                                           progress=progress)
    (out / "stage_log.csv").write_text(stage_log_to_csv(result.stages))
    (out / "stage_log.ndjson").write_text(stage_log_to_ndjson(result.stages))
    ckpt.save_checkpoint(result.net, out / "bm_checkpoint.json", meta)
    print(json.dumps({"final_accuracy": result.stages[-1].accuracy,
                      "stages": len(result.stages),
                      "checkpoint": str(out / "bm_checkpoint.json")}))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config_with_overrides(args)
    if not args.checkpoint:
        raise ConfigError("evaluate requires --checkpoint")
    if not Path(args.checkpoint).exists():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    net, meta = ckpt.load_checkpoint(args.checkpoint)
    bundle = load_bundle(cfg, mean_image=ckpt.decode_mean_image(meta))
    m = evaluate(net, bundle.test, approx=cfg.approx_math, threads=cfg.threads)
    doc = {"accuracy": m["accuracy"], "macro_precision": m["macro_precision"],
           "macro_recall": m["macro_recall"], "approx_math": cfg.approx_math,
           "confusion": m["confusion"].tolist()}
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "evaluation.json").write_text(json.dumps(doc, indent=2) + "\n")
    print(json.dumps({k: doc[k] for k in ("accuracy", "macro_precision", "macro_recall", "approx_math")}))
    return 0


def cmd_cost_report(args) -> int:
    gc = cost_model.GateConstants()
    if args.gate_constants:
        gc = cost_model.GateConstants.from_dict(json.loads(Path(args.gate_constants).read_text()))
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.grid:
        rows = cost_model.grid_report(cost_model.load_grid(args.grid), gc)
        header = "F,C,K,gate_ratio,latency_ratio"
        body = [f"{r['F']},{r['C']},{r['K']},{r['gate_ratio']:.6f},{r['latency_ratio']:.6f}" for r in rows]
        text = header + "\n" + "\n".join(body) + "\n"
        if out:
            (out / "ratio_grid.csv").write_text(text)
        print(text, end="")
        return 0
    if not args.spec:
        raise ConfigError("cost-report requires --spec or --grid")
    spec = netspec.load_spec(args.spec)
    k = args.layers if args.layers is not None else 0
    report = cost_model.network_gate_report(spec, k, gc)
    csv_text = cost_model.report_to_csv(report)
    if out:
        (out / "cost_report.csv").write_text(csv_text)
        (out / "cost_report.json").write_text(cost_model.report_to_json(report))
    print(csv_text, end="")
    if args.sweep:
        totals = cost_model.gate_sweep(spec, gc)
        sweep_text = "k,total_gates\n" + "\n".join(f"{i},{t:.6g}" for i, t in enumerate(totals)) + "\n"
        if out:
            (out / "gate_sweep.csv").write_text(sweep_text)
        print(sweep_text, end="")
        if args.plot:
            _plot_sweep(totals, args.plot)
    return 0


def _plot_sweep(totals, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(totals)), totals, marker="o")
    ax.set_xlabel("converted conv layers")
    ax.set_ylabel("total gates")
    ax.set_title("cumulative gate count vs converted layers")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument plumbing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _config_with_overrides(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    if getattr(args, "approx_math", False):
        cfg.approx_math = True
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bmnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, help="master seed (overrides config)")
        sp.add_argument("--out", help="output directory (overrides config)")
        sp.add_argument("--threads", type=int, help="evaluation thread count")
        sp.add_argument("--approx-math", dest="approx_math", action="store_true",
                        help="use polynomial ln/exp in BM layers (inference)")

    sp = sub.add_parser("train", help="train the classical network")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("convert", help="incremental BM conversion with fine-tuning")
    common(sp)
    sp.add_argument("--layers", type=int, help="convert only the first k layers")
    sp.set_defaults(fn=cmd_convert)

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", help="bmnet-v1 checkpoint file")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("cost-report", help="gate/latency cost model report")
    sp.add_argument("--spec", help="network spec JSON")
    sp.add_argument("--grid", help="JSON list of {F, C, K} rows instead of a spec")
    sp.add_argument("--layers", type=int, help="converted conv prefix length")
    sp.add_argument("--sweep", action="store_true", help="emit totals for every k")
    sp.add_argument("--plot", help="write the sweep plot to this image file")
    sp.add_argument("--gate-constants", help="JSON overrides for the gate table")
    sp.add_argument("--out", help="output directory")
    sp.set_defaults(fn=cmd_cost_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ckpt.CheckpointError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, netspec.SpecError, ConversionError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
