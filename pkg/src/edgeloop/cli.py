"""Command-line entry point for the full model lifecycle.

Subcommands follow the lifecycle: ``datagen`` (data management), ``train``
(modelling), ``export`` / ``check`` (development-to-operation handoff),
``infer`` (operation), ``bench`` and ``loop`` (trade-off and sustainability
studies; both write CSV, a text table and a PNG figure).

Flags can be pre-set in a flat ``key=value`` config file (``--config``)
with keys namespaced ``data.*``, ``model.*``, ``train.*``, ``bench.*``;
command-line flags win. Exit codes: 0 ok, 1 check violations or diverged
training, 2 usage, 3 data errors, 4 model/format errors. Diagnostics go to
stderr, data to stdout. EDGELOOP_SEED provides the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from .bench import ModelSpec, run_sustainability_loop, run_tradeoff_bench
from .data import DatasetError, load_dataset, preprocess_dataset, save_dataset
from .exchange import (
    ExchangeError,
    default_support_table,
    export_model,
    import_model,
    load_support_table,
    permissive_support_table,
    rewrite_reshape_to_flatten,
    validate_ops,
)
from .models import SmallCnnConfig, attach_preprocess
from .ops import ShapeError
from .ppm import PpmError, decode_ppm
from .preprocess import DegenerateChannelError, fit_spec
from .runtime import load_session, predict
from .synth import SynthSpec, generate_synthetic
from .training import (
    DivergedTrainingError,
    Regime,
    TrainConfig,
    apply_regime,
    evaluate_accuracy,
    split_train_test,
    train,
)


class UsageError(ValueError):
    pass


def _default_seed() -> int:
    try:
        return int(os.environ.get("EDGELOOP_SEED", "0"))
    except ValueError:
        return 0


# (config key, type) for every key a config file may set; the bool values
# accept true/false/yes/no/1/0.
_KNOWN_KEYS: dict[str, type] = {
    "data.classes": int,
    "data.per_class": int,
    "data.size": int,
    "data.shift": float,
    "data.seed": int,
    "data.glyph_seed": int,
    "model.arch": str,
    "model.blocks": int,
    "model.base_channels": int,
    "model.fc1_out": int,
    "model.image_size": int,
    "model.stages": str,
    "model.dropout": float,
    "train.epochs": int,
    "train.batch_size": int,
    "train.lr": float,
    "train.optimizer": str,
    "train.momentum": float,
    "train.regime": str,
    "train.augment": bool,
    "train.seed": int,
    "train.test_fraction": float,
    "bench.configs": str,
    "bench.models": str,
    "bench.op_eval_fraction": float,
}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"cannot parse boolean value {text!r}")


def load_config(path: str) -> dict[str, object]:
    """Flat key=value file; blank lines and # comments ignored."""
    values: dict[str, object] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        if key not in _KNOWN_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
        typ = _KNOWN_KEYS[key]
        values[key] = _parse_bool(value) if typ is bool else typ(value)
    return values


def _pick(args, config, attr: str, key: str | None, default):
    """Flag value if given, else config-file value, else default."""
    value = getattr(args, attr)
    if value is not None:
        return value
    if key is not None and key in config:
        return config[key]
    return default


def _model_specs(text: str, image_size: int, num_classes: int,
                 dropout: float) -> list[ModelSpec]:
    """Parse bench/loop model lists.

    Grammar: comma-separated entries; ``small:BLOCKS:BASE:FC1[:aug]`` or
    ``mobile:...`` likewise, ``residual:S0-S1-..:BASE``.
    """
    specs: list[ModelSpec] = []
    for i, entry in enumerate(t for t in text.split(",") if t.strip()):
        parts = entry.strip().split(":")
        family = parts[0]
        try:
            if family in ("small", "mobile"):
                blocks, base, fc1 = int(parts[1]), int(parts[2]), int(parts[3])
                augment = None
                if len(parts) > 4:
                    augment = parts[4] == "aug" or _parse_bool(parts[4])
                cfg = SmallCnnConfig(
                    image_size=image_size, num_conv_blocks=blocks, base_channels=base,
                    fc1_out=fc1, num_classes=num_classes, dropout_p=dropout,
                )
                specs.append(ModelSpec(
                    name=f"{family}-{blocks}b{base}c", family=family, config=cfg,
                    num_classes=num_classes, augment=augment,
                ))
            elif family == "residual":
                stages = tuple(int(v) for v in parts[1].split("-"))
                base = int(parts[2]) if len(parts) > 2 else 16
                specs.append(ModelSpec(
                    name=f"residual-{parts[1]}x{base}", family=family, stages=stages,
                    base_channels=base, image_size=image_size, num_classes=num_classes,
                ))
            else:
                raise UsageError(f"model entry {i}: unknown family '{family}'")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, UsageError):
                raise
            raise UsageError(f"model entry {i} ({entry!r}): {exc}") from exc
    if not specs:
        raise UsageError("empty model list")
    return specs


def _support_from_flag(name: str):
    if name == "default":
        return default_support_table()
    if name == "permissive":
        return permissive_support_table()
    try:
        return load_support_table(Path(name).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read support table {name}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args, config) -> int:
    spec = SynthSpec(
        num_classes=_pick(args, config, "classes", "data.classes", 8),
        samples_per_class=_pick(args, config, "per_class", "data.per_class", 50),
        image_size=_pick(args, config, "size", "data.size", 64),
        shift=_pick(args, config, "shift", "data.shift", 0.0),
        seed=_pick(args, config, "seed", "data.seed", _default_seed()),
        glyph_seed=_pick(args, config, "glyph_seed", "data.glyph_seed", None),
    )
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    print(f"out={args.out} images={len(ds)} classes={ds.num_classes} shift={spec.shift}")
    return 0


def _build_entry_model(args, config, num_classes: int, seed: int):
    arch = _pick(args, config, "arch", "model.arch", "small")
    image_size = _pick(args, config, "image_size", "model.image_size", 64)
    dropout = _pick(args, config, "dropout", "model.dropout", 0.25)
    if arch == "residual":
        stages = _pick(args, config, "stages", "model.stages", "2,2")
        spec = ModelSpec(
            name="residual", family="residual",
            stages=tuple(int(v) for v in str(stages).split(",")),
            base_channels=_pick(args, config, "base_channels", "model.base_channels", 16),
            image_size=image_size, num_classes=num_classes,
        )
    elif arch in ("small", "mobile"):
        cfg = SmallCnnConfig(
            image_size=image_size,
            num_conv_blocks=_pick(args, config, "blocks", "model.blocks", 2),
            base_channels=_pick(args, config, "base_channels", "model.base_channels", 8),
            fc1_out=_pick(args, config, "fc1_out", "model.fc1_out", 128),
            num_classes=num_classes,
            dropout_p=dropout,
        )
        spec = ModelSpec(name=arch, family=arch, config=cfg, num_classes=num_classes)
    else:
        raise UsageError(f"unknown architecture '{arch}'")
    return spec, image_size


def _train_config(args, config) -> TrainConfig:
    return TrainConfig(
        epochs=_pick(args, config, "epochs", "train.epochs", 5),
        batch_size=_pick(args, config, "batch_size", "train.batch_size", 32),
        learning_rate=_pick(args, config, "lr", "train.lr", 1e-3),
        optimizer=_pick(args, config, "optimizer", "train.optimizer", "adam"),
        momentum=_pick(args, config, "momentum", "train.momentum", 0.9),
        regime=Regime(_pick(args, config, "regime", "train.regime", "tfs")),
        seed=_pick(args, config, "seed", "train.seed", _default_seed()),
        augment=bool(_pick(args, config, "augment", "train.augment", False)),
    )


def cmd_train(args, config) -> int:
    ds = load_dataset(args.data)
    cfg = _train_config(args, config)
    spec, image_size = _build_entry_model(args, config, ds.num_classes, cfg.seed)
    test_fraction = _pick(args, config, "test_fraction", "train.test_fraction", 0.2)

    train_ds, test_ds = split_train_test(ds, test_fraction, cfg.seed)
    pspec = fit_spec(train_ds.images, image_size)
    g = spec.build(cfg.seed, pspec)

    pretrained = None
    if args.pretrained:
        pretrained = import_model(Path(args.pretrained).read_bytes(), permissive_support_table())
    g = apply_regime(g, cfg.regime, pretrained, seed=cfg.seed)
    attach_preprocess(g, pspec)

    trained, rep = train(
        g, preprocess_dataset(train_ds, pspec), cfg,
        test_data=preprocess_dataset(test_ds, pspec),
    )
    for i, loss in enumerate(rep.epoch_losses):
        print(f"epoch {i}: loss {loss:.4f}", file=sys.stderr)

    trained.meta.update({
        "train.epochs": str(cfg.epochs),
        "train.lr": repr(cfg.learning_rate),
        "train.optimizer": cfg.optimizer,
        "train.regime": cfg.regime.value,
        "train.seed": str(cfg.seed),
        "train.augment": str(cfg.augment).lower(),
        "train.final_test_accuracy": f"{rep.final_test_accuracy:.6f}",
    })
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(export_model(trained))

    report = dict(asdict(rep), config=dict(asdict(cfg), regime=cfg.regime.value))
    report_path = out.with_name(out.name + ".train.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    print(f"checkpoint={out} report={report_path} "
          f"test_accuracy={rep.final_test_accuracy:.4f} wall_time_s={rep.wall_time_s:.2f}")
    return 0


def cmd_export(args, config) -> int:
    g = import_model(Path(args.checkpoint).read_bytes(), permissive_support_table())
    g.meta = {k: v for k, v in g.meta.items() if not k.startswith("train.")}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(export_model(g))
    print(f"model={out} bytes={out.stat().st_size}")
    return 0


def cmd_check(args, config) -> int:
    data = Path(args.model).read_bytes()
    support = _support_from_flag(args.support)
    violations = validate_ops(data, support)
    for v in violations:
        print(f"node={v.node_index} op={v.op} rewritable={'yes' if v.rewritable else 'no'} "
              f"reason={v.reason}")
    if args.fix:
        if not args.out:
            raise UsageError("--fix requires --out")
        fixed = rewrite_reshape_to_flatten(data)
        Path(args.out).write_bytes(fixed)
        remaining = validate_ops(fixed, support)
        print(f"fixed={args.out} remaining_violations={len(remaining)}", file=sys.stderr)
    if violations:
        return 1
    print("ok")
    return 0


def cmd_infer(args, config) -> int:
    session = load_session(Path(args.model).read_bytes(), _support_from_flag(args.support))
    for path in args.images:
        pred = predict(session, decode_ppm(Path(path).read_bytes()))
        conf = float(pred.confidences[pred.class_id])
        ms = pred.latency_s * 1000.0
        if args.format == "kv":
            print(f"image={path} class_id={pred.class_id} "
                  f"confidence_pct={conf:.2f} latency_ms={ms:.1f}")
        else:
            print(f"{pred.class_id},{conf:.2f},{ms:.1f}")
    return 0


def cmd_bench(args, config) -> int:
    from .report import emit_tradeoff, format_table, tradeoff_rows, TRADEOFF_HEADER

    ds = load_dataset(args.data)
    cfg = _train_config(args, config)
    image_size = _pick(args, config, "image_size", "model.image_size", 64)
    dropout = _pick(args, config, "dropout", "model.dropout", 0.25)
    default_cfgs = "small:2:8:128,small:3:16:128,small:4:32:512,mobile:3:16:128"
    text = _pick(args, config, "configs", "bench.configs", default_cfgs)
    entries = _model_specs(text, image_size, ds.num_classes, dropout)
    test_fraction = _pick(args, config, "test_fraction", "train.test_fraction", 0.2)

    rep = run_tradeoff_bench(entries, ds, cfg, test_fraction=test_fraction)
    paths = emit_tradeoff(rep, args.out_dir)
    print(format_table(TRADEOFF_HEADER, tradeoff_rows(rep)), end="")
    print(f"csv={paths['csv']} txt={paths['txt']} png={paths['png']}", file=sys.stderr)
    for row in rep.rows:
        if row.error:
            print(f"row '{row.conv_blocks} blocks' failed: {row.error}", file=sys.stderr)
    return 0


def cmd_loop(args, config) -> int:
    from .report import emit_loop, format_table, loop_rows, LOOP_HEADER

    dev = load_dataset(args.dev, tag="dev")
    op = load_dataset(args.op, tag="op")
    cfg = _train_config(args, config)
    image_size = _pick(args, config, "image_size", "model.image_size", 64)
    dropout = _pick(args, config, "dropout", "model.dropout", 0.25)
    text = _pick(args, config, "models", "bench.models", "small:2:8:128")
    entries = _model_specs(text, image_size, dev.num_classes, dropout)
    fraction = _pick(args, config, "op_eval_fraction", "bench.op_eval_fraction", 0.5)

    rep = run_sustainability_loop(entries, dev, op, cfg, op_eval_fraction=fraction)
    paths = emit_loop(rep, args.out_dir)
    print(format_table(LOOP_HEADER, loop_rows(rep)), end="")
    print(f"csv={paths['csv']} txt={paths['txt']} png={paths['png']}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeloop",
        description="Desk-scale CNN lifecycle: data, training, exchange, edge inference, benchmarks.",
    )
    parser.add_argument("--config", help="flat key=value config file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate a synthetic glyph dataset")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--shift", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--glyph-seed", dest="glyph_seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--arch", choices=("small", "mobile", "residual"))
    p.add_argument("--blocks", type=int)
    p.add_argument("--base-channels", dest="base_channels", type=int)
    p.add_argument("--fc1-out", dest="fc1_out", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--stages")
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--momentum", type=float)
    p.add_argument("--regime", choices=("tfs", "fe", "ft"))
    p.add_argument("--pretrained")
    p.add_argument("--augment", action="store_const", const=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("export", help="strip training metadata from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("check", help="validate a model against a support table")
    p.add_argument("model")
    p.add_argument("--support", default="default",
                   help="'default', 'permissive' or a support_table.txt path")
    p.add_argument("--fix", action="store_true", help="apply the reshape->flatten rewrite")
    p.add_argument("--out", help="where --fix writes the rewritten model")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("infer", help="classify PPM images with a model file")
    p.add_argument("model")
    p.add_argument("images", nargs="+")
    p.add_argument("--format", choices=("csv", "kv"), default="csv")
    p.add_argument("--support", default="default")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="accuracy-vs-complexity trade-off benchmark")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--configs")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--momentum", type=float)
    p.add_argument("--regime", choices=("tfs",))
    p.add_argument("--augment", action="store_const", const=True)
    p.add_argument("--test-fraction", dest="test_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("loop", help="two-iteration sustainability (retraining) loop")
    p.add_argument("--dev", required=True)
    p.add_argument("--op", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--models")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("adam", "sgd"))
    p.add_argument("--momentum", type=float)
    p.add_argument("--regime", choices=("tfs",))
    p.add_argument("--augment", action="store_const", const=True)
    p.add_argument("--op-eval-fraction", dest="op_eval_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_loop)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config) if args.config else {}
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, PpmError, DegenerateChannelError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ExchangeError, ShapeError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return 4
    except DivergedTrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
