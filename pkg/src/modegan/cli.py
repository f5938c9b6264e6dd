"""Command-line interface: synth | prepare | train | crossval | sample.

Every run writes machine-readable artifacts (points CSV, segment bundles,
loss-trace CSV, metrics JSON, checkpoints) plus one manifest, and renders
matplotlib figures next to the delimited outputs unless --no-figures is
given.  Exit codes: 0 success, 2 usage/config error, 3 data error,
4 numeric abort.

Heavy imports happen after argument parsing so --threads can pin the BLAS
thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class ConfigError(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modegan",
        description="Travel-mode inference pipeline: synthetic corpora, "
                    "segment preparation, CNN/SGAN training, sampling.",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="pin BLAS/OpenMP thread count")
    parser.add_argument("--precision", choices=("f32", "f64"), default="f32",
                        help="float width for model math (default f32)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic points CSV")
    p.add_argument("--config", type=Path, help="synth config JSON")
    p.add_argument("--out", type=Path, required=True, help="output points CSV")
    p.add_argument("--trips", help="override counts, e.g. walk=10,car=20")
    p.add_argument("--duration", help="trip duration range seconds, e.g. 180:600")
    p.add_argument("--noise", type=float, help="GPS noise in meters")

    p = sub.add_parser("prepare", help="points CSV -> segment bundle")
    p.add_argument("--points", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True,
                   help="bundle base path (writes .json + .f32)")
    p.add_argument("--gap-s", type=float, default=180.0)
    p.add_argument("--seg-len", type=int, default=70)
    p.add_argument("--min-points", type=int, default=10)
    p.add_argument("--bearing-rate", choices=("folded", "raw"), default="folded")

    p = sub.add_parser("train", help="train one model on one train/val split")
    p.add_argument("--bundle", type=Path, required=True, help="bundle base path")
    p.add_argument("--model", required=True, choices=list("ABCDE"))
    p.add_argument("--config", type=Path, help="train config JSON")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--label-fraction", type=float)
    p.add_argument("--val-fold", type=int, default=0)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("crossval", help="k-fold cross-validation")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--model", required=True, choices=list("ABCDE"))
    p.add_argument("--config", type=Path)
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--label-fraction", type=float)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-figures", action="store_true")

    p = sub.add_parser("sample", help="draw fake segments from a generator")
    p.add_argument("--checkpoint", type=Path, required=True,
                   help="generator checkpoint base path")
    p.add_argument("--n", type=int, default=32)
    p.add_argument("--out", type=Path, required=True,
                   help="fake bundle base path")
    p.add_argument("--real", type=Path,
                   help="real bundle base for the comparison report")
    p.add_argument("--no-figures", action="store_true")

    return parser


def _load_json(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from None


def _write_manifest(path: Path, command: str, digest: str, seed: int,
                    inputs: dict, outputs: list[str], t0: float) -> None:
    from . import __version__

    manifest = {
        "command": command,
        "config_digest": digest,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "duration_s": round(time.monotonic() - t0, 3),
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _digest_of(obj) -> str:
    import hashlib

    return hashlib.sha256(
        json.dumps(obj, sort_keys=True).encode("utf-8")
    ).hexdigest()[:16]


def _parse_trips(arg: str) -> dict:
    from .corpus import Mode

    out = {}
    for item in arg.split(","):
        if "=" not in item:
            raise ConfigError(f"bad --trips item '{item}' (expected mode=count)")
        name, _, count = item.partition("=")
        try:
            out[Mode[name.strip()]] = int(count)
        except (KeyError, ValueError):
            raise ConfigError(f"bad --trips item '{item}'") from None
    return out


def cmd_synth(args) -> int:
    from .corpus import write_points_csv
    from .synth import SynthConfig, generate_corpus

    t0 = time.monotonic()
    cfg_dict = _load_json(args.config) if args.config else {}
    try:
        config = SynthConfig.from_dict(cfg_dict)
        updates = {}
        if args.trips:
            counts = dict(config.n_trips)
            counts.update(_parse_trips(args.trips))
            updates["n_trips"] = counts
        if args.duration:
            lo, _, hi = args.duration.partition(":")
            updates["duration_s"] = (float(lo), float(hi or lo))
        if args.noise is not None:
            updates["gps_noise_m"] = args.noise
        if args.seed is not None:
            updates["seed"] = args.seed
        if updates:
            import dataclasses

            config = dataclasses.replace(config, **updates)
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None

    trips = generate_corpus(config)
    csv_text = write_points_csv(trips)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(csv_text, encoding="utf-8")
    n_points = sum(len(t.points) for t in trips)
    print(f"synth: wrote {len(trips)} trips / {n_points} points to {args.out}")

    _write_manifest(
        args.out.with_suffix(args.out.suffix + ".manifest.json"), "synth",
        _digest_of(config.to_dict()), config.seed,
        {"config": str(args.config) if args.config else None},
        [str(args.out)], t0,
    )
    return EXIT_OK


def cmd_prepare(args) -> int:
    from .bundle import SegmentBundle, write_bundle
    from .corpus import parse_points_csv, split_trips, trips_to_segments

    t0 = time.monotonic()
    if not args.points.exists():
        raise ConfigError(f"points file not found: {args.points}")
    rows = parse_points_csv(args.points.read_bytes())
    trips = split_trips(rows, gap_s=args.gap_s)
    segments = trips_to_segments(
        trips, seg_len=args.seg_len, min_points=args.min_points,
        fold_bearing=(args.bearing_rate == "folded"),
    )
    if not segments:
        print("prepare: no segments survived (input too short?)",
              file=sys.stderr)
        return EXIT_DATA
    bundle = SegmentBundle.from_segments(segments)
    json_path, blob_path = write_bundle(args.out, bundle)
    n_labeled = int((bundle.labels >= 0).sum())
    print(f"prepare: {len(rows)} points -> {len(trips)} trips -> "
          f"{len(segments)} segments ({n_labeled} labeled) at {args.out}")

    flags = {"gap_s": args.gap_s, "seg_len": args.seg_len,
             "min_points": args.min_points, "bearing_rate": args.bearing_rate}
    _write_manifest(
        Path(str(args.out) + ".manifest.json"), "prepare", _digest_of(flags),
        args.seed if args.seed is not None else 0,
        {"points": str(args.points), **flags},
        [str(json_path), str(blob_path)], t0,
    )
    return EXIT_OK


def _train_config(args) -> "TrainConfig":
    from .train import TrainConfig

    cfg_dict = _load_json(args.config) if args.config else {}
    cfg_dict["model"] = args.model
    for attr, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("label_fraction", "label_fraction")):
        value = getattr(args, attr, None)
        if value is not None:
            cfg_dict[key] = value
    if getattr(args, "k", None) is not None:
        cfg_dict["k_folds"] = args.k
    if args.seed is not None:
        cfg_dict["seed"] = args.seed
    try:
        return TrainConfig.from_dict(cfg_dict)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def cmd_train(args) -> int:
    from . import report
    from .bundle import read_bundle
    from .corpus import assign_folds
    from .layers import save_checkpoint
    from .train import train_model

    t0 = time.monotonic()
    config = _train_config(args)
    bundle = read_bundle(args.bundle)
    try:
        folds = assign_folds(bundle.to_segments(), k=config.k_folds,
                             seed=config.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= args.val_fold < config.k_folds:
        raise ConfigError(f"--val-fold must be in [0, {config.k_folds})")

    try:
        result = train_model(config, bundle, folds, args.val_fold)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    meta = {
        "model": config.model,
        "val_fold": args.val_fold,
        "config": config.to_dict(),
        "norm_stats": result.norm_stats.to_dict(),
        "rng_state": result.rng_state,
    }
    for name, net in result.networks.items():
        scalars = result.adam_scalars.get(name, result.adam_scalars)
        jp, bp = save_checkpoint(out / name, {name: net},
                                 adam_scalars=scalars, meta=meta)
        outputs += [str(jp), str(bp)]
    trace_path = out / "loss_trace.csv"
    result.trace.write_csv(trace_path)
    metrics_path = out / "metrics.json"
    metrics_path.write_text(result.metrics.to_json(), encoding="utf-8")
    outputs += [str(trace_path), str(metrics_path)]

    if not args.no_figures:
        outputs.append(str(report.render_loss_curves(
            result.trace, out / "loss_curves.png",
            title=f"model {config.model} losses",
        )))
        outputs.append(str(report.render_confusion(
            result.metrics, out / "confusion.png")))

    print(f"train: model {config.model} fold {args.val_fold} "
          f"validation accuracy {result.metrics.accuracy:.4f} -> {out}")
    _write_manifest(out / "manifest.json", "train", config.digest(),
                    config.seed, {"bundle": str(args.bundle),
                                  "val_fold": args.val_fold},
                    outputs, t0)
    return EXIT_OK


def cmd_crossval(args) -> int:
    from . import report
    from .bundle import read_bundle
    from .train import cross_validate

    t0 = time.monotonic()
    config = _train_config(args)
    bundle = read_bundle(args.bundle)

    try:
        per_fold, aggregate = cross_validate(config, bundle)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for m in per_fold:
        path = out / f"fold_{m.fold}.json"
        path.write_text(m.to_json(), encoding="utf-8")
        outputs.append(str(path))
    agg_path = out / "aggregate.json"
    agg_path.write_text(json.dumps(aggregate, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
    outputs.append(str(agg_path))
    if not args.no_figures:
        outputs.append(str(report.render_fold_accuracies(
            aggregate, out / "fold_accuracies.png")))

    print(f"crossval: model {config.model} k={config.k_folds} "
          f"weighted accuracy {aggregate['accuracy_weighted_mean']:.4f} -> {out}")
    _write_manifest(out / "manifest.json", "crossval", config.digest(),
                    config.seed, {"bundle": str(args.bundle)}, outputs, t0)
    return EXIT_OK


def cmd_sample(args) -> int:
    import numpy as np

    from . import models, report
    from .bundle import SegmentBundle, read_bundle, write_bundle
    from .corpus import NormStats
    from .layers import load_checkpoint
    from .nn import Tensor

    t0 = time.monotonic()
    if args.n < 1:
        raise ConfigError("--n must be positive")
    if not args.checkpoint.with_suffix(".json").exists():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    networks, manifest = load_checkpoint(args.checkpoint)
    if "generator" not in networks:
        raise ConfigError(
            f"checkpoint {args.checkpoint} holds no generator network"
        )
    gen = networks["generator"]
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng([seed, 7])
    z = models.sample_noise(rng, args.n)
    fake = gen(Tensor(z), train=False)

    values = fake.data.astype(np.float32)
    stats = None
    meta = manifest.get("meta", {})
    if "norm_stats" in meta:
        stats = NormStats.from_dict(meta["norm_stats"])
    fake_bundle = SegmentBundle(
        values,
        labels=np.full(args.n, -1, dtype=np.int64),
        valid_lens=np.full(args.n, values.shape[1], dtype=np.int64),
        source_trips=[f"fake-{i:05d}" for i in range(args.n)],
        norm_stats=stats,
    )
    json_path, blob_path = write_bundle(args.out, fake_bundle)
    outputs = [str(json_path), str(blob_path)]

    fake_moments = report.channel_moments(values)
    report_data = {
        "n_fake": args.n,
        "fake": {"channels": fake_moments,
                 "speed_autocorr": report.speed_autocorr(values)},
    }
    real_moments = None
    if args.real:
        real = read_bundle(args.real)
        real_values = real.values
        if stats is not None:
            from .train import normalize_arrays

            real_values = normalize_arrays(real.values, real.valid_lens, stats)
        real_moments = report.channel_moments(real_values, real.valid_lens)
        report_data["real"] = {
            "channels": real_moments,
            "speed_autocorr": report.speed_autocorr(real_values,
                                                    real.valid_lens),
        }
    report_path = Path(str(args.out) + "_report.json")
    report_path.write_text(json.dumps(report_data, sort_keys=True, indent=2)
                           + "\n", encoding="utf-8")
    outputs.append(str(report_path))
    if not args.no_figures:
        outputs.append(str(report.render_channel_stats(
            fake_moments, real_moments, Path(str(args.out) + "_channels.png"))))

    print(f"sample: wrote {args.n} generated segments to {args.out}")
    _write_manifest(Path(str(args.out) + ".manifest.json"), "sample",
                    _digest_of({"n": args.n, "seed": seed}), seed,
                    {"checkpoint": str(args.checkpoint),
                     "real": str(args.real) if args.real else None},
                    outputs, t0)
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "crossval": cmd_crossval,
    "sample": cmd_sample,
}


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)

    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    # numpy must not be imported before the thread pins above
    from . import nn

    nn.set_default_dtype("float64" if args.precision == "f64" else "float32")

    from .bundle import BundleFormatError
    from .corpus import CorpusFormatError
    from .geokin import TripTooShortError
    from .nn import NonFiniteError
    from .train import NumericAbortError

    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, CorpusFormatError, BundleFormatError) as exc:
        # malformed inputs count as usage: the operator pointed at the
        # wrong or broken file; exit 3 is for well-formed data that cannot
        # produce output
        print(f"modegan {args.command}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TripTooShortError as exc:
        print(f"modegan {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, NumericAbortError) as exc:
        print(f"modegan {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
