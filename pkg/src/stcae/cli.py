"""Command-line entry point: ``stcae inspect|train|evaluate|synth``.

Settings come from an optional INI file (``--config``) and are overridden by
flags. The fully resolved settings are written to ``config.ini`` in every
output directory.

Exit codes: 0 success, 2 data error, 3 training divergence, 4 checkpoint
mismatch.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys

import numpy as np

from stcae import _backend, dataset, evaluation, training
from stcae.architectures import (
    DISPLAY,
    VARIANTS,
    build_model,
    check_params,
    load_checkpoint,
    normalize_variant,
)
from stcae.errors import CheckpointMismatch, ContractError, DataError, TrainingDiverged
from stcae.synth import SynthConfig, write_dataset
from stcae.windowing import WindowConfig, window_count, windows_for_videos

log = logging.getLogger(__name__)

EXIT_OK, EXIT_DATA, EXIT_DIVERGED, EXIT_CHECKPOINT = 0, 2, 3, 4

# section -> key -> (type, default)
SCHEMA = {
    "run": {
        "data": (str, ""),
        "variant": (str, "dstcae-upsampling"),
        "out": (str, "runs/out"),
        "seed": (int, 0),
        "expect_filled": (bool, False),
    },
    "train": {
        "epochs": (int, 500),
        "batch_size": (int, 0),  # 0: 16 for DSTCAE, 32 for the 2D models
        "augment": (str, "auto"),  # auto | yes | no
        "rho": (float, 0.95),
        "eps": (float, 1e-6),
        "lr": (float, 1.0),
        "checkpoint_interval": (int, 0),
    },
    "evaluate": {
        "checkpoint": (str, ""),
        "score": (str, "cross"),
        "stat": (str, "sigma"),
        "alpha": (int, 8),
        "alpha_sweep": (bool, False),
        "batch_size": (int, 16),
    },
}


def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def resolve_config(path, overrides):
    """Defaults, then the INI file, then non-None flag overrides ``{(section, key): value}``."""
    cfg = {sec: {k: d for k, (_, d) in keys.items()} for sec, keys in SCHEMA.items()}
    if path:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise DataError(f"{path}: cannot read config ({exc})") from exc
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise DataError(f"{path}: unknown section [{sec}]")
            for key, raw in parser.items(sec):
                if key not in SCHEMA[sec]:
                    raise DataError(f"{path}: unknown key {key!r} in [{sec}]")
                typ = SCHEMA[sec][key][0]
                try:
                    cfg[sec][key] = _parse_bool(raw) if typ is bool else typ(raw)
                except ValueError as exc:
                    raise DataError(f"{path}: [{sec}] {key}: {exc}") from exc
    for (sec, key), val in overrides.items():
        if val is not None:
            cfg[sec][key] = val
    return cfg


def write_config(cfg, outdir, sections):
    parser = configparser.ConfigParser()
    for sec in sections:
        parser[sec] = {k: str(v) for k, v in cfg[sec].items()}
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "config.ini"), "w") as fh:
        parser.write(fh)


def _threads(arg):
    if arg is not None:
        return arg
    env = os.environ.get("STCAE_THREADS", "").strip()
    if env:
        try:
            return int(env)
        except ValueError:
            raise ContractError(f"STCAE_THREADS must be an integer, got {env!r}") from None
    return 1


def _require_data(cfg):
    root = cfg["run"]["data"]
    if not root:
        raise DataError("no dataset root given (--data or [run] data)")
    return root


# -- commands ----------------------------------------------------------------------

def cmd_inspect(args):
    manifests, annotations = dataset.load_manifest(args.data)
    wc = WindowConfig(args.window)
    totals = {}
    print(f"{'id':<16} {'role':<10} {'frames':>7} {'windows':>8} {'fall_frames':>11}")
    for m in manifests:
        v = m.num_frames
        d = window_count(v, wc) if v >= wc.length else 0
        falls = int(annotations[m.video_id].frame_labels(v).sum())
        totals[m.role] = totals.get(m.role, 0) + d
        print(f"{m.video_id:<16} {m.role:<10} {v:>7} {d:>8} {falls:>11}")
    for role in dataset.ROLES:
        if role in totals:
            print(f"{role} windows: {totals[role]}")
    print(f"total windows: {sum(totals.values())}")
    return EXIT_OK


def _train_config(cfg, variant):
    t = cfg["train"]
    aug = str(t["augment"]).lower()
    overrides = {
        "epochs": t["epochs"], "seed": cfg["run"]["seed"], "rho": t["rho"], "eps": t["eps"],
        "lr": t["lr"], "checkpoint_interval": t["checkpoint_interval"],
        "batch_size": t["batch_size"] or None,
        "augment": None if aug == "auto" else _parse_bool(aug),
    }
    return training.TrainConfig.for_variant(variant, **overrides)


def cmd_train(args):
    cfg = resolve_config(args.config, {
        ("run", "data"): args.data, ("run", "variant"): args.variant, ("run", "out"): args.out,
        ("run", "seed"): args.seed, ("run", "expect_filled"): args.expect_filled or None,
        ("train", "epochs"): args.epochs, ("train", "batch_size"): args.batch_size,
        ("train", "augment"): args.augment, ("train", "checkpoint_interval"): args.checkpoint_interval,
    })
    variant = normalize_variant(cfg["run"]["variant"])
    cfg["run"]["variant"] = variant
    spec = build_model(variant)
    tcfg = _train_config(cfg, variant)
    if tcfg.augment:
        log.info("horizontal-flip augmentation enabled for %s", DISPLAY[variant])
    videos = dataset.load_split(_require_data(cfg), "train_adl", cfg["run"]["expect_filled"])
    if spec.is_3d:
        sets = windows_for_videos([(v, f) for v, f, _ in videos], WindowConfig(spec.input_shape[0]))
        data = np.concatenate([s.windows for s in sets]) if sets else np.empty((0,))
    else:
        data = np.concatenate([f for _, f, _ in videos]) if videos else np.empty((0,))
    if len(data) == 0:
        raise DataError("no training samples: need train_adl videos of at least one window")
    out = cfg["run"]["out"]
    write_config(cfg, out, ("run", "train"))
    ckpt = os.path.join(out, "checkpoint.stcae")
    log.info("training %s on %d samples for %d epochs", DISPLAY[variant], len(data), tcfg.epochs)
    _, history = training.fit(spec, data, tcfg, checkpoint_path=ckpt)
    training.write_loss_csv(history, os.path.join(out, "loss.csv"))
    print(f"checkpoint: {ckpt}")
    print(f"final loss: {history[-1]:.6g}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = resolve_config(args.config, {
        ("run", "data"): args.data, ("run", "variant"): args.variant, ("run", "out"): args.out,
        ("run", "expect_filled"): args.expect_filled or None,
        ("evaluate", "checkpoint"): args.checkpoint, ("evaluate", "score"): args.score,
        ("evaluate", "stat"): args.stat, ("evaluate", "alpha"): args.alpha,
        ("evaluate", "alpha_sweep"): args.alpha_sweep or None,
    })
    e = cfg["evaluate"]
    if not e["checkpoint"]:
        raise DataError("no checkpoint given (--checkpoint or [evaluate] checkpoint)")
    params = load_checkpoint(e["checkpoint"])
    # an explicit variant must agree with the checkpoint; otherwise adopt it
    explicit = args.variant is not None or (args.config and _config_has(args.config, "run", "variant"))
    variant = normalize_variant(cfg["run"]["variant"]) if explicit else params.variant
    cfg["run"]["variant"] = variant
    spec = build_model(variant)
    check_params(spec, params)

    score, stat = e["score"].lower(), e["stat"].lower()
    if score not in ("cross", "within"):
        raise ContractError(f"--score must be cross or within, got {score!r}")
    if stat not in ("mu", "sigma"):
        raise ContractError(f"--stat must be mu or sigma, got {stat!r}")
    if score == "within" and not spec.is_3d:
        raise ContractError("within-context anomaly score can only be calculated for the DSTCAE variants")

    videos = dataset.load_split(_require_data(cfg), "test_fall", cfg["run"]["expect_filled"])
    T = spec.input_shape[0] if spec.is_3d else 1
    kept = [(v, f, y) for v, f, y in videos if len(f) >= T]
    for v, f, _ in videos:
        if len(f) < T:
            log.warning("skipping video %s: %d frames < window length %d", v, len(f), T)
    if not kept:
        raise DataError("no test_fall videos to evaluate")

    out = cfg["run"]["out"]
    write_config(cfg, out, ("run", "evaluate"))
    bs = e["batch_size"]
    name = DISPLAY[variant]
    if score == "cross":
        kind = f"c_{stat}" if spec.is_3d else "frame"
        reports = [evaluation.evaluate_cross_context(spec, params, kept, kind, bs, name)]
    elif e["alpha_sweep"]:
        reports = evaluation.alpha_sweep(spec, params, kept, f"w_{stat}", bs, name)
    else:
        reports = [evaluation.evaluate_within_context(spec, params, kept, f"w_{stat}", e["alpha"], bs, name)]
    for rep in reports:
        paths = evaluation.emit_report(rep, out)
        alpha = f" alpha={rep.alpha}" if rep.alpha is not None else ""
        print(f"{name} {rep.score_kind}{alpha}: mean AUC {rep.mean_auc:.4f} "
              f"(std {rep.std_auc:.4f}, {len(rep.per_video)} videos) -> {paths['summary']}")
    return EXIT_OK


def _config_has(path, sec, key):
    parser = configparser.ConfigParser()
    parser.read(path)
    return parser.has_option(sec, key)


def cmd_synth(args):
    cfg = SynthConfig(seed=args.seed, n_train=args.n_train, n_test=args.n_test,
                      train_frames=args.train_frames, test_frames=args.test_frames)
    counts = write_dataset(args.out, cfg)
    print(f"wrote {len(counts)} videos ({sum(counts.values())} frames) to {args.out}")
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="stcae", description="Spatio-temporal autoencoder fall detection.")
    p.add_argument("--threads", type=int, default=None,
                   help="kernel worker threads (default: $STCAE_THREADS or 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("inspect", help="per-video frame and window counts")
    s.add_argument("data", help="dataset root")
    s.add_argument("--window", type=int, default=8, help="window length T")
    s.set_defaults(func=cmd_inspect)

    def common(sp):
        sp.add_argument("--config", help="INI settings file")
        sp.add_argument("--data", help="dataset root")
        sp.add_argument("--variant", choices=VARIANTS)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--expect-filled", action="store_true",
                        help="warn on frames with more than 5%% zero pixels")

    s = sub.add_parser("train", help="train a variant on the train_adl videos")
    common(s)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--augment", choices=("auto", "yes", "no"))
    s.add_argument("--checkpoint-interval", type=int, help="also save every N epochs")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="per-video ROC AUC on the test_fall videos")
    common(s)
    s.add_argument("--checkpoint")
    s.add_argument("--score", choices=("cross", "within"))
    s.add_argument("--stat", choices=("mu", "sigma"))
    s.add_argument("--alpha", type=int)
    s.add_argument("--alpha-sweep", action="store_true", help="within-context reports for alpha = 1..T")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="write the seeded synthetic fall dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    d = SynthConfig()
    s.add_argument("--n-train", type=int, default=d.n_train)
    s.add_argument("--n-test", type=int, default=d.n_test)
    s.add_argument("--train-frames", type=int, default=d.train_frames)
    s.add_argument("--test-frames", type=int, default=d.test_frames)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    log.setLevel(logging.INFO)
    try:
        _backend.set_threads(_threads(args.threads))
        return args.func(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDiverged as exc:
        where = f" at epoch {exc.epoch}" if exc.epoch is not None else ""
        print(f"error: training diverged{where}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointMismatch as exc:
        print(f"error: checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (ContractError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
