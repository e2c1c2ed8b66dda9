"""Command-line front end.

Subcommands:

  gen            write a synthetic PGM dataset
  train          train a model from a JSON config
  eval           score a checkpoint on a dataset, write masks + metrics CSV
  analyze        parameter/MAC tables and attention-cost formulas
  dump-features  per-stage mean-over-channels feature heatmaps as PGM

Configs are JSON with a required "model" section and, for training, a
"train" section.  Every key is required except the model toggles, which
default on.  The TECNET_SEED environment variable overrides --seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .attention import cost_acam, cost_msa, cost_swmsa, count_actual_macs, write_mac_report
from .errors import ConfigurationError, UsageError
from .metrics import evaluate_pairs, write_metrics_csv
from .model import (N_STAGES, PRESETS, TecNet, TecNetConfig, count_flops,
                    count_params)
from .synth import FAMILIES, SynthSpec, generate, load_dataset, quantize, write_pgm
from .training import (TrainSchedule, evaluate_dice, load_model,
                       predict_probs, train)

TRAIN_KEYS = ("total_epochs", "batch_size", "lr", "delta",
              "plateau_patience", "plateau_factor", "seed")

# Published full-scale reference points for the Tiny model; printed next to
# the measured numbers by `analyze` for orientation, never asserted.
PUBLISHED_TINY_PARAMS_M = 11.58
PUBLISHED_TINY_GFLOPS = 4.53
PUBLISHED_INPUT = 224


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def load_config(path: str) -> dict:
    """Read a JSON config; parse failures point at file:line:col."""
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    except OSError as e:
        raise UsageError(f"cannot read config {path}: {e.strerror}") from e


def model_config(blob: dict, path: str) -> TecNetConfig:
    if "model" not in blob:
        raise UsageError(f"{path}: config has no \"model\" section")
    return TecNetConfig.from_dict(blob["model"])


def train_schedule(blob: dict, path: str) -> dict:
    if "train" not in blob:
        raise UsageError(f"{path}: config has no \"train\" section")
    section = blob["train"]
    missing = [k for k in TRAIN_KEYS if k not in section]
    if missing:
        raise UsageError(f"{path}: train section missing keys: {missing}")
    unknown = [k for k in section if k not in TRAIN_KEYS]
    if unknown:
        raise UsageError(f"{path}: train section has unknown keys: {unknown}")
    return dict(section)


def resolve_seed(seed: int | None) -> int | None:
    env = os.environ.get("TECNET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"TECNET_SEED must be an integer, got {env!r}")
    return seed


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    seed = resolve_seed(args.seed)
    spec = SynthSpec(seed=seed, count=args.count, size=args.size,
                     family=args.family, gap=args.gap, noise=args.noise,
                     grad_amp=args.grad_amp)
    paths = generate(spec, args.out)
    print(f"wrote {len(paths)} image/mask pairs to {args.out}")
    return 0


def cmd_train(args) -> int:
    blob = load_config(args.config)
    cfg = model_config(blob, args.config)
    section = train_schedule(blob, args.config)
    seed = resolve_seed(args.seed)
    if seed is not None:
        section["seed"] = seed
    schedule = TrainSchedule(steps=args.steps, **section)

    samples = load_dataset(args.data)
    if args.val_data:
        val = load_dataset(args.val_data)
    elif args.val_count > 0:
        if args.val_count >= len(samples):
            raise UsageError(
                f"--val-count {args.val_count} leaves no training samples")
        samples, val = samples[:-args.val_count], samples[-args.val_count:]
    else:
        val = None

    model = TecNet(cfg, seed=schedule.seed)
    total = count_params(cfg)["total"]
    print(f"model {cfg.name}: {total:,} parameters; "
          f"{len(samples)} train / {len(val) if val else 0} val samples")

    def progress(row):
        if row["step"] % max(1, args.log_every) == 0:
            print(f"step {row['step']:>5}  epoch {row['epoch']:>3}  "
                  f"lambda {row['lambda']:.4f}  lr {row['lr']:.2e}  "
                  f"loss {row['loss_total']:.5f}")

    result = train(model, samples, schedule, val_samples=val,
                   out_dir=args.out, progress=progress)
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"loss log:   {result.log_path}")
    print(f"val dice:   {result.summary.get('val_dice'):.4f}")
    return 0


def cmd_eval(args) -> int:
    blob = load_config(args.config)
    cfg = model_config(blob, args.config)
    model = load_model(args.checkpoint, expected_config=cfg.to_dict())
    samples = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)

    pairs = []
    for sample in samples:
        probs = predict_probs(model, sample.image)["y_tec"]
        pred = probs[0] >= args.threshold
        write_pgm(os.path.join(args.out, f"pred_{sample.sample_id}.pgm"),
                  np.where(pred, 255, 0).astype(np.uint8))
        pairs.append((sample.sample_id, pred, sample.mask[0] > 0.5))

    rows = evaluate_pairs(pairs)
    csv_path = os.path.join(args.out, "metrics.csv")
    write_metrics_csv(csv_path, rows)
    mean_di = float(np.mean([r["DI"] for r in rows]))
    print(f"evaluated {len(rows)} samples; mean DI {mean_di:.4f}")
    print(f"metrics: {csv_path}")
    return 0


def _config_for_analyze(args) -> TecNetConfig:
    if args.config:
        return model_config(load_config(args.config), args.config)
    return PRESETS[args.preset]()


def cmd_analyze(args) -> int:
    cfg = _config_for_analyze(args)
    input_size = args.input_size or cfg.input_size

    params = count_params(cfg)
    flops = count_flops(cfg, input_size=input_size)
    print(f"config {cfg.name} (input {input_size}x{input_size})")
    print(f"{'module':<24}{'params':>14}{'MACs':>16}")
    for key in params:
        if key == "total":
            continue
        print(f"{key:<24}{params[key]:>14,}{flops.get(key, 0):>16,}")
    print(f"{'total':<24}{params['total']:>14,}{flops['total']:>16,}")

    if cfg.name == "tiny" and input_size == PUBLISHED_INPUT:
        print(f"\npublished reference at {PUBLISHED_INPUT}x{PUBLISHED_INPUT}: "
              f"{PUBLISHED_TINY_PARAMS_M:.2f} M params, "
              f"{PUBLISHED_TINY_GFLOPS:.2f} GFLOPs")
        print(f"this implementation:          "
              f"{params['total'] / 1e6:.2f} M params, "
              f"{2 * flops['total'] / 1e9:.2f} GFLOPs (2 x MACs)")
        print("(informational; candidate-kernel count and per-branch "
              "projections differ from the published configuration)")

    print("\nattention cost per stage (MACs, window attention vs baselines)")
    print(f"{'stage':<8}{'grid':>6}{'width':>7}{'global':>16}"
          f"{'windowed':>14}{'adaptive':>14}")
    for i in range(N_STAGES):
        g = cfg.stage_grid(i)
        c = cfg.stage_width(i)
        m = min(cfg.window, g)
        print(f"{i:<8}{g:>6}{c:>7}{cost_msa(g, g, c):>16,}"
              f"{cost_swmsa(g, g, c, m):>14,}{cost_acam(g, g, c, m):>14,}")

    if args.mac_report:
        rows = []
        for i in range(N_STAGES):
            g = cfg.stage_grid(i)
            c = cfg.stage_width(i)
            m = min(cfg.window, g)
            rows.extend(count_actual_macs(_attn_probe(cfg, c, m, i), g, g))
        write_mac_report(args.mac_report, rows)
        print(f"\nper-branch MAC report: {args.mac_report}")
    return 0


def _attn_probe(cfg, channels, window, stage):
    from .attention import ACAM, WindowAttention
    rng = np.random.default_rng(0)
    if cfg.use_acam:
        return ACAM(channels, window, heads=cfg.heads[stage], shifted=False,
                    shared_kv=cfg.shared_kv, rng=rng)
    return WindowAttention(channels, window, heads=cfg.heads[stage],
                           shifted=False, rng=rng)


def cmd_dump_features(args) -> int:
    model = load_model(args.checkpoint)
    samples = load_dataset(args.data)
    if not 0 <= args.index < len(samples):
        raise UsageError(f"--index {args.index} out of range "
                         f"(dataset has {len(samples)} samples)")
    sample = samples[args.index]
    collect: dict = {}
    model.forward(sample.image, collect=collect)
    os.makedirs(args.out, exist_ok=True)
    written = 0
    for tag in sorted(collect):
        fmap = collect[tag]
        if fmap.ndim != 3 or "_stage" not in tag:
            continue  # stage maps only; skip collected attention weights
        heat = fmap.mean(axis=0)
        lo, hi = heat.min(), heat.max()
        norm = (heat - lo) / (hi - lo) if hi > lo else np.zeros_like(heat)
        write_pgm(os.path.join(args.out, f"{tag}.pgm"), quantize(norm))
        written += 1
    print(f"wrote {written} stage heatmaps to {args.out}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tecnet",
        description="dual-branch segmentation: data, training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic PGM dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--family", choices=FAMILIES, default="blob-union")
    p.add_argument("--gap", type=float, default=0.6)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--grad-amp", type=float, default=0.2)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=None,
                   help="run exactly N optimizer steps instead of epochs")
    p.add_argument("--seed", type=int, default=None,
                   help="override the seed from the config")
    p.add_argument("--val-data", default=None)
    p.add_argument("--val-count", type=int, default=0,
                   help="hold out the last N samples for validation")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="parameter and MAC accounting")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config")
    group.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--mac-report", default=None,
                   help="write per-branch formula-vs-actual MAC CSV here")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("dump-features",
                       help="write per-stage feature heatmaps as PGM")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_dump_features)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigurationError) as e:
        return _fail(str(e))
    except FileNotFoundError as e:
        return _fail(f"{e.filename}: no such file or directory")


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
