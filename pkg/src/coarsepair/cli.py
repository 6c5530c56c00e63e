"""Command-line entry point binding data generation, pairing, training,
translation, evaluation, and ablation sweeps.

Exit codes: 0 success, 1 usage/config error, 2 data or integrity error,
3 numeric abort (non-finite loss). Every run echoes its fully resolved
configuration; `--seed` threads to every stochastic component and defaults
to 0 when omitted.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluation, imgio, pairing, synthdata, training
from .errors import (
    ConfigError,
    IntegrityError,
    InvalidInputError,
    NumericAbortError,
)
from .models import RandomConvEmbedder, load_generator
from .synthdata import SOURCE_TRAVERSAL, AdverseTransform, SynthConfig, SynthDataset

ABLATION_REPORT_TAG = "# ablation-report v1"
WINDOW_SWEEP = (1, 3, 5)
MASK_THRESHOLD_SWEEP = (0.9, 0.7, 0.5, 0.3, 0.1)
GAN_MODE_SWEEP = ("conditional", "paired", "unpaired")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


# ---------------------------------------------------------------------------
# synth config files: flat `synth.key = value` items over defaults
# ---------------------------------------------------------------------------

_SYNTH_KEYS = {
    "synth.image_h",
    "synth.image_w",
    "synth.n_scenes",
    "synth.shift_max",
    "synth.sprite_min",
    "synth.sprite_max",
    "synth.jitter_amplitude",
    "synth.gain_r",
    "synth.gain_g",
    "synth.gain_b",
    "synth.bias_r",
    "synth.bias_g",
    "synth.bias_b",
    "synth.gamma",
    "synth.noise_std",
    "synth.route_spacing",
    "synth.gps_noise_std",
    "synth.seed",
}


def build_synth_config(items: dict[str, str], seed: int | None = None) -> SynthConfig:
    unknown = set(items) - _SYNTH_KEYS
    if unknown:
        raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
    base = SynthConfig()

    def geti(key, default):
        return int(items[key]) if key in items else default

    def getf(key, default):
        return float(items[key]) if key in items else default

    adverse = AdverseTransform(
        gains=(
            getf("synth.gain_r", base.adverse.gains[0]),
            getf("synth.gain_g", base.adverse.gains[1]),
            getf("synth.gain_b", base.adverse.gains[2]),
        ),
        biases=(
            getf("synth.bias_r", base.adverse.biases[0]),
            getf("synth.bias_g", base.adverse.biases[1]),
            getf("synth.bias_b", base.adverse.biases[2]),
        ),
        gamma=getf("synth.gamma", base.adverse.gamma),
        noise_std=getf("synth.noise_std", base.adverse.noise_std),
    )
    cfg = SynthConfig(
        image_size=(geti("synth.image_h", base.image_size[0]), geti("synth.image_w", base.image_size[1])),
        n_scenes=geti("synth.n_scenes", base.n_scenes),
        shift_max=geti("synth.shift_max", base.shift_max),
        sprite_count_range=(
            geti("synth.sprite_min", base.sprite_count_range[0]),
            geti("synth.sprite_max", base.sprite_count_range[1]),
        ),
        jitter_amplitude=getf("synth.jitter_amplitude", base.jitter_amplitude),
        adverse=adverse,
        route_spacing=getf("synth.route_spacing", base.route_spacing),
        gps_noise_std=getf("synth.gps_noise_std", base.gps_noise_std),
        seed=geti("synth.seed", base.seed),
    )
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def _echo_config(items: dict[str, str]) -> None:
    for key in sorted(items):
        print(f"{key} = {items[key]}")


def _load_train_config(args) -> training.TrainConfig:
    cfg = training.TrainConfig()
    if getattr(args, "config", None):
        cfg = training.load_config(args.config, base=cfg)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "epochs_constant", None) is not None:
        cfg = replace(cfg, epochs_constant=args.epochs_constant)
    if getattr(args, "epochs_decay", None) is not None:
        cfg = replace(cfg, epochs_decay=args.epochs_decay)
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    items = training.parse_config_text(Path(args.config).read_text()) if args.config else {}
    cfg = build_synth_config(items, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synthdata.generate_dataset(cfg, out)
    _echo_config(synthdata.config_items(cfg))
    print(f"dataset written to {out}")
    return 0


def cmd_pair(args) -> int:
    source = pairing.read_pose_log(args.source)
    target = pairing.read_pose_log(args.target)
    manifest = pairing.pair_traversals(source, target, args.max_dist)
    pairing.write_manifest(args.out, manifest)
    print(f"paired {len(manifest)} of {len(source)} source frames "
          f"(max_distance = {args.max_dist})")
    return 0


def _train_on_dataset(
    dataset: SynthDataset, cfg: training.TrainConfig, out_dir: Path, resume=None
) -> tuple[training.RunManifest, pairing.CoarsePairManifest]:
    train_pairs, test_pairs = training.split_dataset(dataset, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    pairing.write_manifest(out_dir / "train_pairs.txt", train_pairs)
    pairing.write_manifest(out_dir / "test_pairs.txt", test_pairs)
    train_set = training.materialize_pairs(dataset, train_pairs, cfg.mask_threshold)
    manifest = training.run_training(
        train_set, cfg, out_dir, dataset_hash=dataset.dataset_hash(), resume_from=resume
    )
    return manifest, test_pairs


def cmd_train(args) -> int:
    cfg = _load_train_config(args)
    dataset = SynthDataset.open(args.data)
    _echo_config(training.config_to_items(cfg))
    manifest, _ = _train_on_dataset(dataset, cfg, Path(args.out), resume=args.resume)
    print(f"trained {len(manifest.rows)} epochs; manifest at {Path(args.out) / 'manifest.txt'}")
    return 0


def cmd_translate(args) -> int:
    in_dir = Path(args.in_dir)
    src_dir = in_dir / "images" / SOURCE_TRAVERSAL
    if not src_dir.is_dir():
        src_dir = in_dir
    generator = load_generator(args.checkpoint)
    ids = evaluation.translate_directory(generator, src_dir, args.out)
    print(f"translated {len(ids)} frames into {args.out}")
    return 0


def cmd_eval(args) -> int:
    dataset = SynthDataset.open(args.data)
    embedder = RandomConvEmbedder(seed=args.embedder_seed)
    report = evaluation.evaluate_translations(args.pred, dataset, embedder)
    report.write(args.report)
    for block, values in report.blocks().items():
        for key, value in values.items():
            print(f"{block}.{key} = {value}")
    return 0


def _translate_frames(generator, dataset: SynthDataset, frames: list[str], out_dir: Path) -> None:
    import torch

    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        for fid in frames:
            img = dataset.load_image(SOURCE_TRAVERSAL, fid)
            imgio.save_image(out_dir / f"{fid}.png", generator.translate(img).numpy())


def _ablation_arms(preset: str, base: training.TrainConfig) -> list[tuple[str, str, training.TrainConfig]]:
    """(arm name, label, config) triples for a preset."""
    preset = preset.lower()
    if preset in training.LOSS_PRESETS or preset in ("rows",):
        names = list(training.LOSS_PRESETS) if preset == "rows" else [preset]
        return [(n, training.preset_label(n), training.apply_preset(base, n)) for n in names]
    if preset == "window":
        full = training.apply_preset(base, "row5")
        return [
            (f"k{k}", f"window k = {k}", replace(full, window=training.WindowSpec(k, k)))
            for k in WINDOW_SWEEP
        ]
    if preset == "mask-threshold":
        full = training.apply_preset(base, "row5")
        return [
            (f"t{t}", f"mask threshold {t}", replace(full, mask_threshold=t))
            for t in MASK_THRESHOLD_SWEEP
        ]
    if preset == "gan-mode":
        plain = training.apply_preset(base, "row1")
        return [
            (mode, f"{mode}-GAN + L1", replace(plain, weights=replace(plain.weights, gan_mode=mode)))
            for mode in GAN_MODE_SWEEP
        ]
    raise ConfigError(
        f"unknown preset {preset!r}; know row1..row5, rows, window, mask-threshold, gan-mode"
    )


def cmd_ablate(args) -> int:
    base = _load_train_config(args)
    dataset = SynthDataset.open(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    arms = _ablation_arms(args.preset, base)
    rows = []
    for name, label, cfg in arms:
        arm_dir = out / name
        print(f"== arm {name}: {label}")
        _echo_config(training.config_to_items(cfg))
        _, test_pairs = _train_on_dataset(dataset, cfg, arm_dir / "run")
        generator = load_generator(arm_dir / "run" / "checkpoints" / "final.pt")
        pred_dir = arm_dir / "pred"
        _translate_frames(generator, dataset, test_pairs.source_frames(), pred_dir)
        report = evaluation.evaluate_translations(
            pred_dir, dataset, RandomConvEmbedder(seed=args.embedder_seed)
        )
        report.write(arm_dir / "metrics.txt")
        rows.append(
            {
                "arm": name,
                "label": label,
                "fid": report.fid["value"],
                "masked_psnr_mean": report.masked_psnr["mean"],
                "loc_err_mean": report.loc_err["mean"],
            }
        )
    _write_ablation_report(out / "report.txt", args.preset, dataset, base, rows)
    print(f"ablation report at {out / 'report.txt'}")
    return 0


def _write_ablation_report(path: Path, preset, dataset, cfg, rows) -> None:
    lines = [
        ABLATION_REPORT_TAG,
        "[meta]",
        f"preset = {preset}",
        f"dataset_hash = {dataset.dataset_hash()}",
        f"seed = {cfg.seed}",
        f"epochs = {cfg.total_epochs}",
    ]
    for row in rows:
        lines += [
            f"[arm {row['arm']}]",
            f"label = {row['label']}",
            f"fid = {row['fid']!r}",
            f"masked_psnr_mean = {row['masked_psnr_mean']!r}",
            f"loc_err_mean = {row['loc_err_mean']!r}",
        ]
    lines.append("# arm | fid | masked_psnr_mean | loc_err_mean")
    for row in rows:
        lines.append(
            f"# {row['arm']} | {row['fid']:.4f} | {row['masked_psnr_mean']:.3f}"
            f" | {row['loc_err_mean']:.3f}"
        )
    path.write_text("".join(line + "\n" for line in lines))
    for line in lines:
        if line.startswith("#") and "|" in line:
            print(line)


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="coarsepair", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic coarse-pair dataset")
    p.add_argument("--config", help="flat key-value config file (synth.* keys)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override synth.seed (default 0)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pair", help="pair two pose logs by nearest GPS pose")
    p.add_argument("--source", required=True, help="source traversal pose CSV")
    p.add_argument("--target", required=True, help="target traversal pose CSV")
    p.add_argument("--max-dist", type=float, default=pairing.DEFAULT_MAX_DISTANCE_M)
    p.add_argument("--out", required=True, help="manifest file to write")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("train", help="train a translator on a dataset directory")
    p.add_argument("--config", help="flat key-value training config file")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs-constant", type=int, default=None)
    p.add_argument("--epochs-decay", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate a directory of frames")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="in_dir", required=True, help="dataset dir or PNG dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("eval", help="score translated frames against a dataset")
    p.add_argument("--pred", required=True, help="directory of translated PNGs")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--report", required=True, help="metrics report file to write")
    p.add_argument("--embedder-seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation preset end to end")
    p.add_argument(
        "--preset",
        required=True,
        help="row1..row5, rows, window, mask-threshold, or gan-mode",
    )
    p.add_argument("--config", help="base training config file")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs-constant", type=int, default=None)
    p.add_argument("--epochs-decay", type=int, default=None)
    p.add_argument("--embedder-seed", type=int, default=0)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except (_UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except NumericAbortError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (InvalidInputError, IntegrityError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
