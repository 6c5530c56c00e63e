"""Alternating G/D optimization of the combined objective.

One discriminator update then one generator(+feature-head) update per batch,
Adam with beta1 = 0.5, a constant learning rate for the first block of epochs
and a linear ramp to zero over the second. Every stochastic choice in a run
(shuffling, independent real batches, patch sampling) draws from a generator
reseeded per epoch from (config seed, epoch), so runs are reproducible and a
resumed run continues exactly where an uninterrupted one would be.

The five loss-ablation presets (row1..row5) differ only in loss toggles and
discriminator feeding, never in data or models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import masking, pairing
from .errors import ConfigError, IntegrityError, InvalidInputError, NumericAbortError
from .losses import (
    NCEConfig,
    ObjectiveWeights,
    WindowSpec,
    combined_objective,
    discriminator_batch,
    gan_loss_d,
    gan_loss_g,
    l1_misalign_batch,
    l1_star_batch,
    nce_from_feature_maps,
)
from .models import (
    DiscriminatorSpec,
    ExtractorSpec,
    GeneratorSpec,
    ModelBundle,
    build_models,
    load_checkpoint,
    parameter_count,
    restore_models,
    save_checkpoint,
)
from .synthdata import SOURCE_TRAVERSAL, TARGET_TRAVERSAL, SynthDataset

MANIFEST_TAG = "# run-manifest v1"
CURVE_COLUMNS = ("epoch", "lr", "uGAN_d", "uGAN_g", "l1_star", "nce", "total")


@dataclass(frozen=True)
class LossToggles:
    use_mask: bool = True
    use_misalign: bool = True
    use_nce: bool = True


@dataclass(frozen=True)
class ModelConfig:
    base_channels: int = 32
    downsample_stages: int = 2
    residual_blocks: int = 4
    disc_scales: int = 2
    disc_base_channels: int = 32
    embed_dim: int = 64
    tap_layers: tuple[int, ...] = (0, 1, 2)


@dataclass(frozen=True)
class TrainConfig:
    epochs_constant: int = 50
    epochs_decay: int = 50
    lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    batch_size: int = 4
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    window: WindowSpec = field(default_factory=WindowSpec)
    nce: NCEConfig = field(default_factory=NCEConfig)
    toggles: LossToggles = field(default_factory=LossToggles)
    seed: int = 0
    checkpoint_every: int = 10
    mask_keep_fraction: float = 1.0
    mask_threshold: float | None = None  # None: exact dataset masks; else proposals
    max_distance: float = 5.0
    split_boundary: float = 0.8
    models: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs_constant < 0 or self.epochs_decay < 0 or self.total_epochs < 1:
            raise ConfigError("need at least one epoch")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")

    @property
    def total_epochs(self) -> int:
        return self.epochs_constant + self.epochs_decay


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Learning rate schedule: constant, then linear to zero.

    Defined for 0 <= epoch <= total; the right endpoint (one step past the
    final epoch) is exactly 0.0 so the full ramp is checkable.
    """
    total = cfg.total_epochs
    if not 0 <= epoch <= total:
        raise InvalidInputError(f"epoch {epoch} outside [0, {total}]")
    if epoch < cfg.epochs_constant or cfg.epochs_decay == 0:
        return cfg.lr if epoch < total else 0.0
    return cfg.lr * (total - epoch) / cfg.epochs_decay


@dataclass(frozen=True)
class LossTerms:
    """Scalar loss values of one step or one epoch (batch means)."""

    gan_d: float
    gan_g: float
    l1: float
    nce: float
    total: float


# ---------------------------------------------------------------------------
# Ablation presets: (gan_mode, use_mask, use_misalign, use_nce, label)
# ---------------------------------------------------------------------------

LOSS_PRESETS: dict[str, tuple[str, bool, bool, bool, str]] = {
    "row1": ("conditional", False, False, False, "cGAN + L1"),
    "row2": ("conditional", True, False, False, "cGAN + L1 (+mask)"),
    "row3": ("unpaired", True, False, False, "uGAN + L1 (+mask)"),
    "row4": ("unpaired", True, False, True, "uGAN + L1 (+mask) + NCE (+mask)"),
    "row5": ("unpaired", True, True, True, "uGAN + L1 (+mask + misalignment) + NCE (+mask)"),
}

_PRESET_ALIASES = {
    "cgan+l1": "row1",
    "cgan+l1+mask": "row2",
    "ugan+l1+mask": "row3",
    "ugan+l1+mask+nce": "row4",
    "full": "row5",
}


def apply_preset(cfg: TrainConfig, name: str) -> TrainConfig:
    """Return a config with one ablation row's toggles and GAN feeding applied."""
    key = _PRESET_ALIASES.get(name.lower().replace(" ", ""), name.lower())
    if key not in LOSS_PRESETS:
        raise ConfigError(f"unknown preset {name!r}; know {sorted(LOSS_PRESETS)}")
    gan_mode, use_mask, use_misalign, use_nce, _ = LOSS_PRESETS[key]
    return replace(
        cfg,
        weights=replace(cfg.weights, gan_mode=gan_mode),
        toggles=LossToggles(use_mask=use_mask, use_misalign=use_misalign, use_nce=use_nce),
    )


def preset_label(name: str) -> str:
    key = _PRESET_ALIASES.get(name.lower().replace(" ", ""), name.lower())
    return LOSS_PRESETS[key][4]


# ---------------------------------------------------------------------------
# Flat key-value config files: `section.key = value`, '#' comments.
# ---------------------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    items: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {raw!r}")
        key, _, value = line.partition("=")
        items[key.strip()] = value.strip()
    return items


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def config_to_items(cfg: TrainConfig) -> dict[str, str]:
    return {
        "train.epochs_constant": str(cfg.epochs_constant),
        "train.epochs_decay": str(cfg.epochs_decay),
        "train.lr": repr(cfg.lr),
        "train.adam_beta1": repr(cfg.adam_beta1),
        "train.adam_beta2": repr(cfg.adam_beta2),
        "train.batch_size": str(cfg.batch_size),
        "train.seed": str(cfg.seed),
        "train.checkpoint_every": str(cfg.checkpoint_every),
        "weights.lambda_l1": repr(cfg.weights.lambda_l1),
        "weights.lambda_nce": repr(cfg.weights.lambda_nce),
        "weights.gan_mode": cfg.weights.gan_mode,
        "weights.gan_form": cfg.weights.gan_form,
        "window.k_h": str(cfg.window.k_h),
        "window.k_w": str(cfg.window.k_w),
        "nce.temperature": repr(cfg.nce.temperature),
        "nce.layers": str(cfg.nce.layers),
        "nce.patches_per_layer": str(cfg.nce.patches_per_layer),
        "nce.normalize_features": str(cfg.nce.normalize_features).lower(),
        "loss.use_mask": str(cfg.toggles.use_mask).lower(),
        "loss.use_misalign": str(cfg.toggles.use_misalign).lower(),
        "loss.use_nce": str(cfg.toggles.use_nce).lower(),
        "mask.keep_fraction": repr(cfg.mask_keep_fraction),
        "mask.threshold": "none" if cfg.mask_threshold is None else repr(cfg.mask_threshold),
        "pair.max_distance": repr(cfg.max_distance),
        "pair.split_boundary": repr(cfg.split_boundary),
        "models.base_channels": str(cfg.models.base_channels),
        "models.downsample_stages": str(cfg.models.downsample_stages),
        "models.residual_blocks": str(cfg.models.residual_blocks),
        "models.disc_scales": str(cfg.models.disc_scales),
        "models.disc_base_channels": str(cfg.models.disc_base_channels),
        "models.embed_dim": str(cfg.models.embed_dim),
        "models.tap_layers": ",".join(str(t) for t in cfg.models.tap_layers),
    }


def config_from_items(items: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Build a TrainConfig from flat items over `base` defaults; unknown keys fail."""
    cfg = base if base is not None else TrainConfig()
    known = set(config_to_items(cfg))
    unknown = set(items) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    def get(key, conv, default):
        return conv(items[key]) if key in items else default

    try:
        threshold: float | None
        if "mask.threshold" in items:
            raw = items["mask.threshold"].lower()
            threshold = None if raw in ("none", "") else float(raw)
        else:
            threshold = cfg.mask_threshold
        return TrainConfig(
            epochs_constant=get("train.epochs_constant", int, cfg.epochs_constant),
            epochs_decay=get("train.epochs_decay", int, cfg.epochs_decay),
            lr=get("train.lr", float, cfg.lr),
            adam_beta1=get("train.adam_beta1", float, cfg.adam_beta1),
            adam_beta2=get("train.adam_beta2", float, cfg.adam_beta2),
            batch_size=get("train.batch_size", int, cfg.batch_size),
            seed=get("train.seed", int, cfg.seed),
            checkpoint_every=get("train.checkpoint_every", int, cfg.checkpoint_every),
            weights=ObjectiveWeights(
                lambda_l1=get("weights.lambda_l1", float, cfg.weights.lambda_l1),
                lambda_nce=get("weights.lambda_nce", float, cfg.weights.lambda_nce),
                gan_mode=get("weights.gan_mode", str, cfg.weights.gan_mode),
                gan_form=get("weights.gan_form", str, cfg.weights.gan_form),
            ),
            window=WindowSpec(
                k_h=get("window.k_h", int, cfg.window.k_h),
                k_w=get("window.k_w", int, cfg.window.k_w),
            ),
            nce=NCEConfig(
                temperature=get("nce.temperature", float, cfg.nce.temperature),
                layers=get("nce.layers", int, cfg.nce.layers),
                patches_per_layer=get("nce.patches_per_layer", int, cfg.nce.patches_per_layer),
                normalize_features=get(
                    "nce.normalize_features", _parse_bool, cfg.nce.normalize_features
                ),
            ),
            toggles=LossToggles(
                use_mask=get("loss.use_mask", _parse_bool, cfg.toggles.use_mask),
                use_misalign=get("loss.use_misalign", _parse_bool, cfg.toggles.use_misalign),
                use_nce=get("loss.use_nce", _parse_bool, cfg.toggles.use_nce),
            ),
            mask_keep_fraction=get("mask.keep_fraction", float, cfg.mask_keep_fraction),
            mask_threshold=threshold,
            max_distance=get("pair.max_distance", float, cfg.max_distance),
            split_boundary=get("pair.split_boundary", float, cfg.split_boundary),
            models=ModelConfig(
                base_channels=get("models.base_channels", int, cfg.models.base_channels),
                downsample_stages=get(
                    "models.downsample_stages", int, cfg.models.downsample_stages
                ),
                residual_blocks=get("models.residual_blocks", int, cfg.models.residual_blocks),
                disc_scales=get("models.disc_scales", int, cfg.models.disc_scales),
                disc_base_channels=get(
                    "models.disc_base_channels", int, cfg.models.disc_base_channels
                ),
                embed_dim=get("models.embed_dim", int, cfg.models.embed_dim),
                tap_layers=tuple(
                    int(t) for t in items["models.tap_layers"].split(",")
                )
                if "models.tap_layers" in items
                else cfg.models.tap_layers,
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def load_config(path: str | Path, base: TrainConfig | None = None) -> TrainConfig:
    return config_from_items(parse_config_text(Path(path).read_text()), base=base)


# ---------------------------------------------------------------------------
# Training data assembly
# ---------------------------------------------------------------------------


@dataclass
class TrainingSet:
    """Materialized coarse pairs: signed images, joint background masks."""

    source: np.ndarray  # (n, h, w, 3) float32
    target: np.ndarray  # (n, h, w, 3) float32
    masks: np.ndarray  # (n, h, w) bool, True = background in both frames
    source_frames: list[str]
    target_frames: list[str]

    def __len__(self) -> int:
        return len(self.source_frames)


def _frame_mask(dataset: SynthDataset, traversal: str, frame: str, threshold: float | None):
    if threshold is None:
        return dataset.load_mask(traversal, frame)
    props = dataset.load_proposals(traversal, frame)
    return masking.build_foreground_mask(props, threshold=threshold)


def materialize_pairs(
    dataset: SynthDataset,
    manifest: pairing.CoarsePairManifest,
    mask_threshold: float | None = None,
) -> TrainingSet:
    """Load the images and joint background masks for a pair manifest."""
    src, tgt, msk, sf, tf = [], [], [], [], []
    for p in manifest.pairs:
        src.append(dataset.load_image(SOURCE_TRAVERSAL, p.source_frame))
        tgt.append(dataset.load_image(TARGET_TRAVERSAL, p.target_frame))
        m_src = _frame_mask(dataset, SOURCE_TRAVERSAL, p.source_frame, mask_threshold)
        m_tgt = _frame_mask(dataset, TARGET_TRAVERSAL, p.target_frame, mask_threshold)
        msk.append(masking.joint_background(m_src, m_tgt))
        sf.append(p.source_frame)
        tf.append(p.target_frame)
    if not src:
        raise InvalidInputError("pair manifest is empty")
    return TrainingSet(
        source=np.stack(src).astype(np.float32),
        target=np.stack(tgt).astype(np.float32),
        masks=np.stack(msk),
        source_frames=sf,
        target_frames=tf,
    )


def split_dataset(
    dataset: SynthDataset, cfg: TrainConfig
) -> tuple[pairing.CoarsePairManifest, pairing.CoarsePairManifest]:
    """Pair the dataset's traversals by GPS and split by route location."""
    src_log = dataset.pose_log(SOURCE_TRAVERSAL)
    tgt_log = dataset.pose_log(TARGET_TRAVERSAL)
    manifest = pairing.pair_traversals(src_log, tgt_log, cfg.max_distance)
    return pairing.split_by_location(manifest, src_log, cfg.split_boundary)


# ---------------------------------------------------------------------------
# One optimization step
# ---------------------------------------------------------------------------


def _scale_mean(maps: list[torch.Tensor], fn) -> torch.Tensor:
    vals = [fn(m) for m in maps]
    return torch.stack(vals).mean()


def _to_probs(maps: list[torch.Tensor]) -> list[torch.Tensor]:
    return [torch.sigmoid(m) for m in maps]


def train_step(
    bundle: ModelBundle,
    opt_d: torch.optim.Optimizer,
    opt_g: torch.optim.Optimizer,
    batch: dict,
    cfg: TrainConfig,
    rng: torch.Generator,
    batch_id: str = "?",
) -> LossTerms:
    """One D update then one G+H update on a batch of coarse pairs.

    batch carries channels-last float tensors 'source', 'target',
    'target_independent' and a bool tensor 'mask' (joint background).
    Raises NumericAbortError on any non-finite loss.
    """
    toggles = cfg.toggles
    weights = cfg.weights
    form = weights.gan_form
    src = batch["source"]
    tgt = batch["target"]
    bg = batch["mask"]
    tgt_ind = batch.get("target_independent")

    src_nchw = src.permute(0, 3, 1, 2)
    tgt_nchw = tgt.permute(0, 3, 1, 2)
    fake_nchw = bundle.generator(src_nchw)
    fake = fake_nchw.permute(0, 2, 3, 1)

    # discriminator update
    db = discriminator_batch(weights.gan_mode, src, tgt, tgt_ind, fake.detach())
    d_real_maps = bundle.discriminator(db.real.permute(0, 3, 1, 2))
    d_fake_maps = bundle.discriminator(db.fake.permute(0, 3, 1, 2))
    if form == "cross-entropy":
        d_real_maps, d_fake_maps = _to_probs(d_real_maps), _to_probs(d_fake_maps)
    d_val = torch.stack(
        [gan_loss_d(r, f, form) for r, f in zip(d_real_maps, d_fake_maps)]
    ).mean()
    d_loss = -d_val if form == "cross-entropy" else d_val
    opt_d.zero_grad(set_to_none=True)
    d_loss.backward()
    opt_d.step()

    # generator + feature-head update
    db_g = discriminator_batch(weights.gan_mode, src, tgt, tgt_ind, fake)
    g_maps = bundle.discriminator(db_g.fake.permute(0, 3, 1, 2))
    if form == "cross-entropy":
        g_maps = _to_probs(g_maps)
    g_gan = _scale_mean(g_maps, lambda m: gan_loss_g(m, form))

    window = cfg.window if toggles.use_misalign else WindowSpec(0, 0)
    if weights.lambda_l1 > 0:
        if toggles.use_mask:
            l1_term = l1_star_batch(fake, tgt, bg, window).mean()
        else:
            l1_term = l1_misalign_batch(fake, tgt, window).mean()
    else:
        l1_term = fake.new_zeros(())

    if toggles.use_nce and weights.lambda_nce > 0:
        feats_fake = bundle.extractor.feature_maps_batch(fake_nchw)
        with torch.no_grad():  # target features are detached keys
            feats_tgt = bundle.extractor.feature_maps_batch(tgt_nchw)
        factors = bundle.extractor.downsample_factors
        per_image = []
        masks_np = bg.numpy() if toggles.use_mask else np.ones(bg.shape, dtype=bool)
        for i in range(fake.shape[0]):
            per_image.append(
                nce_from_feature_maps(
                    [f[i] for f in feats_fake],
                    [f[i] for f in feats_tgt],
                    factors,
                    masks_np[i],
                    cfg.nce,
                    keep_fraction=cfg.mask_keep_fraction,
                    generator=rng,
                )
            )
        nce_term = torch.stack(per_image).mean()
    else:
        nce_term = fake.new_zeros(())

    total = combined_objective(g_gan, l1_term, nce_term, weights)
    opt_g.zero_grad(set_to_none=True)
    total.backward()
    opt_g.step()

    terms = LossTerms(
        gan_d=float(d_val.detach()),
        gan_g=float(g_gan.detach()),
        l1=float(l1_term.detach()),
        nce=float(nce_term.detach()),
        total=float(total.detach()),
    )
    for name, value in (
        ("uGAN_d", terms.gan_d),
        ("uGAN_g", terms.gan_g),
        ("l1_star", terms.l1),
        ("nce", terms.nce),
        ("total", terms.total),
    ):
        if not np.isfinite(value):
            raise NumericAbortError(f"non-finite {name} on batch {batch_id}", batch_id=batch_id)
    return terms


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    """Append-only record of a run: resolved config, data hash, loss curves."""

    config_items: dict[str, str]
    dataset_hash: str
    rows: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    wallclock_s: float | None = None

    def add_epoch(self, epoch: int, lr: float, terms: LossTerms) -> None:
        self.rows.append(
            {
                "epoch": epoch,
                "lr": lr,
                "uGAN_d": terms.gan_d,
                "uGAN_g": terms.gan_g,
                "l1_star": terms.l1,
                "nce": terms.nce,
                "total": terms.total,
            }
        )

    def canonical_text(self) -> str:
        """Deterministic content: everything except wall-clock."""
        lines = [MANIFEST_TAG, "[config]"]
        lines += [f"{k} = {v}" for k, v in sorted(self.config_items.items())]
        lines += [f"dataset_hash = {self.dataset_hash}", "[checkpoints]"]
        lines += self.checkpoints
        lines += [f"note: {n}" for n in self.notes]
        lines.append("[curves]")
        lines.append(",".join(CURVE_COLUMNS))
        for row in self.rows:
            lines.append(
                ",".join(
                    [str(row["epoch"])]
                    + [repr(float(row[c])) for c in CURVE_COLUMNS[1:]]
                )
            )
        return "".join(line + "\n" for line in lines)

    def full_text(self) -> str:
        text = self.canonical_text()
        if self.wallclock_s is not None:
            text += f"# wallclock seconds = {self.wallclock_s:.3f}\n"
        return text

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.full_text())

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != MANIFEST_TAG:
            raise IntegrityError(f"{path} is not a {MANIFEST_TAG!r} file")
        manifest = cls(config_items={}, dataset_hash="")
        section = None
        for line in lines[1:]:
            if line.startswith("# wallclock seconds = "):
                manifest.wallclock_s = float(line.rpartition("=")[2])
            elif line in ("[config]", "[checkpoints]", "[curves]"):
                section = line
            elif section == "[config]":
                if line.startswith("dataset_hash = "):
                    manifest.dataset_hash = line.partition("=")[2].strip()
                else:
                    key, _, value = line.partition("=")
                    manifest.config_items[key.strip()] = value.strip()
            elif section == "[checkpoints]":
                if line.startswith("note: "):
                    manifest.notes.append(line[len("note: ") :])
                elif line:
                    manifest.checkpoints.append(line)
            elif section == "[curves]" and line and not line.startswith("epoch,"):
                parts = line.split(",")
                manifest.rows.append(
                    {
                        "epoch": int(parts[0]),
                        **{c: float(v) for c, v in zip(CURVE_COLUMNS[1:], parts[1:])},
                    }
                )
        return manifest


# ---------------------------------------------------------------------------
# Full training run
# ---------------------------------------------------------------------------


def _epoch_generator(seed: int, epoch: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed((seed * 1_000_003 + epoch) % (2**63))
    return g


def run_training(
    train_set: TrainingSet,
    cfg: TrainConfig,
    out_dir: str | Path,
    dataset_hash: str = "",
    resume_from: str | Path | None = None,
) -> RunManifest:
    """Train for the configured epochs; write checkpoints and a run manifest.

    Returns the manifest covering the epochs executed by this invocation.
    """
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    n = len(train_set)
    if n < 1:
        raise InvalidInputError("empty training set")
    if not train_set.masks.any(axis=(1, 2)).all():
        raise InvalidInputError("a training pair has no background pixels")

    mc = cfg.models
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        bundle = restore_models(payload)
        start_epoch = int(payload["epoch"]) + 1
        if start_epoch >= cfg.total_epochs:
            raise InvalidInputError(
                f"checkpoint already at epoch {payload['epoch']}, nothing to resume"
            )
    else:
        bundle = build_models(
            GeneratorSpec(
                base_channels=mc.base_channels,
                downsample_stages=mc.downsample_stages,
                residual_blocks=mc.residual_blocks,
            ),
            DiscriminatorSpec(
                scales=mc.disc_scales,
                base_channels=mc.disc_base_channels,
                conditioning_channels=3 if cfg.weights.gan_mode == "conditional" else 0,
            ),
            ExtractorSpec(tap_layers=mc.tap_layers, embed_dim=mc.embed_dim),
            seed=cfg.seed,
        )
        payload = None
        start_epoch = 0

    opt_g = torch.optim.Adam(
        list(bundle.generator.parameters()) + list(bundle.extractor.head_parameters()),
        lr=cfg.lr,
        betas=(cfg.adam_beta1, cfg.adam_beta2),
    )
    opt_d = torch.optim.Adam(
        bundle.discriminator.parameters(), lr=cfg.lr, betas=(cfg.adam_beta1, cfg.adam_beta2)
    )
    if payload is not None and payload.get("optimizers"):
        opt_g.load_state_dict(payload["optimizers"]["g"])
        opt_d.load_state_dict(payload["optimizers"]["d"])

    manifest = RunManifest(config_items=config_to_items(cfg), dataset_hash=dataset_hash)
    manifest.notes.append(
        f"params generator={parameter_count(bundle.generator)}"
        f" discriminator={parameter_count(bundle.discriminator)}"
        f" extractor_heads={parameter_count(bundle.extractor.heads)}"
    )
    if resume_from is not None:
        manifest.notes.append(f"resumed at epoch {start_epoch}")

    src_t = torch.from_numpy(train_set.source)
    tgt_t = torch.from_numpy(train_set.target)
    msk_t = torch.from_numpy(train_set.masks)

    started = time.monotonic()
    for epoch in range(start_epoch, cfg.total_epochs):
        lr = lr_at(epoch, cfg)
        for group in (*opt_g.param_groups, *opt_d.param_groups):
            group["lr"] = lr
        rng = _epoch_generator(cfg.seed, epoch)
        order = torch.randperm(n, generator=rng)
        independent = torch.randperm(n, generator=rng)
        sums = np.zeros(5)
        batches = 0
        for off in range(0, n, cfg.batch_size):
            idx = order[off : off + cfg.batch_size]
            ind = independent[off : off + cfg.batch_size]
            batch = {
                "source": src_t[idx],
                "target": tgt_t[idx],
                "mask": msk_t[idx],
                "target_independent": tgt_t[ind],
            }
            batch_id = f"epoch{epoch}:step{off // cfg.batch_size}"
            try:
                terms = train_step(bundle, opt_d, opt_g, batch, cfg, rng, batch_id=batch_id)
            except NumericAbortError as exc:
                manifest.notes.append(f"numeric abort on batch {exc.batch_id}")
                manifest.wallclock_s = time.monotonic() - started
                manifest.write(out / "manifest.txt")
                raise
            sums += np.array([terms.gan_d, terms.gan_g, terms.l1, terms.nce, terms.total])
            batches += 1
        mean = sums / max(batches, 1)
        manifest.add_epoch(epoch, lr, LossTerms(*mean))
        last = epoch == cfg.total_epochs - 1
        if last or (cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0):
            name = "final.pt" if last else f"epoch_{epoch:04d}.pt"
            save_checkpoint(
                out / "checkpoints" / name,
                bundle,
                epoch,
                optimizer_states={"g": opt_g.state_dict(), "d": opt_d.state_dict()},
            )
            manifest.checkpoints.append(f"checkpoints/{name}")
    manifest.wallclock_s = time.monotonic() - started
    manifest.write(out / "manifest.txt")
    return manifest
