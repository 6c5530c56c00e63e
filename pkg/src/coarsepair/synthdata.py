"""Synthetic coarsely-aligned image pairs with exact ground truth.

Each scene is a procedural textured background observed twice: once in the
benign domain (identity colors) and once in the adverse domain (channel
gains/biases, gamma, noise). The three misalignment factors of coarse pairs
are modeled explicitly and independently controllable:

* foreground change: independent sprites pasted into each image, with exact
  masks (and noisy instance proposals for threshold studies);
* camera-pose shift: an integer translation of the adverse background with
  zero fill;
* stochastic appearance: low-frequency multiplicative luminance blobs on the
  adverse side (shadow/tree-sway analog).

`clean/{frame}.png` stores the bare background, i.e. the exact ground truth a
perfect adverse-to-benign translator should output, and the color map is
analytically invertible so tests can use `invert_adverse` as an oracle
translator. Generation is deterministic per (seed, scene index), so parallel
and serial generation agree byte for byte.

Directory layout:
    images/{traversal}/{frame}.png   masks/{traversal}/{frame}.png
    proposals/{traversal}/{frame}.txt (+ region PNGs)
    poses/{traversal}.csv            clean/{frame}.png          manifest
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio, masking, pairing
from .errors import ConfigError, IntegrityError, InvalidInputError
from .masking import InstanceProposals, Region

SOURCE_TRAVERSAL = "adverse"
TARGET_TRAVERSAL = "benign"
MANIFEST_NAME = "manifest"
_MANIFEST_TAG = "# synth-dataset v1"

# Sprite proposals carry high confidences, background decoys low ones, so a
# 0.5 acceptance threshold reproduces near-exact masks while higher ones miss
# sprites and lower ones eat background.
_SPRITE_CONF = (0.55, 0.95)
_DECOY_CONF = (0.05, 0.45)
_DECOY_COUNT = (0, 2)
_SPRITE_CLASSES = ("car", "pedestrian", "cyclist", "truck", "bus")


@dataclass(frozen=True)
class AdverseTransform:
    """Deterministic per-channel color map v -> gain * v**gamma + bias on [0, 1],
    plus additive Gaussian pixel noise applied only at generation time."""

    gains: tuple[float, float, float] = (0.45, 0.50, 0.65)
    biases: tuple[float, float, float] = (0.02, 0.03, 0.08)
    gamma: float = 1.3
    noise_std: float = 0.01

    def __post_init__(self):
        if self.gamma <= 0:
            raise ConfigError(f"gamma must be positive, got {self.gamma}")
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")

    @classmethod
    def identity(cls) -> "AdverseTransform":
        return cls(gains=(1.0, 1.0, 1.0), biases=(0.0, 0.0, 0.0), gamma=1.0, noise_std=0.0)


@dataclass(frozen=True)
class SynthConfig:
    image_size: tuple[int, int] = (48, 48)
    n_scenes: int = 250
    shift_max: int = 2
    sprite_count_range: tuple[int, int] = (1, 3)
    jitter_amplitude: float = 0.15
    adverse: AdverseTransform = field(default_factory=AdverseTransform)
    route_spacing: float = 2.0
    gps_noise_std: float = 0.3
    seed: int = 0

    def __post_init__(self):
        h, w = self.image_size
        if h < 8 or w < 8 or self.n_scenes < 1:
            raise ConfigError(f"bad size/scene count in {self}")
        if self.shift_max < 0:
            raise ConfigError(f"shift_max must be >= 0, got {self.shift_max}")
        lo, hi = self.sprite_count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"bad sprite_count_range {self.sprite_count_range}")
        if not 0.0 <= self.jitter_amplitude <= 1.0:
            raise ConfigError(f"jitter_amplitude must be in [0, 1], got {self.jitter_amplitude}")
        if self.route_spacing <= 0 or self.gps_noise_std < 0:
            raise ConfigError(f"bad route parameters in {self}")


@dataclass
class SynthPairRecord:
    frame_id: str
    source_image: np.ndarray  # signed (h, w, 3)
    target_image: np.ndarray
    clean_aligned_target: np.ndarray
    source_mask: np.ndarray  # bool (h, w), True = background
    target_mask: np.ndarray
    source_pose: np.ndarray  # (2,) meters
    target_pose: np.ndarray
    shift: tuple[int, int]  # (dy, dx) applied to the adverse background
    source_proposals: InstanceProposals | None = None
    target_proposals: InstanceProposals | None = None


# ---------------------------------------------------------------------------
# Color map
# ---------------------------------------------------------------------------


def apply_adverse(image, transform: AdverseTransform) -> np.ndarray:
    """Deterministic adverse color map on a signed (h, w, 3) image (no noise)."""
    img = np.asarray(image, dtype=np.float64)
    unit = (img + 1.0) / 2.0
    gains = np.asarray(transform.gains)
    biases = np.asarray(transform.biases)
    out = gains * np.power(np.maximum(unit, 0.0), transform.gamma) + biases
    return (out * 2.0 - 1.0).astype(img.dtype if img.dtype.kind == "f" else np.float64)


def invert_adverse(image, transform: AdverseTransform) -> np.ndarray:
    """Exact inverse of the deterministic color map (noise excluded).

    The pre-gamma base is clamped at 0 so out-of-gamut values (shifted-in
    zero padding, noise) cannot produce NaNs.
    """
    if any(g == 0 for g in transform.gains):
        raise ConfigError("adverse transform with a zero gain is not invertible")
    img = np.asarray(image, dtype=np.float64)
    unit = (img + 1.0) / 2.0
    gains = np.asarray(transform.gains)
    biases = np.asarray(transform.biases)
    base = np.maximum((unit - biases) / gains, 0.0)
    out = np.power(base, 1.0 / transform.gamma)
    return (out * 2.0 - 1.0).astype(img.dtype if img.dtype.kind == "f" else np.float64)


def apply_integer_shift(image, dy: int, dx: int, fill: float = 0.0) -> np.ndarray:
    """Translate content by (dy, dx) pixels with constant fill (unit-space)."""
    img = np.asarray(image)
    out = np.full_like(img, fill)
    h, w = img.shape[:2]
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = img[ys_src, xs_src]
    return out


# ---------------------------------------------------------------------------
# Scene synthesis (unit [0, 1] space internally)
# ---------------------------------------------------------------------------


def _resize_bilinear(a: np.ndarray, h: int, w: int) -> np.ndarray:
    ys = np.linspace(0.0, a.shape[0] - 1.0, h)
    xs = np.linspace(0.0, a.shape[1] - 1.0, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, a.shape[0] - 1)
    x1 = np.minimum(x0 + 1, a.shape[1] - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    return (
        a[np.ix_(y0, x0)] * (1 - wy) * (1 - wx)
        + a[np.ix_(y1, x0)] * wy * (1 - wx)
        + a[np.ix_(y0, x1)] * (1 - wy) * wx
        + a[np.ix_(y1, x1)] * wy * wx
    )


def _value_noise(rng: np.random.Generator, h: int, w: int, cell: int) -> np.ndarray:
    gh = max(2, h // cell + 2)
    gw = max(2, w // cell + 2)
    return _resize_bilinear(rng.random((gh, gw)), h, w)


def make_background(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Multi-octave textured background with a road-like band, unit space.

    Values stay inside [0.1, 0.9] so the adverse color map never clips, and
    the finest octave keeps pixel-level contrast high enough that misaligned
    comparisons are visibly penalized.
    """
    octaves = [(16, 0.35), (8, 0.30), (4, 0.20), (2, 0.15)]
    lum = np.zeros((h, w))
    for cell, weight in octaves:
        lum += weight * _value_noise(rng, h, w, cell)
    lum = (lum - lum.min()) / max(lum.max() - lum.min(), 1e-9)
    tint = 0.6 + 0.4 * rng.random(3)
    img = lum[:, :, None] * tint[None, None, :]
    # road band: darker horizontal strip with bright edge lines
    band_h = max(3, h // 6)
    top = int(rng.integers(h // 4, 3 * h // 4 - band_h))
    img[top : top + band_h] = img[top : top + band_h] * 0.35 + 0.18
    img[top] = 0.85
    img[top + band_h - 1] = 0.85
    grain = rng.random((h, w, 3)) * 0.06 - 0.03
    img = np.clip(img + grain, 0.0, 1.0)
    return 0.1 + 0.8 * img


def _jitter_field(rng: np.random.Generator, h: int, w: int, amplitude: float) -> np.ndarray:
    if amplitude == 0.0:
        return np.ones((h, w))
    blob = _value_noise(rng, h, w, max(8, h // 4)) * 2.0 - 1.0
    return 1.0 + amplitude * blob


def _draw_sprites(
    img: np.ndarray, rng: np.random.Generator, count: int
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Paste `count` solid shapes fully inside the image; returns their bitmaps."""
    h, w = img.shape[:2]
    out = img.copy()
    bitmaps = []
    for _ in range(count):
        size = int(rng.integers(max(4, h // 8), max(5, h // 4)))
        y = int(rng.integers(1, h - size - 1))
        x = int(rng.integers(1, w - size - 1))
        color = rng.random(3)
        kind = int(rng.integers(0, 3))
        yy, xx = np.mgrid[0:size, 0:size]
        if kind == 0:
            shape = np.ones((size, size), dtype=bool)
        elif kind == 1:
            c = (size - 1) / 2.0
            shape = (yy - c) ** 2 + (xx - c) ** 2 <= c**2
        else:
            shape = xx <= yy
        bitmap = np.zeros((h, w), dtype=bool)
        bitmap[y : y + size, x : x + size] = shape
        out[bitmap] = color
        bitmaps.append(bitmap)
    return out, bitmaps


def _decoy_regions(rng: np.random.Generator, h: int, w: int) -> list[np.ndarray]:
    bitmaps = []
    for _ in range(int(rng.integers(_DECOY_COUNT[0], _DECOY_COUNT[1] + 1))):
        size = int(rng.integers(max(4, h // 8), max(5, h // 5)))
        y = int(rng.integers(0, h - size))
        x = int(rng.integers(0, w - size))
        bitmap = np.zeros((h, w), dtype=bool)
        bitmap[y : y + size, x : x + size] = True
        bitmaps.append(bitmap)
    return bitmaps


def _proposals(
    rng: np.random.Generator, sprite_bitmaps: list[np.ndarray], h: int, w: int
) -> InstanceProposals:
    regions = []
    for bm in sprite_bitmaps:
        conf = float(rng.uniform(*_SPRITE_CONF))
        label = _SPRITE_CLASSES[int(rng.integers(0, len(_SPRITE_CLASSES)))]
        regions.append(Region(bitmap=bm, confidence=conf, class_label=label))
    for bm in _decoy_regions(rng, h, w):
        conf = float(rng.uniform(*_DECOY_CONF))
        label = _SPRITE_CLASSES[int(rng.integers(0, len(_SPRITE_CLASSES)))]
        regions.append(Region(bitmap=bm, confidence=conf, class_label=label))
    return InstanceProposals(regions=tuple(regions), shape=(h, w))


def generate_scene(cfg: SynthConfig, index: int) -> SynthPairRecord:
    """Render one scene deterministically from (cfg.seed, index)."""
    h, w = cfg.image_size
    rng = np.random.default_rng([cfg.seed, index])
    bg = make_background(rng, h, w)

    # benign side: clean background plus its own sprites
    n_tgt = int(rng.integers(cfg.sprite_count_range[0], cfg.sprite_count_range[1] + 1))
    target, tgt_bitmaps = _draw_sprites(bg, rng, n_tgt)
    target_mask = ~np.logical_or.reduce(tgt_bitmaps) if tgt_bitmaps else np.ones((h, w), bool)

    # adverse side: jitter, color map, noise, camera shift, then its sprites
    src = bg * _jitter_field(rng, h, w, cfg.jitter_amplitude)[:, :, None]
    gains = np.asarray(cfg.adverse.gains)
    biases = np.asarray(cfg.adverse.biases)
    src = gains * np.power(np.maximum(src, 0.0), cfg.adverse.gamma) + biases
    if cfg.adverse.noise_std > 0:
        src = src + rng.normal(0.0, cfg.adverse.noise_std, src.shape)
    dy = int(rng.integers(-cfg.shift_max, cfg.shift_max + 1)) if cfg.shift_max else 0
    dx = int(rng.integers(-cfg.shift_max, cfg.shift_max + 1)) if cfg.shift_max else 0
    src = apply_integer_shift(src, dy, dx, fill=0.0)
    n_src = int(rng.integers(cfg.sprite_count_range[0], cfg.sprite_count_range[1] + 1))
    source, src_bitmaps = _draw_sprites(np.clip(src, 0.0, 1.0), rng, n_src)
    source_mask = ~np.logical_or.reduce(src_bitmaps) if src_bitmaps else np.ones((h, w), bool)

    src_props = _proposals(rng, src_bitmaps, h, w)
    tgt_props = _proposals(rng, tgt_bitmaps, h, w)

    x = index * cfg.route_spacing
    src_pose = np.array([x, 0.0]) + rng.normal(0.0, cfg.gps_noise_std, 2)
    tgt_pose = np.array([x, 0.0]) + rng.normal(0.0, cfg.gps_noise_std, 2)

    return SynthPairRecord(
        frame_id=f"f{index:04d}",
        source_image=imgio.unit_to_signed(np.clip(source, 0.0, 1.0)),
        target_image=imgio.unit_to_signed(target),
        clean_aligned_target=imgio.unit_to_signed(bg),
        source_mask=source_mask,
        target_mask=target_mask,
        source_pose=src_pose,
        target_pose=tgt_pose,
        shift=(dy, dx),
        source_proposals=src_props,
        target_proposals=tgt_props,
    )


# ---------------------------------------------------------------------------
# Dataset directory
# ---------------------------------------------------------------------------


def config_items(cfg: SynthConfig) -> dict[str, str]:
    """Resolved config as flat `synth.key` items (the CLI echo format)."""
    out = {}
    for line in _config_lines(cfg):
        key, _, value = line.partition(" = ")
        out[f"synth.{key}"] = value
    return out


def _config_lines(cfg: SynthConfig) -> list[str]:
    return [
        f"image_h = {cfg.image_size[0]}",
        f"image_w = {cfg.image_size[1]}",
        f"n_scenes = {cfg.n_scenes}",
        f"shift_max = {cfg.shift_max}",
        f"sprite_min = {cfg.sprite_count_range[0]}",
        f"sprite_max = {cfg.sprite_count_range[1]}",
        f"jitter_amplitude = {cfg.jitter_amplitude!r}",
        f"gain_r = {cfg.adverse.gains[0]!r}",
        f"gain_g = {cfg.adverse.gains[1]!r}",
        f"gain_b = {cfg.adverse.gains[2]!r}",
        f"bias_r = {cfg.adverse.biases[0]!r}",
        f"bias_g = {cfg.adverse.biases[1]!r}",
        f"bias_b = {cfg.adverse.biases[2]!r}",
        f"gamma = {cfg.adverse.gamma!r}",
        f"noise_std = {cfg.adverse.noise_std!r}",
        f"route_spacing = {cfg.route_spacing!r}",
        f"gps_noise_std = {cfg.gps_noise_std!r}",
        f"seed = {cfg.seed}",
    ]


def _config_from_items(items: dict[str, str]) -> SynthConfig:
    try:
        return SynthConfig(
            image_size=(int(items["image_h"]), int(items["image_w"])),
            n_scenes=int(items["n_scenes"]),
            shift_max=int(items["shift_max"]),
            sprite_count_range=(int(items["sprite_min"]), int(items["sprite_max"])),
            jitter_amplitude=float(items["jitter_amplitude"]),
            adverse=AdverseTransform(
                gains=(float(items["gain_r"]), float(items["gain_g"]), float(items["gain_b"])),
                biases=(float(items["bias_r"]), float(items["bias_g"]), float(items["bias_b"])),
                gamma=float(items["gamma"]),
                noise_std=float(items["noise_std"]),
            ),
            route_spacing=float(items["route_spacing"]),
            gps_noise_std=float(items["gps_noise_std"]),
            seed=int(items["seed"]),
        )
    except KeyError as exc:
        raise IntegrityError(f"dataset manifest missing config key {exc}") from exc


def generate_dataset(cfg: SynthConfig, out_dir: str | Path) -> Path:
    """Write the full dataset directory; byte-identical for identical configs."""
    out = Path(out_dir)
    for sub in ("images", "masks", "proposals"):
        for trav in (SOURCE_TRAVERSAL, TARGET_TRAVERSAL):
            (out / sub / trav).mkdir(parents=True, exist_ok=True)
    (out / "clean").mkdir(parents=True, exist_ok=True)
    (out / "poses").mkdir(parents=True, exist_ok=True)

    src_frames, tgt_frames = [], []
    record_rows = []
    for idx in range(cfg.n_scenes):
        rec = generate_scene(cfg, idx)
        fid = rec.frame_id
        imgio.save_image(out / "images" / SOURCE_TRAVERSAL / f"{fid}.png", rec.source_image)
        imgio.save_image(out / "images" / TARGET_TRAVERSAL / f"{fid}.png", rec.target_image)
        imgio.save_image(out / "clean" / f"{fid}.png", rec.clean_aligned_target)
        imgio.save_mask(out / "masks" / SOURCE_TRAVERSAL / f"{fid}.png", rec.source_mask)
        imgio.save_mask(out / "masks" / TARGET_TRAVERSAL / f"{fid}.png", rec.target_mask)
        masking.write_proposals(
            out / "proposals" / SOURCE_TRAVERSAL / f"{fid}.txt", rec.source_proposals
        )
        masking.write_proposals(
            out / "proposals" / TARGET_TRAVERSAL / f"{fid}.txt", rec.target_proposals
        )
        src_frames.append((fid, rec.source_pose))
        tgt_frames.append((fid, rec.target_pose))
        record_rows.append(
            f"{fid},{rec.shift[0]},{rec.shift[1]},"
            f"{len(rec.source_proposals.regions)},{len(rec.target_proposals.regions)}"
        )

    for trav, frames in ((SOURCE_TRAVERSAL, src_frames), (TARGET_TRAVERSAL, tgt_frames)):
        log = pairing.PoseLog(
            traversal_id=trav,
            frame_ids=tuple(f for f, _ in frames),
            positions=np.array([p for _, p in frames]),
            times=np.arange(len(frames), dtype=np.float64),
        )
        pairing.write_pose_log(out / "poses" / f"{trav}.csv", log)

    lines = [_MANIFEST_TAG, "[config]"]
    lines += _config_lines(cfg)
    lines += ["[records]", "frame,shift_y,shift_x,proposals_source,proposals_target"]
    lines += record_rows
    (out / MANIFEST_NAME).write_text("".join(line + "\n" for line in lines))
    return out


@dataclass
class SynthDataset:
    """Handle to a generated dataset directory."""

    root: Path
    config: SynthConfig
    frame_ids: tuple[str, ...]
    shifts: dict[str, tuple[int, int]]

    @classmethod
    def open(cls, root: str | Path) -> "SynthDataset":
        root = Path(root)
        manifest = root / MANIFEST_NAME
        if not manifest.is_file():
            raise IntegrityError(f"{root} has no dataset manifest")
        lines = manifest.read_text().splitlines()
        if not lines or lines[0] != _MANIFEST_TAG:
            raise IntegrityError(f"{manifest} is not a {_MANIFEST_TAG!r} file")
        section = None
        items: dict[str, str] = {}
        frames: list[str] = []
        shifts: dict[str, tuple[int, int]] = {}
        for line in lines[1:]:
            if line in ("[config]", "[records]"):
                section = line
            elif section == "[config]" and "=" in line:
                key, _, value = line.partition("=")
                items[key.strip()] = value.strip()
            elif section == "[records]" and line and not line.startswith("frame,"):
                fid, dy, dx, *_ = line.split(",")
                frames.append(fid)
                shifts[fid] = (int(dy), int(dx))
        return cls(root=root, config=_config_from_items(items), frame_ids=tuple(frames), shifts=shifts)

    def pose_log(self, traversal: str) -> pairing.PoseLog:
        return pairing.read_pose_log(self.root / "poses" / f"{traversal}.csv")

    def load_image(self, traversal: str, frame_id: str) -> np.ndarray:
        return imgio.load_image(self.root / "images" / traversal / f"{frame_id}.png")

    def load_clean(self, frame_id: str) -> np.ndarray:
        return imgio.load_image(self.root / "clean" / f"{frame_id}.png")

    def load_mask(self, traversal: str, frame_id: str) -> np.ndarray:
        return imgio.load_mask(self.root / "masks" / traversal / f"{frame_id}.png")

    def load_proposals(self, traversal: str, frame_id: str) -> InstanceProposals:
        return masking.read_proposals(
            self.root / "proposals" / traversal / f"{frame_id}.txt",
            shape=self.config.image_size,
        )

    def dataset_hash(self) -> str:
        """Stable digest over the manifest and every file in the directory."""
        digest = hashlib.sha256()
        for path in sorted(self.root.rglob("*")):
            if path.is_file():
                digest.update(str(path.relative_to(self.root)).encode())
                digest.update(hashlib.sha256(path.read_bytes()).digest())
        return digest.hexdigest()[:16]


def oracle_translate(dataset: SynthDataset, image: np.ndarray) -> np.ndarray:
    """Analytic translator: exact inverse of the dataset's adverse color map."""
    return invert_adverse(image, dataset.config.adverse)
