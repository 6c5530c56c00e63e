"""Toy-scale translation models: generator, multi-scale discriminator, and the
patch feature extractor that reuses the generator encoder.

The generator is a single encoder/residual/decoder network standing in for a
full coarse-to-fine scheme. Its encoder (stem plus strided downsample convs)
deliberately carries no normalization layers: normalization mixes whole-image
statistics into every activation, and the patch features tapped off the
encoder must stay strictly local so foreground-restricted image edits cannot
leak into background patch features. Residual blocks and the decoder use
instance norm as usual.

Public image entry points take channels-last (h, w, c) arrays in [-1, 1];
batched (n, c, h, w) tensors are the internal convention.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, IntegrityError, InvalidInputError

CHECKPOINT_FORMAT = "coarsepair-checkpoint-v1"


@dataclass(frozen=True)
class GeneratorSpec:
    base_channels: int = 32
    downsample_stages: int = 2
    residual_blocks: int = 4
    in_channels: int = 3

    def __post_init__(self):
        if self.base_channels < 1 or self.downsample_stages < 1 or self.residual_blocks < 0:
            raise ConfigError(f"bad generator spec {self}")


@dataclass(frozen=True)
class DiscriminatorSpec:
    scales: int = 2
    base_channels: int = 32
    conditioning_channels: int = 0
    in_channels: int = 3

    def __post_init__(self):
        if self.scales < 1 or self.base_channels < 1 or self.conditioning_channels < 0:
            raise ConfigError(f"bad discriminator spec {self}")


@dataclass(frozen=True)
class ExtractorSpec:
    """tap_layers index the encoder stages: 0 = after stem, i = after i-th downsample."""

    tap_layers: tuple[int, ...] = (0, 1, 2)
    embed_dim: int = 64

    def __post_init__(self):
        if len(self.tap_layers) == 0 or self.embed_dim < 1:
            raise ConfigError(f"bad extractor spec {self}")


def image_to_batch(image) -> torch.Tensor:
    """(h, w, c) array -> (1, c, h, w) float tensor."""
    t = torch.as_tensor(np.asarray(image), dtype=torch.float32)
    if t.ndim != 3:
        raise InvalidInputError(f"image must be (h, w, c), got {tuple(t.shape)}")
    return t.permute(2, 0, 1).unsqueeze(0)


def batch_to_image(batch: torch.Tensor) -> torch.Tensor:
    """(1, c, h, w) tensor -> (h, w, c) tensor."""
    return batch.squeeze(0).permute(1, 2, 0)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, 1, 1),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x):
        return x + self.body(x)


class Generator(nn.Module):
    """Encoder -> residual blocks -> decoder, tanh-bounded to [-1, 1]."""

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        c = spec.base_channels
        self.encoder_stages = nn.ModuleList()
        self.encoder_stages.append(
            nn.Sequential(nn.Conv2d(spec.in_channels, c, 3, 1, 1), nn.ReLU(inplace=True))
        )
        for _ in range(spec.downsample_stages):
            self.encoder_stages.append(
                nn.Sequential(nn.Conv2d(c, c * 2, 3, 2, 1), nn.ReLU(inplace=True))
            )
            c *= 2
        self.bottleneck = nn.Sequential(*[ResidualBlock(c) for _ in range(spec.residual_blocks)])
        decoder = []
        for _ in range(spec.downsample_stages):
            decoder += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c, c // 2, 3, 1, 1),
                nn.InstanceNorm2d(c // 2, affine=True),
                nn.ReLU(inplace=True),
            ]
            c //= 2
        decoder += [nn.Conv2d(c, spec.in_channels, 3, 1, 1), nn.Tanh()]
        self.decoder = nn.Sequential(*decoder)

    @property
    def divisor(self) -> int:
        return 2**self.spec.downsample_stages

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise InvalidInputError(f"expected (n, {self.spec.in_channels}, h, w), got {tuple(x.shape)}")
        if x.shape[2] % self.divisor or x.shape[3] % self.divisor:
            raise InvalidInputError(
                f"spatial size {tuple(x.shape[2:])} not divisible by {self.divisor}"
            )

    def encoder_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Activations after the stem and after each downsample stage."""
        self._check_input(x)
        feats = []
        for stage in self.encoder_stages:
            x = stage(x)
            feats.append(x)
        return feats

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = self.encoder_features(x)
        return self.decoder(self.bottleneck(feats[-1]))

    def translate(self, image) -> torch.Tensor:
        """Single-image convenience: (h, w, c) in, (h, w, c) out."""
        return batch_to_image(self.forward(image_to_batch(image)))


class PatchDiscriminator(nn.Module):
    """Small strided-conv classifier emitting a patch prediction map."""

    def __init__(self, in_channels: int, base_channels: int):
        super().__init__()
        c = base_channels
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, c, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, c * 2, 4, 2, 1),
            nn.InstanceNorm2d(c * 2, affine=True),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c * 2, 1, 4, 1, 1),
        )

    def forward(self, x):
        return self.net(x)


class MultiScaleDiscriminator(nn.Module):
    """Independent patch discriminators on progressively half-resolution inputs.

    Scale s consumes the input average-pooled s times; each scale returns its
    own prediction map, spatially smaller than its input.
    """

    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        in_ch = spec.in_channels + spec.conditioning_channels
        self.scale_nets = nn.ModuleList(
            [PatchDiscriminator(in_ch, spec.base_channels) for _ in range(spec.scales)]
        )
        self.downsample = nn.AvgPool2d(3, stride=2, padding=1, count_include_pad=False)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        expected = self.spec.in_channels + self.spec.conditioning_channels
        if x.ndim != 4 or x.shape[1] != expected:
            raise InvalidInputError(f"expected (n, {expected}, h, w), got {tuple(x.shape)}")
        maps = []
        for i, net in enumerate(self.scale_nets):
            maps.append(net(x))
            if i + 1 < len(self.scale_nets):
                x = self.downsample(x)
        return maps


class FeatureExtractor:
    """Patch features: generator encoder taps followed by per-layer 2-layer MLPs.

    Not an nn.Module on purpose: the encoder belongs to the generator and must
    not be re-registered here. Optimize `head_parameters()` alongside the
    generator's parameters.
    """

    def __init__(self, generator: Generator, spec: ExtractorSpec):
        n_stages = len(generator.encoder_stages)
        for t in spec.tap_layers:
            if not 0 <= t < n_stages:
                raise ConfigError(f"tap layer {t} outside encoder stages [0, {n_stages})")
        self.generator = generator
        self.spec = spec
        base = generator.spec.base_channels
        hidden = 2 * spec.embed_dim
        self.heads = nn.ModuleList()
        for t in spec.tap_layers:
            c_in = base * (2**t)
            self.heads.append(
                nn.Sequential(
                    nn.Linear(c_in, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, spec.embed_dim)
                )
            )

    @property
    def downsample_factors(self) -> tuple[int, ...]:
        return tuple(2**t for t in self.spec.tap_layers)

    def head_parameters(self):
        return self.heads.parameters()

    def feature_maps_batch(self, x: torch.Tensor) -> list[torch.Tensor]:
        """(n, c, h, w) images -> per-tap (n, h_l, w_l, d) embeddings."""
        taps = self.generator.encoder_features(x)
        out = []
        for head, t in zip(self.heads, self.spec.tap_layers):
            f = taps[t].permute(0, 2, 3, 1)  # n, h, w, c
            out.append(head(f))
        return out

    def feature_maps(self, image) -> list[torch.Tensor]:
        """(h, w, c) image -> per-tap (h_l, w_l, d) embeddings."""
        return [m.squeeze(0) for m in self.feature_maps_batch(image_to_batch(image))]

    def to(self, *args, **kwargs) -> "FeatureExtractor":
        self.heads.to(*args, **kwargs)
        return self

    def state_dict(self):
        return self.heads.state_dict()

    def load_state_dict(self, state):
        self.heads.load_state_dict(state)


class RandomConvEmbedder(nn.Module):
    """Fixed-seed random conv net with global average pooling.

    Training-free stand-in for a pretrained image backbone: deterministic
    given its seed, good enough for relative distribution comparisons at
    desk scale.
    """

    def __init__(self, seed: int = 0, dim: int = 64, base_channels: int = 32):
        super().__init__()
        self.seed = seed
        self.dim = dim
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.net = nn.Sequential(
                nn.Conv2d(3, base_channels, 3, 2, 1),
                nn.ReLU(inplace=True),
                nn.Conv2d(base_channels, 2 * base_channels, 3, 2, 1),
                nn.ReLU(inplace=True),
                nn.Conv2d(2 * base_channels, dim, 3, 2, 1),
                nn.ReLU(inplace=True),
            )
        for p in self.net.parameters():
            p.requires_grad_(False)

    @torch.no_grad()
    def embed(self, images) -> np.ndarray:
        """(n, h, w, c) or (h, w, c) array -> (n, dim) embeddings."""
        arr = np.asarray(images, dtype=np.float32)
        if arr.ndim == 3:
            arr = arr[None]
        if arr.ndim != 4 or arr.shape[3] != 3:
            raise InvalidInputError(f"expected (n, h, w, 3) images, got {arr.shape}")
        x = torch.from_numpy(arr).permute(0, 3, 1, 2)
        feats = self.net(x)
        return feats.mean(dim=(2, 3)).numpy()


@dataclass
class ModelBundle:
    generator: Generator
    discriminator: MultiScaleDiscriminator
    extractor: FeatureExtractor
    seed: int

    @property
    def specs(self) -> dict:
        return {
            "generator": asdict(self.generator.spec),
            "discriminator": asdict(self.discriminator.spec),
            "extractor": asdict(self.extractor.spec),
        }


def build_models(
    gen_spec: GeneratorSpec,
    disc_spec: DiscriminatorSpec,
    ex_spec: ExtractorSpec,
    seed: int = 0,
) -> ModelBundle:
    """Construct G, D and H with seed-determined initial parameters."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        gen = Generator(gen_spec)
        disc = MultiScaleDiscriminator(disc_spec)
        extractor = FeatureExtractor(gen, ex_spec)
    return ModelBundle(generator=gen, discriminator=disc, extractor=extractor, seed=seed)


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    epoch: int,
    optimizer_states: dict | None = None,
) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "seed": bundle.seed,
        "epoch": epoch,
        "specs": bundle.specs,
        "generator": bundle.generator.state_dict(),
        "discriminator": bundle.discriminator.state_dict(),
        "extractor_heads": bundle.extractor.state_dict(),
        "optimizers": optimizer_states or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> dict:
    """Load and validate a checkpoint payload; raises IntegrityError when corrupt."""
    try:
        payload = torch.load(path, weights_only=True)
    except Exception as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    required = {"seed", "epoch", "specs", "generator", "discriminator", "extractor_heads"}
    missing = required - payload.keys()
    if missing:
        raise IntegrityError(f"{path} is missing checkpoint fields {sorted(missing)}")
    return payload


def restore_models(payload: dict) -> ModelBundle:
    """Rebuild a ModelBundle from a checkpoint payload."""
    specs = payload["specs"]
    bundle = build_models(
        GeneratorSpec(**specs["generator"]),
        DiscriminatorSpec(**specs["discriminator"]),
        ExtractorSpec(tap_layers=tuple(specs["extractor"]["tap_layers"]),
                      embed_dim=specs["extractor"]["embed_dim"]),
        seed=payload["seed"],
    )
    bundle.generator.load_state_dict(payload["generator"])
    bundle.discriminator.load_state_dict(payload["discriminator"])
    bundle.extractor.load_state_dict(payload["extractor_heads"])
    return bundle


def load_generator(path: str | Path) -> Generator:
    return restore_models(load_checkpoint(path)).generator
