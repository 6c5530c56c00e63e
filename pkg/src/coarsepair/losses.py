"""Loss terms for translation training on coarsely aligned pairs.

All losses operate on channels-last images (h, w, c) as torch tensors in
[-1, 1] and are differentiable w.r.t. the generated image. The distinctive
terms are:

* a window-searched L1 that, per pixel, compares the generated value against
  the best-matching target pixel inside a small rectangle, absorbing small
  camera-pose shifts;
* its masked variant that restricts both the compared pixels and the search
  candidates to the joint background of the pair; and
* a patch-contrastive term that pulls same-location patch features of the
  generated and target images together against other locations of the same
  target, which tolerates stochastic appearance changes that no pixel-space
  window can absorb.

Masks follow the masking module convention: boolean, True = background.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
import torch

from .errors import DegenerateInputError, InvalidInputError
from .masking import downsample_mask

GAN_MODES = ("unpaired", "conditional", "paired")
GAN_FORMS = ("cross-entropy", "least-squares")


@dataclass(frozen=True)
class WindowSpec:
    """Half-extents of the rectangular search window; k_h = k_w = 0 disables it."""

    k_h: int = 3
    k_w: int = 3

    def __post_init__(self):
        if self.k_h < 0 or self.k_w < 0:
            raise InvalidInputError(f"window extents must be >= 0, got {self}")


@dataclass(frozen=True)
class NCEConfig:
    temperature: float = 0.07
    layers: int = 3
    patches_per_layer: int = 64
    normalize_features: bool = True

    def __post_init__(self):
        if self.temperature <= 0:
            raise InvalidInputError(f"temperature must be positive, got {self.temperature}")
        if self.layers < 1 or self.patches_per_layer < 1:
            raise InvalidInputError(f"layers and patches_per_layer must be >= 1, got {self}")


@dataclass(frozen=True)
class ObjectiveWeights:
    """Weights and discriminator regime of the combined objective."""

    lambda_l1: float = 10.0
    lambda_nce: float = 1.0
    gan_mode: str = "unpaired"
    gan_form: str = "least-squares"

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_nce < 0:
            raise InvalidInputError(f"weights must be non-negative, got {self}")
        if self.gan_mode not in GAN_MODES:
            raise InvalidInputError(f"gan_mode must be one of {GAN_MODES}, got {self.gan_mode!r}")
        if self.gan_form not in GAN_FORMS:
            raise InvalidInputError(f"gan_form must be one of {GAN_FORMS}, got {self.gan_form!r}")


def _as_hwc(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x)
    if t.ndim != 3:
        raise InvalidInputError(f"{name} must be (h, w, c), got shape {tuple(t.shape)}")
    return t


def _as_bool_mask(mask, shape: tuple[int, int]) -> torch.Tensor:
    m = torch.as_tensor(np.asarray(mask))
    if m.dtype != torch.bool:
        raise InvalidInputError(f"mask must be boolean, got dtype {m.dtype}")
    if tuple(m.shape) != shape:
        raise InvalidInputError(f"mask shape {tuple(m.shape)} != image shape {shape}")
    return m


def l1_plain(gen, target) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    gen = _as_hwc(gen, "gen")
    target = _as_hwc(target, "target")
    if gen.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(target.shape)}")
    return (gen - target).abs().mean()


def window_indices(i: int, j: int, spec: WindowSpec, shape: tuple[int, int]) -> list[tuple[int, int]]:
    """In-bounds coordinates within the rectangle around (i, j), row-major.

    The window is clipped at image borders and always contains (i, j).
    """
    h, w = shape
    if not (0 <= i < h and 0 <= j < w):
        raise InvalidInputError(f"({i}, {j}) outside shape {shape}")
    return [
        (a, b)
        for a in range(max(0, i - spec.k_h), min(h, i + spec.k_h + 1))
        for b in range(max(0, j - spec.k_w), min(w, j + spec.k_w + 1))
    ]


def _window_min_map(
    gen: torch.Tensor, target: torch.Tensor, spec: WindowSpec, candidate_bg: torch.Tensor | None
) -> torch.Tensor:
    """Per-pixel min over the window of channel-summed absolute differences.

    Inputs are (..., h, w, c) with matching leading batch dims (candidate_bg
    (..., h, w)). The target is padded with +inf, so window positions outside
    the image and, when candidate_bg is given, at foreground positions never
    win the min (a pixel with no admissible candidate comes back +inf).
    Candidates are laid out row-major in window coordinates and torch.min
    takes the first minimal index, so argmin ties break row-major, which
    fixes where the subgradient routes.
    """
    *lead, h, w, c = gen.shape
    kh, kw = spec.k_h, spec.k_w
    gen_b = gen.reshape(-1, h, w, c)
    tgt_b = target.reshape(-1, h, w, c)
    if candidate_bg is not None:
        bg_b = candidate_bg.reshape(-1, h, w)
        tgt_b = torch.where(bg_b.unsqueeze(-1), tgt_b, torch.tensor(float("inf"), dtype=tgt_b.dtype))
    if kh == 0 and kw == 0:
        values = (gen_b - tgt_b).abs().sum(dim=-1)
    else:
        padded = torch.nn.functional.pad(tgt_b, (0, 0, kw, kw, kh, kh), value=float("inf"))
        windows = padded.unfold(1, 2 * kh + 1, 1).unfold(2, 2 * kw + 1, 1)
        # windows: (n, h, w, c, 2kh+1, 2kw+1); broadcast gen over the window dims
        diff = (windows - gen_b.unsqueeze(-1).unsqueeze(-1)).abs().sum(dim=3)
        values, _ = diff.reshape(-1, h, w, (2 * kh + 1) * (2 * kw + 1)).min(dim=-1)
    return values.reshape(*lead, h, w)


def misalign_map(gen, target, spec: WindowSpec) -> torch.Tensor:
    """Per-pixel best-in-window channel-summed absolute difference, (h, w)."""
    gen = _as_hwc(gen, "gen")
    target = _as_hwc(target, "target")
    if gen.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(target.shape)}")
    return _window_min_map(gen, target, spec, candidate_bg=None)


def l1_misalign(gen, target, spec: WindowSpec) -> torch.Tensor:
    """Window-searched L1: mean over the h*w pixels of the per-pixel minima.

    Channels are compared jointly: the minimizing window position is chosen
    by channel-summed absolute difference and that single correspondence
    accrues the pixel's contribution.
    """
    return misalign_map(gen, target, spec).mean()


def l1_star(gen, target, mask, spec: WindowSpec) -> torch.Tensor:
    """Masked window-searched L1 over the joint background.

    Compared pixels and window candidates are both restricted to background.
    Background pixels whose window holds no background candidate are skipped
    and leave the normalizer, which is otherwise the background cardinality.
    """
    gen = _as_hwc(gen, "gen")
    target = _as_hwc(target, "target")
    if gen.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(target.shape)}")
    bg = _as_bool_mask(mask, (gen.shape[0], gen.shape[1]))
    if not bool(bg.any()):
        raise DegenerateInputError("mask has no background pixels")
    values = _window_min_map(gen, target, spec, candidate_bg=bg)
    usable = bg & torch.isfinite(values)
    if not bool(usable.any()):
        raise DegenerateInputError("no background pixel has a background window candidate")
    return values[usable].sum() / usable.sum()


def l1_misalign_batch(gen: torch.Tensor, target: torch.Tensor, spec: WindowSpec) -> torch.Tensor:
    """l1_misalign over a (n, h, w, c) batch; returns per-image values (n,)."""
    if gen.ndim != 4 or gen.shape != target.shape:
        raise InvalidInputError(f"need matching (n, h, w, c) batches, got {tuple(gen.shape)}")
    return _window_min_map(gen, target, spec, candidate_bg=None).mean(dim=(-2, -1))


def l1_star_batch(
    gen: torch.Tensor, target: torch.Tensor, masks: torch.Tensor, spec: WindowSpec
) -> torch.Tensor:
    """l1_star over a (n, h, w, c) batch with (n, h, w) masks; per-image values."""
    if gen.ndim != 4 or gen.shape != target.shape:
        raise InvalidInputError(f"need matching (n, h, w, c) batches, got {tuple(gen.shape)}")
    if masks.dtype != torch.bool or tuple(masks.shape) != tuple(gen.shape[:3]):
        raise InvalidInputError("masks must be boolean (n, h, w)")
    if not bool(masks.any(dim=-1).any(dim=-1).all()):
        raise DegenerateInputError("a mask in the batch has no background pixels")
    values = _window_min_map(gen, target, spec, candidate_bg=masks)
    usable = masks & torch.isfinite(values)
    counts = usable.sum(dim=(-2, -1))
    if not bool((counts > 0).all()):
        raise DegenerateInputError("an image has no background pixel with a usable window")
    sums = torch.where(usable, values, values.new_zeros(())).sum(dim=(-2, -1))
    return sums / counts


def nce_cross_entropy(query, positive, negatives: Sequence, temperature: float) -> torch.Tensor:
    """Contrastive cross-entropy of a query against one positive and negatives.

    Equals -log softmax of query.positive/t among {query.negative/t} logits.
    """
    if temperature <= 0:
        raise InvalidInputError(f"temperature must be positive, got {temperature}")
    q = torch.as_tensor(query)
    p = torch.as_tensor(positive)
    if len(negatives) == 0:
        raise InvalidInputError("negatives must be non-empty")
    negs = torch.stack([torch.as_tensor(n) for n in negatives])
    if q.shape != p.shape or negs.shape[1:] != q.shape:
        raise InvalidInputError("query, positive and negatives must share one dimension")
    logits = torch.cat([(q * p).sum().reshape(1), negs @ q]) / temperature
    return torch.logsumexp(logits, dim=0) - logits[0]


def sample_background_locations(
    mask_grid: np.ndarray, count: int, generator: torch.Generator | None = None
) -> torch.Tensor:
    """Sample up to `count` distinct flat indices of background cells."""
    flat = torch.as_tensor(np.asarray(mask_grid, dtype=bool).reshape(-1))
    idx = torch.nonzero(flat, as_tuple=False).reshape(-1)
    if idx.numel() < 2:
        raise DegenerateInputError(
            f"need >= 2 background feature locations, found {idx.numel()}"
        )
    take = min(count, idx.numel())
    perm = torch.randperm(idx.numel(), generator=generator)[:take]
    return idx[perm.sort().values]


def nce_from_feature_maps(
    feats_gen: Sequence[torch.Tensor],
    feats_tgt: Sequence[torch.Tensor],
    factors: Sequence[int],
    mask,
    cfg: NCEConfig,
    keep_fraction: float = 1.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Patch-contrastive loss given per-layer (h_l, w_l, d) feature maps.

    For each layer, background feature locations are sampled; each
    generated-image feature is scored against the same-location target
    feature (positive) and the other sampled locations of the same target
    (negatives). Per layer the terms are averaged over sampled locations,
    then layers are summed. Target-side features act as fixed keys (detached);
    gradients flow through the generated-image side.
    """
    if cfg.layers > len(factors):
        raise InvalidInputError(
            f"config asks for {cfg.layers} layers, extractor taps {len(factors)}"
        )
    bg = np.asarray(mask, dtype=bool)
    total = feats_gen[0].new_zeros(())
    for l in range(cfg.layers):
        grid = downsample_mask(bg, factors[l], keep_fraction)
        locs = sample_background_locations(grid, cfg.patches_per_layer, generator)
        d = feats_gen[l].shape[-1]
        q = feats_gen[l].reshape(-1, d)[locs]
        k = feats_tgt[l].reshape(-1, d)[locs].detach()
        if cfg.normalize_features:
            q = torch.nn.functional.normalize(q, dim=1)
            k = torch.nn.functional.normalize(k, dim=1)
        logits = (q @ k.T) / cfg.temperature
        loss_l = (torch.logsumexp(logits, dim=1) - logits.diagonal()).mean()
        total = total + loss_l
    return total


def patchnce_star(
    gen,
    target,
    extractor,
    mask,
    cfg: NCEConfig,
    keep_fraction: float = 1.0,
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Masked patch-contrastive loss between generated and paired target images.

    `extractor` must provide feature_maps(image) -> list of (h_l, w_l, d)
    tensors and a downsample_factors tuple aligned with them; the shared
    sampling and scoring rules live in nce_from_feature_maps.
    """
    gen = _as_hwc(gen, "gen")
    target = _as_hwc(target, "target")
    if gen.shape != target.shape:
        raise InvalidInputError(f"shape mismatch: {tuple(gen.shape)} vs {tuple(target.shape)}")
    return nce_from_feature_maps(
        extractor.feature_maps(gen),
        extractor.feature_maps(target),
        tuple(extractor.downsample_factors),
        mask,
        cfg,
        keep_fraction=keep_fraction,
        generator=generator,
    )


def gan_loss_d(d_real, d_fake, form: str) -> torch.Tensor:
    """Discriminator objective over prediction maps.

    cross-entropy form returns log D(real) + log(1 - D(fake)), the quantity D
    *ascends* (predictions must be probabilities in (0, 1)); least-squares
    form returns (D(real) - 1)^2 + D(fake)^2, the penalty D *descends*.
    Both reduce by mean over each map.
    """
    real = torch.as_tensor(d_real)
    fake = torch.as_tensor(d_fake)
    _check_predictions(real, fake, form=form)
    if form == "cross-entropy":
        return torch.log(real).mean() + torch.log1p(-fake).mean()
    return ((real - 1.0) ** 2).mean() + (fake**2).mean()


def gan_loss_g(d_fake, form: str) -> torch.Tensor:
    """Generator loss: drive D(fake) toward the real label (minimized)."""
    fake = torch.as_tensor(d_fake)
    _check_predictions(fake, form=form)
    if form == "cross-entropy":
        return -torch.log(fake).mean()
    return ((fake - 1.0) ** 2).mean()


def _check_predictions(*maps: torch.Tensor, form: str) -> None:
    if form not in GAN_FORMS:
        raise InvalidInputError(f"gan form must be one of {GAN_FORMS}, got {form!r}")
    for m in maps:
        if not torch.isfinite(m).all():
            raise InvalidInputError("prediction map contains non-finite values")
        if form == "cross-entropy" and (m.min() <= 0 or m.max() >= 1):
            raise InvalidInputError("cross-entropy form needs probabilities strictly in (0, 1)")


class DiscriminatorBatch(NamedTuple):
    """What the discriminator sees: real-side input, fake-side input, conditioning."""

    real: torch.Tensor
    fake: torch.Tensor
    conditioning: torch.Tensor | None


def discriminator_batch(
    mode: str,
    real_a,
    real_b,
    real_b_prime,
    gen_out,
) -> DiscriminatorBatch:
    """Assemble discriminator inputs for one feeding regime (channels-last).

    unpaired: real side is an independent target batch real_b_prime;
    paired: real side is the paired target batch real_b;
    conditional: both sides are channel-concatenated with the source real_a.
    """
    if mode not in GAN_MODES:
        raise InvalidInputError(f"gan_mode must be one of {GAN_MODES}, got {mode!r}")
    real_a = torch.as_tensor(real_a)
    real_b = torch.as_tensor(real_b)
    gen_out = torch.as_tensor(gen_out)
    if real_a.shape != real_b.shape or real_a.shape != gen_out.shape:
        raise InvalidInputError("batches must be shape-consistent")
    if mode == "conditional":
        return DiscriminatorBatch(
            real=torch.cat([real_a, real_b], dim=-1),
            fake=torch.cat([real_a, gen_out], dim=-1),
            conditioning=real_a,
        )
    if mode == "paired":
        return DiscriminatorBatch(real=real_b, fake=gen_out, conditioning=None)
    if real_b_prime is None:
        raise InvalidInputError("unpaired mode requires an independent real batch")
    real_b_prime = torch.as_tensor(real_b_prime)
    if real_b_prime.shape != real_b.shape:
        raise InvalidInputError("independent real batch must match the paired batch shape")
    return DiscriminatorBatch(real=real_b_prime, fake=gen_out, conditioning=None)


def combined_objective(gan_g, l1_term, nce_term, weights: ObjectiveWeights) -> torch.Tensor:
    """Full generator-side training objective: gan + l1 and contrastive terms."""
    total = (
        torch.as_tensor(gan_g)
        + weights.lambda_l1 * torch.as_tensor(l1_term)
        + weights.lambda_nce * torch.as_tensor(nce_term)
    )
    return total
