"""Translation quality metrics at desk scale.

Fréchet distance between Gaussian fits of embedded image sets (lower is
better; the embedder is a fixed-seed random conv net rather than a pretrained
backbone, sufficient for relative comparisons), masked PSNR against the
synthetic clean ground truth, and retrieval-based localization error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import imgio
from .errors import IntegrityError, InvalidInputError, DegenerateInputError
from .models import RandomConvEmbedder
from .pairing import PoseLog
from .synthdata import SOURCE_TRAVERSAL, TARGET_TRAVERSAL, SynthDataset

REPORT_TAG = "# metrics-report v1"
PSNR_CAP_DB = 99.0


@dataclass(frozen=True)
class FeatureStats:
    """Empirical mean and unbiased covariance of a set of embeddings."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.covariance, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise InvalidInputError(f"covariance shape {cov.shape} != ({d}, {d})")
        if self.count < 2:
            raise InvalidInputError(f"need >= 2 samples, got {self.count}")
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise InvalidInputError("covariance is not symmetric")


def stats_from_embeddings(embeddings: np.ndarray) -> FeatureStats:
    emb = np.asarray(embeddings, dtype=np.float64)
    if emb.ndim == 1:
        emb = emb[:, None]
    if emb.shape[0] < 2:
        raise InvalidInputError(f"need >= 2 embeddings, got {emb.shape[0]}")
    mean = emb.mean(axis=0)
    cov = np.cov(emb, rowvar=False)
    cov = np.atleast_2d(cov)
    return FeatureStats(mean=mean, covariance=cov, count=emb.shape[0])


def feature_stats(images, embedder: RandomConvEmbedder) -> FeatureStats:
    """Embed an (n, h, w, 3) image set and fit mean and covariance."""
    arr = np.asarray(images, dtype=np.float32)
    if arr.ndim != 4 or arr.shape[0] < 2:
        raise InvalidInputError(f"need an (n>=2, h, w, 3) image set, got {arr.shape}")
    return stats_from_embeddings(embedder.embed(arr))


def _sqrt_eigvals_psd(mat: np.ndarray) -> np.ndarray:
    """Eigenvalues of a symmetric PSD matrix, clipped at 0, square-rooted."""
    vals = np.linalg.eigvalsh((mat + mat.T) / 2.0)
    return np.sqrt(np.clip(vals, 0.0, None))


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.sqrt(np.clip(vals, 0.0, None))
    return (vecs * vals) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Fréchet distance between the Gaussians N(a) and N(b).

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2), with
    matrix square roots via symmetric eigendecomposition and negative
    eigenvalues clipped at 0. The symmetrized product form keeps every root
    real even for rank-deficient covariances.
    """
    if a.mean.shape != b.mean.shape:
        raise InvalidInputError(
            f"dimension mismatch: {a.mean.shape[0]} vs {b.mean.shape[0]}"
        )
    diff = a.mean - b.mean
    root_a = _sqrtm_psd(a.covariance)
    inner = root_a @ b.covariance @ root_a
    tr_geo = float(_sqrt_eigvals_psd(inner).sum())
    value = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * tr_geo)
    return max(value, 0.0)


def masked_psnr(pred, clean_target, mask) -> float:
    """PSNR in dB over background pixels, peak-to-peak range 2 for [-1, 1] images.

    Capped at 99 dB; exact matches (MSE below 1e-12) return the cap.
    """
    pred = np.asarray(pred, dtype=np.float64)
    clean = np.asarray(clean_target, dtype=np.float64)
    if pred.shape != clean.shape:
        raise InvalidInputError(f"shape mismatch: {pred.shape} vs {clean.shape}")
    bg = np.asarray(mask, dtype=bool)
    if bg.shape != pred.shape[:2]:
        raise InvalidInputError(f"mask shape {bg.shape} != image shape {pred.shape[:2]}")
    if not bg.any():
        raise DegenerateInputError("mask has no background pixels")
    err = (pred - clean)[bg]
    mse = float((err**2).mean())
    if mse < 1e-12:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(4.0 / mse), PSNR_CAP_DB)


@dataclass
class LocalizationResult:
    errors: np.ndarray  # per-query loc-err in meters
    match_indices: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.errors.mean())

    @property
    def median(self) -> float:
        return float(np.median(self.errors))


def localize(
    query_images,
    query_poses,
    library_images,
    library_poses,
    embedder: RandomConvEmbedder,
) -> LocalizationResult:
    """Retrieve each query's most cosine-similar library image; report the
    Euclidean distance between the query's true pose and the match's pose."""
    lib = np.asarray(library_images, dtype=np.float32)
    qry = np.asarray(query_images, dtype=np.float32)
    if lib.ndim != 4 or lib.shape[0] < 1:
        raise InvalidInputError("library must be a non-empty (n, h, w, 3) set")
    lib_poses = np.asarray(library_poses, dtype=np.float64)
    qry_poses = np.asarray(query_poses, dtype=np.float64)
    if lib_poses.shape != (lib.shape[0], 2):
        raise InvalidInputError("library poses must align with library images")
    if qry_poses.shape != (qry.shape[0], 2):
        raise InvalidInputError("query poses must align with query images")

    def unit(e):
        return e / np.maximum(np.linalg.norm(e, axis=1, keepdims=True), 1e-12)

    lib_emb = unit(embedder.embed(lib).astype(np.float64))
    qry_emb = unit(embedder.embed(qry).astype(np.float64))
    sims = qry_emb @ lib_emb.T
    matches = np.argmax(sims, axis=1)
    errors = np.linalg.norm(qry_poses - lib_poses[matches], axis=1)
    return LocalizationResult(errors=errors, match_indices=matches)


# ---------------------------------------------------------------------------
# Directory-level evaluation and the metrics report file
# ---------------------------------------------------------------------------


def load_image_dir(path: str | Path) -> tuple[list[str], np.ndarray]:
    """All PNGs of a directory, sorted by name; returns (frame ids, images)."""
    path = Path(path)
    files = sorted(path.glob("*.png"))
    if not files:
        raise InvalidInputError(f"no PNG files in {path}")
    ids = [f.stem for f in files]
    return ids, np.stack([imgio.load_image(f) for f in files])


@dataclass
class MetricsReport:
    meta: dict[str, str]
    fid: dict[str, float]
    masked_psnr: dict[str, float]
    loc_err: dict[str, float]

    def blocks(self) -> dict[str, dict]:
        return {
            "meta": self.meta,
            "fid": self.fid,
            "masked_psnr": self.masked_psnr,
            "loc_err": self.loc_err,
        }

    def write(self, path: str | Path) -> None:
        lines = [REPORT_TAG]
        for name, block in self.blocks().items():
            lines.append(f"[{name}]")
            for key, value in block.items():
                lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
        Path(path).write_text("".join(line + "\n" for line in lines))

    @classmethod
    def read(cls, path: str | Path) -> "MetricsReport":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0] != REPORT_TAG:
            raise IntegrityError(f"{path} is not a {REPORT_TAG!r} file")
        blocks: dict[str, dict] = {"meta": {}, "fid": {}, "masked_psnr": {}, "loc_err": {}}
        section = None
        for line in lines[1:]:
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1]
            elif line and section in blocks:
                key, _, value = line.partition("=")
                key, value = key.strip(), value.strip()
                if section == "meta":
                    blocks[section][key] = value
                else:
                    blocks[section][key] = float(value)
        return cls(
            meta=blocks["meta"],
            fid=blocks["fid"],
            masked_psnr=blocks["masked_psnr"],
            loc_err=blocks["loc_err"],
        )


def _poses_for(log: PoseLog, frame_ids: list[str]) -> np.ndarray:
    index = {fid: i for i, fid in enumerate(log.frame_ids)}
    try:
        rows = [index[fid] for fid in frame_ids]
    except KeyError as exc:
        raise InvalidInputError(f"frame {exc} has no pose in traversal {log.traversal_id}") from exc
    return log.positions[rows]


def evaluate_translations(
    pred_dir: str | Path,
    dataset: SynthDataset,
    embedder: RandomConvEmbedder | None = None,
) -> MetricsReport:
    """Score a directory of translated frames against a synthetic dataset.

    FID compares translated frames with all benign frames; masked PSNR scores
    each frame against its clean ground truth on the source-background mask;
    loc-err retrieves translated queries from the benign library.
    """
    embedder = embedder or RandomConvEmbedder()
    pred_ids, pred_images = load_image_dir(pred_dir)
    benign_ids, benign_images = load_image_dir(dataset.root / "images" / TARGET_TRAVERSAL)

    fid = frechet_distance(
        feature_stats(pred_images, embedder), feature_stats(benign_images, embedder)
    )

    psnrs = []
    for fid_name, img in zip(pred_ids, pred_images):
        clean = dataset.load_clean(fid_name)
        bg = dataset.load_mask(SOURCE_TRAVERSAL, fid_name)
        psnrs.append(masked_psnr(img, clean, bg))
    psnrs_arr = np.asarray(psnrs)

    src_log = dataset.pose_log(SOURCE_TRAVERSAL)
    tgt_log = dataset.pose_log(TARGET_TRAVERSAL)
    loc = localize(
        pred_images,
        _poses_for(src_log, pred_ids),
        benign_images,
        _poses_for(tgt_log, benign_ids),
        embedder,
    )

    return MetricsReport(
        meta={
            "dataset_hash": dataset.dataset_hash(),
            "embedder_seed": str(embedder.seed),
            "embed_dim": str(embedder.dim),
            "pred_count": str(len(pred_ids)),
            "real_count": str(len(benign_ids)),
        },
        fid={"value": float(fid)},
        masked_psnr={"mean": float(psnrs_arr.mean()), "median": float(np.median(psnrs_arr))},
        loc_err={"mean": loc.mean, "median": loc.median},
    )


def translate_directory(generator, in_dir: str | Path, out_dir: str | Path) -> list[str]:
    """Translate every PNG in in_dir with the generator; mirrors frame names."""
    import torch

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids, images = load_image_dir(in_dir)
    with torch.no_grad():
        for fid, img in zip(ids, images):
            translated = generator.translate(img).numpy()
            imgio.save_image(out / f"{fid}.png", translated)
    return ids
