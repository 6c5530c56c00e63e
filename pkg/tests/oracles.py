"""Independent reference implementations used to check the package.

Everything here is deliberately naive (double loops, direct formulas,
scipy where it provides an independent route) and stays decoupled from the
implementations under test.
"""

import numpy as np
import scipy.linalg
import torch


def oracle_l1_misalign(gen: np.ndarray, target: np.ndarray, k_h: int, k_w: int) -> float:
    """Direct double-loop window-searched L1, mean over pixels."""
    h, w, _ = gen.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            best = np.inf
            for a in range(max(0, i - k_h), min(h, i + k_h + 1)):
                for b in range(max(0, j - k_w), min(w, j + k_w + 1)):
                    d = float(np.abs(gen[i, j] - target[a, b]).sum())
                    if d < best:
                        best = d
            total += best
    return total / (h * w)


def oracle_l1_star(
    gen: np.ndarray, target: np.ndarray, mask: np.ndarray, k_h: int, k_w: int
) -> float:
    """Direct double-loop masked variant; skips pixels with no candidates."""
    h, w, _ = gen.shape
    total, count = 0.0, 0
    for i in range(h):
        for j in range(w):
            if not mask[i, j]:
                continue
            best = np.inf
            for a in range(max(0, i - k_h), min(h, i + k_h + 1)):
                for b in range(max(0, j - k_w), min(w, j + k_w + 1)):
                    if not mask[a, b]:
                        continue
                    d = float(np.abs(gen[i, j] - target[a, b]).sum())
                    if d < best:
                        best = d
            if np.isfinite(best):
                total += best
                count += 1
    if count == 0:
        raise ValueError("no usable background pixel")
    return total / count


def oracle_nearest_pairs(src_positions, tgt_positions, max_distance):
    """Exhaustive nearest-neighbor pairing with earliest-index tie-breaking."""
    pairs = []
    for i, p in enumerate(src_positions):
        best_j, best_d = None, np.inf
        for j, q in enumerate(tgt_positions):
            d = float(np.hypot(p[0] - q[0], p[1] - q[1]))
            if d < best_d:
                best_j, best_d = j, d
        if best_d <= max_distance:
            pairs.append((i, best_j, best_d))
    return pairs


def oracle_frechet(mu1, cov1, mu2, cov2) -> float:
    """Direct formula with scipy's general matrix square root."""
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    cov1, cov2 = np.atleast_2d(cov1), np.atleast_2d(cov2)
    diff = mu1 - mu2
    covmean = scipy.linalg.sqrtm(cov1 @ cov2)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    return float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(covmean))


def finite_difference_gradient(fn, x: torch.Tensor, step: float = 1e-5) -> torch.Tensor:
    """Central finite differences of a scalar function at x (float64)."""
    assert x.dtype == torch.float64
    grad = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.numel()):
        orig = flat[idx].item()
        flat[idx] = orig + step
        hi = float(fn(x))
        flat[idx] = orig - step
        lo = float(fn(x))
        flat[idx] = orig
        gflat[idx] = (hi - lo) / (2.0 * step)
    return grad


def relative_gradient_error(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    denom = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
    return (analytic - numeric).norm().item() / denom
