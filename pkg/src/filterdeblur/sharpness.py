"""No-reference sharpness metric Q and the bounded reference index J."""

import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_image, check_same_shape
from .structure import StructureTensor, eigen


@dataclass(frozen=True)
class QConfig:
    patch_size: int = 8
    tau: float = 0.10
    scale: float = 64.0

    def __post_init__(self):
        if int(self.patch_size) != self.patch_size or self.patch_size < 2:
            raise ValueError(f"patch_size must be an integer >= 2, got {self.patch_size!r}")
        if not 0 <= self.tau < 1:
            raise ValueError(f"tau must lie in [0, 1), got {self.tau!r}")
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale!r}")


@dataclass(frozen=True)
class SharpnessReport:
    q_original: float
    q_degraded: float
    q_restored: float
    v: float
    j: float
    well_behaved: bool


def tile_singular_values(image, patch_size):
    """Singular values ``(s1, s2)`` of each non-overlapping tile's gradient matrix.

    Partial tiles on the right and bottom edges are dropped.
    """
    p = patch_size
    h, w = (image.shape[0] // p) * p, (image.shape[1] // p) * p
    tiles = image[:h, :w].reshape(h // p, p, w // p, p).swapaxes(1, 2).reshape(-1, p, p)
    gy, gx = np.gradient(tiles, axis=(-2, -1))
    t = StructureTensor(
        gxx=np.sum(gx * gx, axis=(-2, -1)),
        gxy=np.sum(gx * gy, axis=(-2, -1)),
        gyy=np.sum(gy * gy, axis=(-2, -1)),
    )
    lam1, lam2, _ = eigen(t)
    return np.sqrt(lam1), np.sqrt(lam2)


def metric_q(image, config=None):
    """Scaled mean over tiles of ``s1 * (s1 - s2) / (s1 + s2)`` for anisotropic tiles."""
    config = config or QConfig()
    image = check_image(image, min_size=config.patch_size)
    s1, s2 = tile_singular_values(image, config.patch_size)
    total = s1 + s2
    coherence = np.divide(s1 - s2, total, out=np.zeros_like(total), where=total > 0)
    local = np.where(coherence > config.tau, s1 * coherence, 0.0)
    return float(config.scale * local.sum() / local.size)


def deviation_v(q_restored, q_original, q_degraded):
    """Relative distance of the restoration from the original in Q-space.

    Returns ``math.inf`` when the restoration scores exactly like the
    degraded image but differs from the original.
    """
    num = q_restored - q_original
    den = q_restored - q_degraded
    if num == 0:
        return 0.0
    if den == 0:
        return math.inf
    return abs(num / den)


def index_j(v):
    if v == math.inf:
        return 0.0
    if v < 0:
        raise ValueError(f"deviation must be non-negative, got {v!r}")
    return 1.0 / (1.0 + v)


def sharpness_report(original, degraded, restored, config=None):
    original = check_image(original, "original")
    degraded = check_image(degraded, "degraded")
    restored = check_image(restored, "restored")
    check_same_shape(original, degraded, ("original", "degraded"))
    check_same_shape(original, restored, ("original", "restored"))
    q_i = metric_q(original, config)
    q_g = metric_q(degraded, config)
    q_r = metric_q(restored, config)
    v = deviation_v(q_r, q_i, q_g)
    lo, hi = min(q_i, q_g), max(q_i, q_g)
    return SharpnessReport(q_i, q_g, q_r, v, index_j(v), lo <= q_r <= hi)
