"""Patch gradient statistics and their quantization into dictionary keys.

All functions accept a single ``(k, k)`` patch or a stack ``(n, k, k)``;
the x axis runs along columns and the y axis along rows.
"""

from dataclasses import dataclass, field

import numpy as np

ANGLE_BINS = 24
STRENGTH_BINS = 3
COHERENCE_BINS = 3
N_KEYS = ANGLE_BINS * STRENGTH_BINS * COHERENCE_BINS


@dataclass(frozen=True)
class QuantConfig:
    """Bucketing thresholds; two cut points each for strength and coherence."""

    strength_thresholds: tuple = (0.01, 0.06)
    coherence_thresholds: tuple = (0.25, 0.5)
    angle_bins: int = field(default=ANGLE_BINS, init=False)

    def __post_init__(self):
        for name in ("strength_thresholds", "coherence_thresholds"):
            cuts = tuple(float(c) for c in getattr(self, name))
            if len(cuts) != 2 or not cuts[0] <= cuts[1]:
                raise ValueError(f"{name} must be two non-decreasing cut points, got {cuts}")
            object.__setattr__(self, name, cuts)


@dataclass(frozen=True)
class StructureTensor:
    gxx: np.ndarray
    gxy: np.ndarray
    gyy: np.ndarray


@dataclass(frozen=True)
class PatchFeatures:
    angle: np.ndarray
    strength: np.ndarray
    coherence: np.ndarray


@dataclass(frozen=True)
class PatchKey:
    angle_bin: int
    strength_bin: int
    coherence_bin: int

    @property
    def index(self):
        return key_index(self.angle_bin, self.strength_bin, self.coherence_bin)

    @classmethod
    def from_index(cls, index):
        a, rest = divmod(int(index), STRENGTH_BINS * COHERENCE_BINS)
        s, c = divmod(rest, COHERENCE_BINS)
        return cls(a, s, c)


def key_index(angle_bin, strength_bin, coherence_bin):
    return (angle_bin * STRENGTH_BINS + strength_bin) * COHERENCE_BINS + coherence_bin


def gradients(patch):
    """Central differences inside the patch, one-sided on its edges."""
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim < 2 or min(patch.shape[-2:]) < 3:
        raise ValueError(f"patch must be at least 3x3, got shape {patch.shape}")
    gy, gx = np.gradient(patch, axis=(-2, -1))
    return gx, gy


def tensor(patch):
    gx, gy = gradients(patch)
    return StructureTensor(
        gxx=np.sum(gx * gx, axis=(-2, -1)),
        gxy=np.sum(gx * gy, axis=(-2, -1)),
        gyy=np.sum(gy * gy, axis=(-2, -1)),
    )


def _principal_angle(t):
    # orientation of the dominant eigenvector, in (-pi/2, pi/2]
    return 0.5 * np.arctan2(2.0 * t.gxy, t.gxx - t.gyy)


def eigen(t):
    """Closed-form eigen-decomposition of the 2x2 tensor.

    Returns ``(lam1, lam2, phi)`` with ``lam1 >= lam2 >= 0`` and ``phi`` the
    unit eigenvector of ``lam1`` stacked on the last axis. A zero tensor
    yields ``phi = (1, 0)``.
    """
    half_trace = 0.5 * (t.gxx + t.gyy)
    disc = np.sqrt((0.5 * (t.gxx - t.gyy)) ** 2 + t.gxy**2)
    lam1 = np.maximum(half_trace + disc, 0.0)
    lam2 = np.maximum(half_trace - disc, 0.0)
    theta = _principal_angle(t)
    phi = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    return lam1, lam2, phi


def features_from_tensor(t):
    lam1, lam2, _ = eigen(t)
    s1, s2 = np.sqrt(lam1), np.sqrt(lam2)
    total = s1 + s2
    with np.errstate(invalid="ignore", divide="ignore"):
        coherence = np.where(total > 0, (s1 - s2) / np.where(total > 0, total, 1.0), 0.0)
    angle = np.mod(_principal_angle(t), np.pi)
    # mod can round a tiny negative up to exactly pi
    angle = np.where(angle >= np.pi, 0.0, angle)
    return PatchFeatures(angle=angle, strength=s1, coherence=np.clip(coherence, 0.0, 1.0))


def features(patch):
    return features_from_tensor(tensor(patch))


def quantize_arrays(angle, strength, coherence, config):
    angle_bin = np.minimum(np.floor(np.asarray(angle) / np.pi * ANGLE_BINS), ANGLE_BINS - 1)
    angle_bin = np.maximum(angle_bin, 0).astype(np.int64)
    strength_bin = np.searchsorted(config.strength_thresholds, strength, side="right")
    coherence_bin = np.searchsorted(config.coherence_thresholds, coherence, side="right")
    return angle_bin, np.asarray(strength_bin), np.asarray(coherence_bin)


def quantize(feats, config=None):
    """Map one patch's features to its ``PatchKey``."""
    config = config or QuantConfig()
    a, s, c = quantize_arrays(feats.angle, feats.strength, feats.coherence, config)
    return PatchKey(int(a), int(s), int(c))


def hash_patches(patches, config):
    """Flat key indices in ``[0, 216)`` for a stack of patches."""
    f = features(patches)
    a, s, c = quantize_arrays(f.angle, f.strength, f.coherence, config)
    return key_index(a, s, c)
