"""Per-bucket normal equations, dihedral augmentation and pseudoinverse solves."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_image, check_odd, check_same_shape
from .imaging import BlurKernel, degrade, load_image, parse_kernel
from .structure import (
    ANGLE_BINS,
    COHERENCE_BINS,
    N_KEYS,
    STRENGTH_BINS,
    QuantConfig,
    hash_patches,
    key_index,
)

log = logging.getLogger(__name__)

# patches per vectorized chunk; bounds peak memory at ~chunk * k^2 * 8 bytes
CHUNK = 8192


@dataclass
class TrainConfig:
    patch_size: int = 21
    stride: int | None = None
    kernel: str = "gaussian:15:2.10"
    quant: QuantConfig = field(default_factory=QuantConfig)
    rcond: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        check_odd(self.patch_size, "patch_size", minimum=5)
        if self.stride is not None and (int(self.stride) != self.stride or self.stride < 1):
            raise ValueError(f"stride must be a positive integer, got {self.stride!r}")
        if isinstance(self.kernel, BlurKernel):
            self.kernel = self.kernel.tag
        parse_kernel(self.kernel)

    def stride_for(self, n_images):
        if self.stride is not None:
            return int(self.stride)
        return 1 if n_images <= 100 else 2


class Accumulators:
    """Running sums ``W = sum a a^T``, ``V = sum a b`` and counts for all 216 keys."""

    def __init__(self, patch_size, quant=None):
        self.patch_size = check_odd(patch_size, "patch_size", minimum=3)
        self.quant = quant or QuantConfig()
        d = patch_size * patch_size
        self.W = np.zeros((N_KEYS, d, d))
        self.V = np.zeros((N_KEYS, d))
        self.count = np.zeros(N_KEYS, dtype=np.int64)

    @property
    def n_taps(self):
        return self.patch_size * self.patch_size

    def copy(self):
        out = Accumulators(self.patch_size, self.quant)
        out.W[...] = self.W
        out.V[...] = self.V
        out.count[...] = self.count
        return out

    def add_patches(self, patches, targets):
        """Add flattened patches ``(n, k*k)`` and their target pixels ``(n,)``."""
        k = self.patch_size
        keys = hash_patches(patches.reshape(-1, k, k), self.quant)
        A = patches.reshape(len(keys), -1)
        order = np.argsort(keys, kind="stable")
        keys, A, b = keys[order], A[order], targets[order]
        uniq, starts = np.unique(keys, return_index=True)
        ends = np.append(starts[1:], len(keys))
        for key, lo, hi in zip(uniq, starts, ends):
            a = A[lo:hi]
            self.W[key] += a.T @ a
            self.V[key] += a.T @ b[lo:hi]
            self.count[key] += hi - lo


def _compatible(a, b):
    if a.patch_size != b.patch_size or a.quant != b.quant:
        raise ValueError("accumulators differ in patch size or quantization config")


def merge(a, b):
    """Element-wise sum of two accumulator sets."""
    _compatible(a, b)
    out = a.copy()
    out.W += b.W
    out.V += b.V
    out.count += b.count
    return out


def iter_patch_chunks(image, patch_size, stride=1, chunk=CHUNK):
    """Yield ``(patches, centers)`` for all fully interior patch positions.

    ``patches`` has shape ``(n, k, k)``; ``centers`` holds the ``(row, col)``
    of each patch center in ``image`` coordinates.
    """
    k = patch_size
    r = k // 2
    windows = sliding_window_view(image, (k, k))[::stride, ::stride]
    n_rows, n_cols = windows.shape[:2]
    rows_per_chunk = max(1, chunk // max(n_cols, 1))
    for top in range(0, n_rows, rows_per_chunk):
        block = windows[top : top + rows_per_chunk]
        patches = np.ascontiguousarray(block).reshape(-1, k, k)
        rr = (np.arange(top, top + block.shape[0]) * stride + r)[:, None]
        cc = (np.arange(n_cols) * stride + r)[None, :]
        rr, cc = np.broadcast_arrays(rr, cc)
        yield patches, (rr.ravel(), cc.ravel())


def accumulate_pair(sharp, blurred, config, acc=None):
    """Add every stride-grid patch of ``blurred`` with its sharp center pixel."""
    sharp = check_image(sharp, "sharp")
    blurred = check_image(blurred, "blurred", min_size=config.patch_size)
    check_same_shape(sharp, blurred, ("sharp", "blurred"))
    if acc is None:
        acc = Accumulators(config.patch_size, config.quant)
    elif acc.patch_size != config.patch_size or acc.quant != config.quant:
        raise ValueError("accumulators do not match the training config")
    stride = config.stride_for(1)
    for patches, (rows, cols) in iter_patch_chunks(blurred, config.patch_size, stride):
        acc.add_patches(patches.reshape(len(rows), -1), sharp[rows, cols])
    return acc


# Dihedral group of the square as (quarter turns, column flip first).
# Gradient directions transform by rot^m @ flip^s with (x=col, y=row).
_ROT = np.array([[0.0, 1.0], [-1.0, 0.0]])
_FLIP = np.array([[-1.0, 0.0], [0.0, 1.0]])
DIHEDRAL = [(m, s) for s in (0, 1) for m in range(4)]


def transform_patch(patch, element):
    m, s = element
    out = np.flip(patch, axis=-1) if s else patch
    return np.rot90(out, m, axes=(-2, -1))


def direction_matrix(element):
    m, s = element
    return np.linalg.matrix_power(_ROT, m) @ (_FLIP if s else np.eye(2))


def pixel_permutation(patch_size, element):
    """``perm`` with ``transform_patch(p, element).ravel() == p.ravel()[perm]``."""
    idx = np.arange(patch_size * patch_size).reshape(patch_size, patch_size)
    return transform_patch(idx, element).ravel()


def angle_bin_map(element):
    """Where each angle bin lands after the transform (via the bin centers)."""
    centers = (np.arange(ANGLE_BINS) + 0.5) * np.pi / ANGLE_BINS
    dirs = direction_matrix(element) @ np.stack([np.cos(centers), np.sin(centers)])
    theta = np.mod(np.arctan2(dirs[1], dirs[0]), np.pi)
    return np.floor(theta / np.pi * ANGLE_BINS).astype(np.int64) % ANGLE_BINS


def key_map(element):
    """Flat key index -> transformed flat key index."""
    amap = angle_bin_map(element)
    a, s, c = np.meshgrid(
        np.arange(ANGLE_BINS), np.arange(STRENGTH_BINS), np.arange(COHERENCE_BINS), indexing="ij"
    )
    src = key_index(a, s, c).ravel()
    dst = key_index(amap[a], s, c).ravel()
    out = np.empty(N_KEYS, dtype=np.int64)
    out[src] = dst
    return out


def transform_accumulators(acc, element):
    """Contributions of ``acc`` as if every patch had been transformed by ``element``."""
    out = Accumulators(acc.patch_size, acc.quant)
    perm = pixel_permutation(acc.patch_size, element)
    kmap = key_map(element)
    for key in np.flatnonzero(acc.count):
        dst = kmap[key]
        out.W[dst] += acc.W[key][np.ix_(perm, perm)]
        out.V[dst] += acc.V[key][perm]
        out.count[dst] += acc.count[key]
    return out


def augment(acc):
    """Add the 7 non-identity dihedral images of every bucket's contributions.

    The center pixel is fixed by every element, so targets are unchanged and
    only the patch side of the normal equations is permuted.
    """
    out = acc.copy()
    for element in DIHEDRAL[1:]:
        moved = transform_accumulators(acc, element)
        out.W += moved.W
        out.V += moved.V
        out.count += moved.count
    return out


def identity_filter(patch_size):
    h = np.zeros(patch_size * patch_size)
    h[h.size // 2] = 1.0
    return h


def solve(W, V, count=None, rcond=1e-8):
    """Minimum-norm least-squares filter ``pinv(W) @ V`` via SVD.

    Singular values below ``rcond * s_max`` are treated as zero. An empty
    bucket (``count == 0`` or all-zero ``W``) gives the identity filter.
    """
    W = np.asarray(W, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    d = V.shape[0]
    k = int(round(np.sqrt(d)))
    if count == 0 or not np.any(W):
        return identity_filter(k) if k * k == d else np.eye(d)[d // 2]
    U, s, Vt = np.linalg.svd(W)
    keep = s > rcond * s[0]
    coef = (U[:, keep].T @ V) / s[keep]
    h = Vt[keep].T @ coef
    if not np.all(np.isfinite(h)):
        raise FloatingPointError("non-finite filter; accumulator is corrupt")
    return h


@dataclass
class FilterBank:
    """Learned restoration filters for all 216 keys plus hashing metadata."""

    patch_size: int
    quant: QuantConfig
    kernel_tag: str
    filters: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        check_odd(self.patch_size, "patch_size", minimum=3)
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        d = self.patch_size**2
        if self.filters.shape != (N_KEYS, d) or self.counts.shape != (N_KEYS,):
            raise ValueError(
                f"filter bank needs {N_KEYS} filters of {d} taps, got {self.filters.shape}"
            )
        if not np.all(np.isfinite(self.filters)):
            raise ValueError("filter bank contains non-finite taps")

    @classmethod
    def identity(cls, patch_size, quant=None, kernel_tag="identity"):
        filters = np.tile(identity_filter(patch_size), (N_KEYS, 1))
        return cls(patch_size, quant or QuantConfig(), kernel_tag, filters, np.zeros(N_KEYS))


def solve_all(acc, rcond=1e-8, kernel_tag=""):
    filters = np.empty((N_KEYS, acc.n_taps))
    for key in range(N_KEYS):
        filters[key] = solve(acc.W[key], acc.V[key], acc.count[key], rcond)
    return FilterBank(acc.patch_size, acc.quant, kernel_tag, filters, acc.count.copy())


def _read_corpus_item(item, index):
    if isinstance(item, np.ndarray):
        return check_image(item, f"corpus[{index}]")
    try:
        return load_image(item)
    except (ValueError, OSError) as exc:
        log.warning("skipping unreadable training image %s: %s", item, exc)
        return None


def _accumulate_range(corpus, pairs, indices, kernel, step):
    acc = Accumulators(step.patch_size, step.quant)
    used = 0
    for i in indices:
        sharp = _read_corpus_item(corpus[i], i)
        if sharp is None:
            continue
        if min(sharp.shape) < step.patch_size:
            log.warning("skipping corpus[%d]: smaller than the %d-pixel patch", i, step.patch_size)
            continue
        blurred = degrade(sharp, kernel) if pairs is None else check_image(pairs[i])
        accumulate_pair(sharp, blurred, step, acc)
        used += 1
    return acc, used


def train(corpus, config=None, pairs=None, n_jobs=1):
    """Learn a filter bank from sharp images degraded with ``config.kernel``.

    ``corpus`` holds arrays or image paths. If ``pairs`` is given it must be
    the matching list of already-degraded images and no degradation is done.
    With ``n_jobs > 1`` contiguous slices of the corpus are accumulated in
    threads and merged in slice order, so results do not depend on timing.
    """
    config = config or TrainConfig()
    corpus = list(corpus)
    if not corpus:
        raise ValueError("training corpus is empty")
    if pairs is not None and len(pairs) != len(corpus):
        raise ValueError("pairs must match the corpus length")
    kernel = parse_kernel(config.kernel)
    stride = config.stride_for(len(corpus))
    step = TrainConfig(config.patch_size, stride, config.kernel, config.quant, config.rcond)
    n_jobs = max(1, min(int(n_jobs), len(corpus)))
    slices = np.array_split(np.arange(len(corpus)), n_jobs)
    if n_jobs == 1:
        results = [_accumulate_range(corpus, pairs, slices[0], kernel, step)]
    else:
        with ThreadPoolExecutor(n_jobs) as pool:
            futures = [
                pool.submit(_accumulate_range, corpus, pairs, idx, kernel, step) for idx in slices
            ]
            results = [f.result() for f in futures]
    acc, used = results[0]
    for part, n in results[1:]:
        acc = merge(acc, part)
        used += n
    if used == 0:
        raise ValueError("no usable training images in corpus")
    if config.augment:
        acc = augment(acc)
    return solve_all(acc, config.rcond, kernel_tag=kernel.tag)

