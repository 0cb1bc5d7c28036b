"""Per-pixel filter lookup restoration."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import check_image
from .structure import hash_patches

CHUNK = 8192


def restore(degraded, bank, return_keys=False):
    """Restore ``degraded`` by applying, at every pixel, the filter keyed by its patch.

    Patches are centred on each pixel with replicate padding at the borders;
    outputs are clamped to [0, 1]. With ``return_keys`` the per-pixel key
    map is returned as well.
    """
    k = bank.patch_size
    image = check_image(degraded, "degraded", min_size=k)
    r = k // 2
    padded = np.pad(image, r, mode="edge")
    windows = sliding_window_view(padded, (k, k))
    h, w = image.shape
    out = np.empty((h, w))
    keys = np.empty((h, w), dtype=np.int64) if return_keys else None
    rows_per_chunk = max(1, CHUNK // w)
    for top in range(0, h, rows_per_chunk):
        block = np.ascontiguousarray(windows[top : top + rows_per_chunk])
        n_rows = block.shape[0]
        patches = block.reshape(-1, k, k)
        kk = hash_patches(patches, bank.quant)
        vals = np.einsum("nd,nd->n", patches.reshape(len(kk), -1), bank.filters[kk])
        out[top : top + n_rows] = vals.reshape(n_rows, w)
        if keys is not None:
            keys[top : top + n_rows] = kk.reshape(n_rows, w)
    np.clip(out, 0.0, 1.0, out=out)
    return (out, keys) if return_keys else out


def restore_multi(degraded, banks):
    """One restoration per bank, in bank order."""
    return [restore(degraded, bank) for bank in banks]
