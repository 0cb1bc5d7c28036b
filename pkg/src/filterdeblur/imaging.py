"""Image planes, blur kernels, degradation and full-reference quality metrics.

Images are 2-D float64 arrays of luminance in [0, 1], indexed ``[row, col]``.
"""

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage

from ._validation import check_image, check_odd, check_same_shape

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class BlurKernel:
    """Normalized, odd-sized 2-D blur kernel with a short textual tag."""

    taps: np.ndarray
    tag: str = ""

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
            raise ValueError("kernel taps must be a square 2-D array")
        check_odd(taps.shape[0], "kernel size")
        if np.any(taps < 0) or not np.all(np.isfinite(taps)):
            raise ValueError("kernel taps must be finite and non-negative")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel taps sum to {taps.sum()!r}, expected 1")
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)

    @property
    def size(self):
        return self.taps.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"noise sigma must be >= 0, got {self.sigma!r}")


def gaussian_kernel(size, sigma):
    size = check_odd(size, "kernel size")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma!r}")
    r = size // 2
    y, x = np.mgrid[-r : r + 1, -r : r + 1]
    taps = np.exp(-(x**2 + y**2) / (2.0 * sigma**2))
    return BlurKernel(taps / taps.sum(), tag=f"gaussian:{size}:{sigma:g}")


def box_kernel(size):
    size = check_odd(size, "kernel size")
    return BlurKernel(np.full((size, size), 1.0 / size**2), tag=f"box:{size}")


def identity_kernel():
    return BlurKernel(np.ones((1, 1)), tag="identity")


def parse_kernel(spec):
    """Build a kernel from ``gaussian:K:SIGMA``, ``box:K`` or ``identity``."""
    parts = spec.strip().lower().split(":")
    try:
        if parts[0] == "gaussian" and len(parts) == 3:
            kernel = gaussian_kernel(int(parts[1]), float(parts[2]))
            return BlurKernel(kernel.taps, tag=spec.strip())
        if parts[0] == "box" and len(parts) == 2:
            return box_kernel(int(parts[1]))
        if parts == ["identity"]:
            return identity_kernel()
    except ValueError as exc:
        raise ValueError(f"bad kernel spec {spec!r}: {exc}") from None
    raise ValueError(f"bad kernel spec {spec!r}; expected gaussian:K:SIGMA, box:K or identity")


def convolve(image, kernel, clamp=True):
    """Convolve with replicate-edge padding; output has the input's shape."""
    image = check_image(image)
    taps = kernel.taps if isinstance(kernel, BlurKernel) else BlurKernel(kernel).taps
    if taps.shape == (1, 1):
        out = image * taps[0, 0]
    else:
        out = ndimage.convolve(image, taps, mode="nearest")
    return np.clip(out, 0.0, 1.0) if clamp else out


def degrade(image, kernel, noise=None):
    """Blur then add seeded Gaussian noise; the result is clamped to [0, 1]."""
    out = convolve(image, kernel, clamp=False)
    if noise is not None and noise.sigma > 0:
        rng = np.random.default_rng(noise.seed)
        out = out + rng.normal(0.0, noise.sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def psnr(reference, test):
    """Peak signal-to-noise ratio in dB for unit dynamic range; ``inf`` if equal."""
    reference = check_image(reference, "reference")
    test = check_image(test, "test")
    check_same_shape(reference, test)
    mse = np.mean((reference - test) ** 2)
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_window(size=11, sigma=1.5):
    r = size // 2
    g = np.exp(-(np.arange(-r, r + 1) ** 2) / (2 * sigma**2))
    g /= g.sum()
    return g


def ssim(reference, test, win_size=11, sigma=1.5, data_range=1.0):
    """Mean structural similarity with a Gaussian window.

    Local statistics use population (not sample) covariance and reflect
    padding; the ``win_size // 2`` border is excluded from the mean.
    """
    reference = check_image(reference, "reference", min_size=win_size)
    test = check_image(test, "test", min_size=win_size)
    check_same_shape(reference, test)
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    g = _ssim_window(win_size, sigma)

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="reflect")
        return ndimage.correlate1d(a, g, axis=1, mode="reflect")

    mu_x, mu_y = blur(reference), blur(test)
    sxx = blur(reference * reference) - mu_x**2
    syy = blur(test * test) - mu_y**2
    sxy = blur(reference * test) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    r = win_size // 2
    return float(np.mean((num / den)[r:-r, r:-r]))


def _to_unit_float(arr, mode):
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    if arr.dtype == np.uint16 or mode.startswith("I;16") or mode == "I":
        return arr.astype(np.float64) / 65535.0
    if arr.dtype == bool:
        return arr.astype(np.float64)
    raise ValueError(f"unsupported pixel type {arr.dtype} (mode {mode})")


def rgb_to_ycbcr(rgb):
    """BT.601 full-range YCbCr for float RGB in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b
    cb = 0.5 + (b - y) / 1.772
    cr = 0.5 + (r - y) / 1.402
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc):
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 0.5, ycc[..., 2] - 0.5
    r = y + 1.402 * cr
    b = y + 1.772 * cb
    g = (y - LUMA_WEIGHTS[0] * r - LUMA_WEIGHTS[2] * b) / LUMA_WEIGHTS[1]
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def load_color(path):
    """Read a PNG/PGM file as float RGB (H, W, 3), or (H, W) if grayscale."""
    try:
        with PILImage.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("P", "PA", "LA", "RGBA", "CMYK", "YCbCr"):
                im = im.convert("RGB")
                mode = "RGB"
            arr = np.array(im)
    except (OSError, SyntaxError) as exc:
        raise ValueError(f"cannot read image {path}: {exc}") from None
    if mode == "1":
        return arr.astype(np.float64)
    out = _to_unit_float(arr, mode)
    if out.ndim == 3:
        out = out[..., :3]
    return out


def load_image(path):
    """Read a PNG or PGM file as a luminance plane in [0, 1]."""
    arr = load_color(path)
    if arr.ndim == 3:
        arr = arr @ LUMA_WEIGHTS
    return np.clip(arr, 0.0, 1.0)


def to_uint8(image):
    # round half up
    return np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_image(image, path):
    """Write an 8-bit grayscale PNG (or RGB if given an (H, W, 3) array)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        PILImage.fromarray(to_uint8(arr)).save(path, format="PNG")
        return
    arr = check_image(arr)
    PILImage.fromarray(to_uint8(arr)).save(path, format="PNG")
