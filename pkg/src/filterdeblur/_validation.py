"""Input validation helpers shared by the public functions and estimators."""

import numpy as np


def check_image(image, name="image", min_size=1):
    """Return ``image`` as a finite 2-D float64 array.

    Raises ``ValueError`` for anything that is not a non-empty 2-D plane of
    finite values, or whose sides are shorter than ``min_size``.
    """
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-D luminance plane, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if min(arr.shape) < min_size:
        raise ValueError(
            f"{name} of shape {arr.shape} is smaller than the required {min_size}x{min_size}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("reference", "test")):
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} {a.shape} and {names[1]} {b.shape} differ in shape")


def check_odd(value, name, minimum=1):
    if int(value) != value or value < minimum or value % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= {minimum}, got {value!r}")
    return int(value)


def check_image_list(images, name="images", min_size=1):
    if isinstance(images, np.ndarray) and images.ndim == 2:
        images = [images]
    out = [check_image(im, f"{name}[{i}]", min_size) for i, im in enumerate(images)]
    if not out:
        raise ValueError(f"{name} is empty")
    return out
