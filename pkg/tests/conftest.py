import os

import numpy as np
import pytest

ACCEPTANCE_LINES = []


def _luma(arr):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[..., :3] @ np.array([0.299, 0.587, 0.114])
    return arr / 255.0 if arr.max() > 1.0 else arr


def bundled_photos():
    """Natural photographs that ship with scikit-image, scikit-learn and matplotlib.

    Returned as ``{name: luminance plane}``; used as a stand-in corpus when
    no benchmark dataset directory is configured.
    """
    import matplotlib.cbook
    import skimage.data
    import skimage.io
    from PIL import Image
    from sklearn.datasets import load_sample_images

    photos = {}
    for name in (
        "camera", "astronaut", "coffee", "brick", "grass", "gravel", "chelsea",
        "coins", "moon", "rocket", "hubble_deep_field", "immunohistochemistry",
        "cell", "clock", "page", "text", "retina", "colorwheel",
    ):
        photos[name] = _luma(getattr(skimage.data, name)())
    data_dir = os.path.dirname(skimage.data.__file__)
    for name in ("motorcycle_left", "motorcycle_right"):
        photos[name] = _luma(skimage.io.imread(os.path.join(data_dir, f"{name}.png")))
    sample = load_sample_images()
    for fname, img in zip(sample.filenames, sample.images):
        photos[os.path.splitext(os.path.basename(fname))[0]] = _luma(img)
    with Image.open(matplotlib.cbook.get_sample_data("grace_hopper.jpg")) as im:
        photos["grace_hopper"] = _luma(np.array(im))
    return photos


@pytest.fixture(scope="session")
def photos():
    return bundled_photos()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
