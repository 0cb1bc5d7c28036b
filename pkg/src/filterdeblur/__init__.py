"""Learned-filter deblurring of out-of-focus images with Q-guided blending."""

__version__ = "0.1.0"

from .blending import BlendConfig, blend
from .estimators import FilterBankDeblurrer, QGuidedBlender
from .imaging import (
    box_kernel,
    convolve,
    degrade,
    gaussian_kernel,
    load_image,
    psnr,
    save_image,
    ssim,
)
from .inference import restore, restore_multi
from .learning import FilterBank, TrainConfig, train
from .sharpness import QConfig, deviation_v, index_j, metric_q, sharpness_report
