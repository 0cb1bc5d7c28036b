"""scikit-learn style wrappers around training, restoration and blending."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_image, check_image_list
from .bankfile import load_bank, save_bank
from .blending import BlendConfig, blend
from .imaging import psnr
from .inference import restore
from .learning import TrainConfig, train
from .sharpness import QConfig
from .structure import QuantConfig


def _as_list(X):
    single = isinstance(X, np.ndarray) and X.ndim == 2
    return single, ([X] if single else list(X))


class FilterBankDeblurrer(TransformerMixin, BaseEstimator):
    """Non-blind deblurring by learned per-bucket restoration filters.

    ``fit(X)`` degrades the sharp images ``X`` with ``kernel`` and learns a
    filter bank; ``fit(X, y)`` instead treats ``X`` as blurred inputs and
    ``y`` as their sharp counterparts. ``transform`` restores blurred images.
    A single 2-D array in gives a single array out.
    """

    def __init__(
        self,
        kernel="gaussian:15:2.10",
        patch_size=21,
        stride=None,
        strength_thresholds=(0.01, 0.06),
        coherence_thresholds=(0.25, 0.5),
        rcond=1e-8,
        augment=True,
        n_jobs=1,
    ):
        self.kernel = kernel
        self.patch_size = patch_size
        self.stride = stride
        self.strength_thresholds = strength_thresholds
        self.coherence_thresholds = coherence_thresholds
        self.rcond = rcond
        self.augment = augment
        self.n_jobs = n_jobs

    def _train_config(self):
        quant = QuantConfig(self.strength_thresholds, self.coherence_thresholds)
        return TrainConfig(self.patch_size, self.stride, self.kernel, quant, self.rcond, self.augment)

    def fit(self, X, y=None):
        config = self._train_config()
        if y is None:
            sharp = check_image_list(X, "X", config.patch_size)
            self.bank_ = train(sharp, config, n_jobs=self.n_jobs)
        else:
            blurred = check_image_list(X, "X", config.patch_size)
            sharp = check_image_list(y, "y", config.patch_size)
            if len(blurred) != len(sharp):
                raise ValueError("X and y must hold the same number of images")
            self.bank_ = train(sharp, config, pairs=blurred, n_jobs=self.n_jobs)
            self.bank_.kernel_tag = "pairs"
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        single, images = _as_list(X)
        out = [restore(check_image(im, min_size=self.bank_.patch_size), self.bank_) for im in images]
        return out[0] if single else out

    predict = transform

    def score(self, X, y):
        """Mean PSNR (dB) of the restorations of ``X`` against ``y``."""
        _, restored = _as_list(self.transform(X))
        _, sharp = _as_list(y)
        return float(np.mean([psnr(s, r) for s, r in zip(sharp, restored)]))

    @classmethod
    def from_bank(cls, bank):
        est = cls(
            kernel=bank.kernel_tag if bank.kernel_tag not in ("", "pairs") else "identity",
            patch_size=bank.patch_size,
            strength_thresholds=bank.quant.strength_thresholds,
            coherence_thresholds=bank.quant.coherence_thresholds,
        )
        est.bank_ = bank
        return est

    @classmethod
    def load(cls, path):
        return cls.from_bank(load_bank(path))

    def save(self, path):
        check_is_fitted(self, "bank_")
        save_bank(self.bank_, path)


class QGuidedBlender(BaseEstimator):
    """Fuse candidate restorations of one scene by Q-guided weight allocation.

    ``fit(candidates)`` runs the blend and keeps ``state_`` and ``blended_``;
    ``fit_transform`` returns the blended image.
    """

    def __init__(self, eta=1e-4, epsilon_w=1e-3, max_rounds_cap=1000, q_patch_size=8, tau=0.10, q_scale=64.0):
        self.eta = eta
        self.epsilon_w = epsilon_w
        self.max_rounds_cap = max_rounds_cap
        self.q_patch_size = q_patch_size
        self.tau = tau
        self.q_scale = q_scale

    def fit(self, X, y=None):
        config = BlendConfig(self.eta, self.epsilon_w, self.max_rounds_cap)
        qconfig = QConfig(self.q_patch_size, self.tau, self.q_scale)
        self.blended_, self.state_ = blend(check_image_list(X, "candidates"), config, qconfig)
        self.weights_ = self.state_.weights[np.argsort(self.state_.order)]
        return self

    def transform(self, X):
        return self.fit(X).blended_

    def fit_transform(self, X, y=None):
        return self.transform(X)
