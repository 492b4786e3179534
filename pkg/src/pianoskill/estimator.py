"""scikit-learn compatible wrappers around the training and preprocessing pipeline.

Rows of ``X`` are :class:`~pianoskill.dataset.SampleRef` objects (one
160-frame sample each), so ``score`` is the per-sample accuracy. A
:class:`~pianoskill.datamodel.DatasetManifest` is also accepted: ``fit`` uses
its train split and the prediction methods its test split.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .audio import AudioWindow, MelSpectrogramParams, build_aural_clip
from .datamodel import DatasetManifest, Split
from .dataset import ClipLoader, SampleRef, make_samples
from .evalharness import EvalReport, build_report, predict_refs
from .model import Modality
from .objective import LossWeights
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .validation import ValidationError, check_levels
from .vision import VisionConfig


def _as_refs(X, scheme, split: Split) -> list[SampleRef]:
    if isinstance(X, DatasetManifest):
        return make_samples(X, scheme, split)
    refs = list(X)
    if not all(isinstance(r, SampleRef) for r in refs):
        raise ValidationError("X must be a DatasetManifest or a sequence of SampleRef", "X")
    return refs


class SkillAssessor(ClassifierMixin, BaseEstimator):
    """Player-level classifier over video, audio, or both (``modality='mmdl'``).

    Hyperparameters mirror :class:`~pianoskill.trainer.TrainConfig`; the six
    loss weights are flattened into ``alpha1`` ... ``gamma2`` so that
    ``get_params``/``set_params`` and grid search can reach them.
    """

    def __init__(
        self,
        modality="mmdl",
        scheme="uniform",
        learning_rate=1e-4,
        epochs=100,
        batch_size=4,
        seed=0,
        width_factor=1.0,
        flip_prob=0.5,
        level_head="expectation",
        holdout_fraction=0.0,
        workers=0,
        alpha1=1.0,
        alpha2=0.1,
        beta1=1.0,
        beta2=0.1,
        gamma1=1.0,
        gamma2=0.1,
        visual_pretrained=None,
        aural_pretrained=None,
        out_dir=None,
    ):
        self.modality = modality
        self.scheme = scheme
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.width_factor = width_factor
        self.flip_prob = flip_prob
        self.level_head = level_head
        self.holdout_fraction = holdout_fraction
        self.workers = workers
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.beta1 = beta1
        self.beta2 = beta2
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.visual_pretrained = visual_pretrained
        self.aural_pretrained = aural_pretrained
        self.out_dir = out_dir

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            modality=self.modality,
            scheme=self.scheme,
            seed=self.seed,
            width_factor=self.width_factor,
            flip_prob=self.flip_prob,
            level_head=self.level_head,
            holdout_fraction=self.holdout_fraction,
            workers=self.workers,
            visual_pretrained=self.visual_pretrained,
            aural_pretrained=self.aural_pretrained,
            weights=LossWeights(self.alpha1, self.alpha2, self.beta1, self.beta2, self.gamma1, self.gamma2),
        )

    def fit(self, X, y=None):
        config = self.train_config()
        refs = _as_refs(X, config.scheme, Split.TRAIN)
        if y is not None:
            y = check_levels(y)
            if len(y) != len(refs) or np.any(y != [r.level for r in refs]):
                raise ValidationError("y must list the player level of every sample in X", "y")
        manifest = X if isinstance(X, DatasetManifest) else None
        self.loader_ = ClipLoader(vision=config.vision_config(), workers=config.workers)
        result = train(manifest, config, out_dir=self.out_dir, samples=refs, loader=self.loader_)
        self.model_ = result.model
        self.history_ = result.epochs
        self.classes_ = np.arange(1, 11)
        self.n_features_in_ = 1
        return self

    def _loader(self) -> ClipLoader:
        if not hasattr(self, "loader_"):
            self.loader_ = ClipLoader(vision=VisionConfig(flip_prob=self.flip_prob), workers=self.workers)
        return self.loader_

    def branch_logits(self, X) -> dict:
        """Logits of every branch the model carries, keyed by branch id."""
        check_is_fitted(self, "model_")
        refs = _as_refs(X, self.scheme, Split.TEST)
        return predict_refs(self.model_, refs, self._loader(), batch_size=self.batch_size)

    def decision_function(self, X) -> np.ndarray:
        return self.branch_logits(X)[Modality(self.modality).primary_branch]

    def predict_proba(self, X) -> np.ndarray:
        logits = self.decision_function(X)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_level(self, X) -> np.ndarray:
        """Expected level under the class probabilities (a real number in [1, 10])."""
        return self.predict_proba(X) @ self.classes_.astype(float)

    def evaluate(self, X) -> EvalReport:
        check_is_fitted(self, "model_")
        refs = _as_refs(X, self.scheme, Split.TEST)
        return build_report(self.branch_logits(refs), refs, str(self.scheme))

    def save(self, path: str | Path) -> Path:
        check_is_fitted(self, "model_")
        return save_checkpoint(path, self.model_, self.train_config())

    @classmethod
    def load(cls, path: str | Path) -> "SkillAssessor":
        model, payload = load_checkpoint(path)
        params = dict(payload.get("train_config") or {})
        weights = params.pop("weights", None) or {}
        for key in ("adam_betas", "adam_eps"):
            params.pop(key, None)
        est = cls(**params, **weights)
        est.model_ = model
        est.classes_ = np.arange(1, 11)
        est.n_features_in_ = 1
        return est


class VisualClipExtractor(TransformerMixin, BaseEstimator):
    """SampleRefs -> (n, 10, 16, 112, 112, 3) standardized clip stacks (no augmentation)."""

    def __init__(self, mean=VisionConfig.mean, std=VisionConfig.std):
        self.mean = mean
        self.std = std

    def fit(self, X, y=None):
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> np.ndarray:
        refs = _as_refs(X, "uniform", Split.TEST)
        loader = ClipLoader(vision=VisionConfig(mean=tuple(self.mean), std=tuple(self.std)))
        return np.stack([loader.visual_sample(r) for r in refs]) if refs else np.empty((0, 10, 16, 112, 112, 3), np.float32)


class AuralClipExtractor(TransformerMixin, BaseEstimator):
    """Audio to (…, 224, 224, 1) dB-mel images.

    ``X`` is either a sequence of SampleRefs (giving (n, 10, 224, 224, 1)) or
    a 2-D array of equal-length mono windows (giving (n, 224, 224, 1)).
    """

    def __init__(self, sample_rate=22050, n_fft=2048, hop=512, n_mels=128, fmin=0.0, fmax=None, db_floor=-80.0):
        self.sample_rate = sample_rate
        self.n_fft = n_fft
        self.hop = hop
        self.n_mels = n_mels
        self.fmin = fmin
        self.fmax = fmax
        self.db_floor = db_floor

    def params(self) -> MelSpectrogramParams:
        return MelSpectrogramParams(
            sample_rate=self.sample_rate,
            n_fft=self.n_fft,
            hop=self.hop,
            n_mels=self.n_mels,
            fmin=self.fmin,
            fmax=self.fmax,
            db_floor=self.db_floor,
        )

    def fit(self, X, y=None):
        self.params()  # validates the settings
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> np.ndarray:
        params = self.params()
        if isinstance(X, np.ndarray):
            if X.ndim != 2:
                raise ValidationError(f"expected (n_windows, n_samples), got {X.shape}", "X")
            return np.stack([build_aural_clip(AudioWindow(w, params.sample_rate), params).data for w in X])
        refs = _as_refs(X, "uniform", Split.TEST)
        loader = ClipLoader(mel=params)
        return np.stack([loader.aural_sample(r) for r in refs])
