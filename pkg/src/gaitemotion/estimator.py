"""scikit-learn compatible front end.

Typical use::

    pipe = make_pipeline(TemporalPreprocessor(), GaitEmotionClassifier(epochs=100))
    pipe.fit(raw_gaits, y)          # y: multi-hot rows, -1 rows = unlabeled
    pipe.predict(raw_gaits)         # multi-hot predictions
"""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import training
from .affective import extract_affective
from .exceptions import EmptyError
from .gait_io import CLIP_FRAMES, N_FRAMES, STRIDE, preprocess_temporal
from .labels_metrics import CLASS_NAMES, class_weights, evaluate
from .model import GaitNet, ModelConfig
from .rotation import extract_rotations
from .skeleton import canonical_skeleton
from .validation import check_positions, check_sequences, check_targets


class TemporalPreprocessor(TransformerMixin, BaseEstimator):
    """Clip/zero-pad each gait to ``clip`` frames and keep every ``stride``-th.

    Accepts a list of variable-length ``(T_i, J, 3)`` gaits and returns a
    dense ``(N, clip // stride, J, 3)`` array.
    """

    def __init__(self, clip=CLIP_FRAMES, stride=STRIDE):
        self.clip = clip
        self.stride = stride

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        seqs = check_sequences(X)
        return np.stack([preprocess_temporal(s, self.clip, self.stride) for s in seqs])


class RotationTransformer(TransformerMixin, BaseEstimator):
    """Positions ``(N, T, J, 3)`` to bone rotations ``(N, J, T, 4)``."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return extract_rotations(check_positions(X), canonical_skeleton())


class AffectiveTransformer(TransformerMixin, BaseEstimator):
    """Positions ``(N, T, J, 3)`` to scaled affective features ``(N, 18, T)``.

    With ``time_mean=True`` the features are averaged over time instead.
    """

    def __init__(self, time_mean=False):
        self.time_mean = time_mean

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        feats = extract_affective(check_positions(X))
        return feats.mean(axis=-1) if self.time_mean else feats


class GaitEmotionClassifier(ClassifierMixin, BaseEstimator):
    """Semi-supervised autoencoder + classifier for perceived gait emotion.

    ``X`` holds preprocessed positions ``(N, 48, 21, 3)``.  ``y`` holds
    multi-hot rows over (happy, sad, angry, neutral); a row of -1 marks an
    unlabeled gait, which only feeds the autoencoder terms.

    Parameters mirror :class:`~gaitemotion.model.ModelConfig` and the
    training schedule.  ``use_autoencoder=False`` drops the decoder and trains
    the classifier on labeled gaits only.
    """

    def __init__(
        self,
        embed_dim=32,
        joint_dim=16,
        classifier_dims=(16, 8),
        decoder_hidden=None,
        dropout=0.1,
        use_hierarchical_pooling=True,
        use_affective_loss=True,
        use_autoencoder=True,
        lambda_quat=2.0,
        lambda_aff=2.0,
        epochs=500,
        batch_size=32,
        learning_rate=1e-3,
        lr_decay=0.999,
        teacher_forcing_decay=0.995,
        random_state=0,
        verbose=False,
    ):
        self.embed_dim = embed_dim
        self.joint_dim = joint_dim
        self.classifier_dims = classifier_dims
        self.decoder_hidden = decoder_hidden
        self.dropout = dropout
        self.use_hierarchical_pooling = use_hierarchical_pooling
        self.use_affective_loss = use_affective_loss
        self.use_autoencoder = use_autoencoder
        self.lambda_quat = lambda_quat
        self.lambda_aff = lambda_aff
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.teacher_forcing_decay = teacher_forcing_decay
        self.random_state = random_state
        self.verbose = verbose

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim,
            joint_dim=self.joint_dim,
            classifier_dims=tuple(self.classifier_dims),
            decoder_hidden=self.decoder_hidden,
            dropout=self.dropout,
            use_hierarchical_pooling=self.use_hierarchical_pooling,
            use_affective_loss=self.use_affective_loss,
            use_decoder=self.use_autoencoder,
        )

    def _features(self, X):
        X = check_positions(X, n_frames=N_FRAMES)
        return extract_rotations(X, canonical_skeleton()), extract_affective(X)

    def fit(self, X, y, X_val=None, y_val=None):
        """Train on ``(X, y)``; keeps the parameters scoring best on the
        validation set when ``X_val``/``y_val`` are given."""
        rot, aff = self._features(X)
        y = check_targets(y, len(rot))
        labeled = (y >= 0).all(axis=1)
        if not labeled.any():
            raise EmptyError("fit needs at least one labeled gait")
        val = None
        if X_val is not None:
            val_rot, _ = self._features(X_val)
            val = (val_rot, check_targets(y_val, len(val_rot)))

        self.classes_ = np.array(CLASS_NAMES)
        self.class_weights_ = class_weights(y[labeled])
        torch.manual_seed(self.random_state)
        self.model_ = GaitNet(self.model_config())
        lw = training.LossWeights(self.lambda_quat, self.lambda_aff)
        self.state_, self.history_ = training.train(
            self.model_,
            rot,
            aff,
            y,
            self.class_weights_,
            lw,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.random_state,
            val=val,
            base_lr=self.learning_rate,
            lr_decay=self.lr_decay,
            tf_decay=self.teacher_forcing_decay,
            verbose=self.verbose,
        )
        self.best_epoch_ = self.state_.best_epoch
        self.model_.eval()
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        rot, _ = self._features(X)
        return training.predict_proba(self.model_, rot)

    def predict(self, X):
        """Multi-hot predictions: a class is on when its probability > 1/C."""
        proba = self.predict_proba(X)
        return (proba > 1.0 / proba.shape[1]).astype(np.int64)

    @torch.no_grad()
    def transform(self, X):
        """Latent embeddings ``(N, E, T)``."""
        check_is_fitted(self, "model_")
        rot, _ = self._features(X)
        self.model_.eval()
        return self.model_.encode(torch.as_tensor(rot, dtype=torch.float32)).double().numpy()

    def evaluate(self, X, y):
        """AP report over the labeled rows of ``y``."""
        y = check_targets(y, len(np.asarray(X)))
        keep = (y >= 0).all(axis=1)
        return evaluate(self.predict_proba(np.asarray(X)[keep]), y[keep])

    def score(self, X, y, sample_weight=None):
        """Mean average precision (not subset accuracy)."""
        return self.evaluate(X, y)["map"]
