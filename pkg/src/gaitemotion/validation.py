"""Input checks shared by the estimators."""

import numpy as np

from .exceptions import ShapeError


def check_positions(X, n_joints=21, n_frames=None):
    """Coerce ``X`` to a float ``(N, T, J, 3)`` array of finite positions.

    A single ``(T, J, 3)`` gait is promoted to a batch of one.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[2:] != (n_joints, 3):
        raise ShapeError(f"expected positions shaped (N, T, {n_joints}, 3), got {X.shape}")
    if n_frames is not None and X.shape[1] != n_frames:
        raise ShapeError(
            f"expected {n_frames} frames per gait, got {X.shape[1]}; "
            "apply TemporalPreprocessor first"
        )
    if not np.all(np.isfinite(X)):
        raise ValueError("positions contain NaN or infinity")
    return X


def check_sequences(X, n_joints=21):
    """Validate a ragged collection of ``(T_i, J, 3)`` gaits; returns a list."""
    if isinstance(X, np.ndarray) and X.ndim == 4:
        seqs = list(X)
    else:
        seqs = [np.asarray(x, dtype=float) for x in X]
    for i, s in enumerate(seqs):
        if s.ndim != 3 or s.shape[1:] != (n_joints, 3):
            raise ShapeError(f"gait {i}: expected (T, {n_joints}, 3), got {s.shape}")
    return seqs


def check_targets(y, n_samples, n_classes=4):
    """Multi-hot targets ``(N, C)``; a row of -1 marks an unlabeled gait."""
    y = np.asarray(y)
    if y.shape != (n_samples, n_classes):
        raise ShapeError(f"expected targets shaped ({n_samples}, {n_classes}), got {y.shape}")
    unlabeled = (y == -1).all(axis=1)
    ok = np.isin(y[~unlabeled], (0, 1)).all()
    if not ok:
        raise ValueError("targets must be 0/1 multi-hot rows or all -1 for unlabeled")
    return y.astype(np.int64)
