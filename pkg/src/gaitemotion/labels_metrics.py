"""Multi-hot labels, class weights and average-precision scoring."""

import numpy as np

from .exceptions import EmptyError, ShapeError, UndefinedAPError

CLASS_NAMES = ("happy", "sad", "angry", "neutral")
N_CLASSES = len(CLASS_NAMES)


def to_multihot(probs):
    """Set a class bit when its probability exceeds chance (strictly ``> 1/C``)."""
    probs = np.asarray(probs, dtype=float)
    return (probs > 1.0 / probs.shape[-1]).astype(np.int64)


def class_weights(train_labels):
    """Weights ``exp(-p_l)`` from the class frequencies of the labeled set.

    Raises:
        EmptyError: if ``train_labels`` is empty.
    """
    labels = np.asarray(train_labels, dtype=float)
    if labels.size == 0:
        raise EmptyError("class weights need at least one labeled sample")
    labels = labels.reshape(-1, labels.shape[-1])
    return np.exp(-labels.mean(axis=0))


def average_precision(scores, relevant):
    """Non-interpolated AP over the descending-score ranking.

    ``sum_k (R_k - R_{k-1}) * P_k``; tied scores keep their input order.

    Raises:
        UndefinedAPError: if nothing is relevant.
    """
    scores = np.asarray(scores, dtype=float).ravel()
    relevant = np.asarray(relevant).astype(bool).ravel()
    n_pos = relevant.sum()
    if n_pos == 0:
        raise UndefinedAPError("average precision needs at least one relevant item")
    order = np.argsort(-scores, kind="stable")
    hits = relevant[order]
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at[hits].sum() / n_pos)


def evaluate(pred_probs, truths, class_names=CLASS_NAMES):
    """Per-class AP and their unweighted mean.

    Classes without any positive in ``truths`` are skipped and listed under
    ``skipped_classes``; ``map`` is NaN if every class is skipped.
    """
    pred = np.asarray(pred_probs, dtype=float)
    truth = np.asarray(truths)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != len(class_names):
        raise ShapeError(f"prediction {pred.shape} and truth {truth.shape} do not match")
    ap, skipped = {}, []
    for c, name in enumerate(class_names):
        if not truth[:, c].any():
            skipped.append(name)
            continue
        ap[name] = average_precision(pred[:, c], truth[:, c])
    return {"ap": ap, "map": mean_ap(ap), "skipped_classes": skipped}


def mean_ap(ap):
    """Unweighted mean of a ``{class: AP}`` mapping; NaN when empty."""
    return float(np.mean(list(ap.values()))) if ap else float("nan")


def mean_average_precision(pred_probs, truths):
    return evaluate(pred_probs, truths)["map"]
