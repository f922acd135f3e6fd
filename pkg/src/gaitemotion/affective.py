"""Scale-free posture features (angles, distance ratios, area ratios).

Every feature is computed per frame and scaled into ``[0, 1]``: angles are
divided by pi, ratios go through ``r / (1 + r)``.  Rows follow the order of
:data:`FEATURES`.
"""

from __future__ import annotations

import csv
from collections import namedtuple

import numpy as np

from .exceptions import EmptyError, ShapeError
from .labels_metrics import CLASS_NAMES, to_multihot
from .skeleton import canonical_skeleton

EPS = 1e-8
AREA_EPS = 1e-12

Feature = namedtuple("Feature", "name kind joints")

# angle: (a, b, apex); distance: (p1, p2, p3, p4); area: (t1 x3, t2 x3)
FEATURES = (
    Feature("shoulders_at_lower_back", "angle", ("left_shoulder", "right_shoulder", "lower_back")),
    Feature("hands_at_root", "angle", ("left_hand", "right_hand", "root")),
    Feature("left_shoulder_hand_at_elbow", "angle", ("left_shoulder", "left_hand", "left_elbow")),
    Feature("right_shoulder_hand_at_elbow", "angle", ("right_shoulder", "right_hand", "right_elbow")),
    Feature("head_left_shoulder_at_neck", "angle", ("head", "left_shoulder", "neck")),
    Feature("head_right_shoulder_at_neck", "angle", ("head", "right_shoulder", "neck")),
    Feature("head_left_knee_at_root", "angle", ("head", "left_knee", "root")),
    Feature("head_right_knee_at_root", "angle", ("head", "right_knee", "root")),
    Feature("toes_at_root", "angle", ("left_toe", "right_toe", "root")),
    Feature("left_hip_toe_at_knee", "angle", ("left_hip", "left_toe", "left_knee")),
    Feature("right_hip_toe_at_knee", "angle", ("right_hip", "right_toe", "right_knee")),
    Feature("lhi_neck_over_lhi_root", "distance", ("left_hand_index", "neck", "left_hand_index", "root")),
    Feature("rhi_neck_over_rhi_root", "distance", ("right_hand_index", "neck", "right_hand_index", "root")),
    Feature("lhi_rhi_over_neck_root", "distance", ("left_hand_index", "right_hand_index", "neck", "root")),
    Feature("toes_over_neck_root", "distance", ("left_toe", "right_toe", "neck", "root")),
    Feature(
        "shoulders_lower_back_over_shoulders_root",
        "area",
        ("left_shoulder", "right_shoulder", "lower_back", "left_shoulder", "right_shoulder", "root"),
    ),
    Feature(
        "hands_lower_back_over_hands_root",
        "area",
        ("left_hand", "right_hand", "lower_back", "left_hand", "right_hand", "root"),
    ),
    Feature(
        "hand_indices_neck_over_toes_root",
        "area",
        ("left_hand_index", "right_hand_index", "neck", "left_toe", "right_toe", "root"),
    ),
)
N_FEATURES = len(FEATURES)
FEATURE_NAMES = tuple(f.name for f in FEATURES)


def angle_at(a, b, apex):
    """Angle in ``[0, pi]`` subtended by ``a`` and ``b`` at ``apex``.

    Returns 0 when either arm is shorter than 1e-8.
    """
    u = np.asarray(a, dtype=float) - np.asarray(apex, dtype=float)
    v = np.asarray(b, dtype=float) - np.asarray(apex, dtype=float)
    nu = np.linalg.norm(u, axis=-1)
    nv = np.linalg.norm(v, axis=-1)
    # atan2 form stays accurate near 0 and pi
    ang = np.arctan2(np.linalg.norm(np.cross(u, v), axis=-1), np.sum(u * v, axis=-1))
    return np.where((nu < EPS) | (nv < EPS), 0.0, ang)


def distance_ratio(p1, p2, p3, p4):
    num = np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float), axis=-1)
    den = np.linalg.norm(np.asarray(p3, dtype=float) - np.asarray(p4, dtype=float), axis=-1)
    small = den < EPS
    return np.where(small, 0.0, num / np.where(small, 1.0, den))


def triangle_area(p1, p2, p3):
    p1 = np.asarray(p1, dtype=float)
    return 0.5 * np.linalg.norm(np.cross(np.asarray(p2) - p1, np.asarray(p3) - p1), axis=-1)


def area_ratio(t1, t2):
    """Area of triangle ``t1`` over area of ``t2`` (0 if ``t2`` is degenerate)."""
    num = triangle_area(*t1)
    den = triangle_area(*t2)
    small = den < AREA_EPS
    return np.where(small, 0.0, num / np.where(small, 1.0, den))


def raw_features(positions, skel=None):
    """Unscaled features, shape ``(18, T)`` for ``(T, J, 3)`` input."""
    skel = skel or canonical_skeleton()
    positions = np.asarray(positions, dtype=float)
    if positions.ndim < 2 or positions.shape[-2:] != (skel.n_joints, 3):
        raise ShapeError(f"expected (..., {skel.n_joints}, 3) positions, got {positions.shape}")
    rows = []
    for feat in FEATURES:
        pts = [positions[..., skel.index(j), :] for j in feat.joints]
        if feat.kind == "angle":
            rows.append(angle_at(*pts))
        elif feat.kind == "distance":
            rows.append(distance_ratio(*pts))
        else:
            rows.append(area_ratio(pts[:3], pts[3:]))
    return np.stack(rows, axis=-2)


def scale_features(raw):
    raw = np.asarray(raw, dtype=float)
    scaled = raw / (1.0 + raw)
    kinds = np.array([f.kind == "angle" for f in FEATURES])
    return np.where(kinds[:, None], raw / np.pi, scaled)


def extract_affective(positions, skel=None):
    """Scaled ``(18, T)`` affective matrix (``(N, 18, T)`` for a batch)."""
    return np.clip(scale_features(raw_features(positions, skel)), 0.0, 1.0)


def mean_feature_histograms(positions, label_probs, bins=10, n_features=N_FEATURES, skel=None):
    """Per-class histograms of time-averaged affective features.

    Args:
        positions: iterable of preprocessed ``(T, J, 3)`` gaits.
        label_probs: matching annotation vectors, ``None`` for unlabeled.
        bins: number of equal-width bins over ``[0, 1]``.

    Returns:
        List of row dicts ``feature, class, bin_left, bin_right, count``.
        A gait with several labels is counted once for each of its classes.
    """
    means, labels = [], []
    for pos, probs in zip(positions, label_probs):
        if probs is None:
            continue
        means.append(extract_affective(pos, skel).mean(axis=-1))
        labels.append(to_multihot(probs))
    if not means:
        raise EmptyError("no labeled samples to histogram")
    means = np.asarray(means)
    labels = np.asarray(labels, dtype=bool)
    edges = np.linspace(0.0, 1.0, bins + 1)
    rows = []
    for f in range(n_features):
        for c, cls in enumerate(CLASS_NAMES):
            counts, _ = np.histogram(means[labels[:, c], f], bins=edges)
            for k in range(bins):
                rows.append(
                    {
                        "feature": FEATURE_NAMES[f],
                        "class": cls,
                        "bin_left": float(edges[k]),
                        "bin_right": float(edges[k + 1]),
                        "count": int(counts[k]),
                    }
                )
    return rows


def histogram_mean(rows, feature, cls):
    """Mass-weighted bin-centre mean of one class histogram."""
    sel = [r for r in rows if r["feature"] == feature and r["class"] == cls]
    mass = sum(r["count"] for r in sel)
    if mass == 0:
        return float("nan")
    return sum(r["count"] * 0.5 * (r["bin_left"] + r["bin_right"]) for r in sel) / mass


def write_histogram_csv(rows, path, header_lines=()):
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.DictWriter(fh, fieldnames=["feature", "class", "bin_left", "bin_right", "count"])
        writer.writeheader()
        writer.writerows(rows)
