"""Gait datasets: JSON-lines I/O, temporal preprocessing, splits, synthesis.

A dataset file holds one JSON object per line::

    {"id": "g0001",
     "frames": [[[x, y, z], ... 21 joints], ... T_raw frames],
     "label_probs": [happy, sad, angry, neutral] or null,
     "source": "bml" (optional)}

The preprocessed cache is a compressed ``.npz`` archive holding one array
per sample id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from .exceptions import EmptyGaitError, ParseError, SchemaError, SplitError
from .labels_metrics import CLASS_NAMES, N_CLASSES, to_multihot
from .skeleton import canonical_skeleton

CLIP_FRAMES = 240
STRIDE = 5
N_FRAMES = CLIP_FRAMES // STRIDE
N_JOINTS = 21

SPLITS = ("train", "val", "test")


@dataclass(frozen=True, eq=False)
class GaitSample:
    id: str
    positions: np.ndarray
    label_probs: Optional[np.ndarray] = None
    source: Optional[str] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 3 or pos.shape[1:] != (N_JOINTS, 3):
            raise SchemaError(
                f"sample {self.id!r}: frames must be T x {N_JOINTS} x 3, got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise SchemaError(f"sample {self.id!r}: non-finite joint position")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.label_probs is not None:
            probs = np.asarray(self.label_probs, dtype=float)
            if probs.shape != (N_CLASSES,):
                raise SchemaError(f"sample {self.id!r}: label_probs must have {N_CLASSES} entries")
            if not np.all((probs >= 0) & (probs <= 1)):
                raise SchemaError(f"sample {self.id!r}: label_probs entries must lie in [0, 1]")
            probs.setflags(write=False)
            object.__setattr__(self, "label_probs", probs)

    @property
    def labeled(self) -> bool:
        return self.label_probs is not None

    @property
    def multihot(self):
        return None if self.label_probs is None else to_multihot(self.label_probs)

    def to_record(self) -> dict:
        rec = {
            "id": self.id,
            "frames": self.positions.tolist(),
            "label_probs": None if self.label_probs is None else self.label_probs.tolist(),
        }
        if self.source is not None:
            rec["source"] = self.source
        return rec


@dataclass(frozen=True)
class Dataset:
    samples: tuple
    split_assignment: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "split_assignment", MappingProxyType(dict(self.split_assignment)))
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise SchemaError("duplicate sample ids")

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def labeled(self) -> list:
        return [s for s in self.samples if s.labeled]

    @property
    def unlabeled(self) -> list:
        return [s for s in self.samples if not s.labeled]

    def split(self, name: str) -> list:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return [s for s in self.samples if self.split_assignment.get(s.id) == name]

    def with_samples(self, samples) -> "Dataset":
        keep = {s.id for s in samples}
        return Dataset(samples, {k: v for k, v in self.split_assignment.items() if k in keep})


def _parse_record(rec, line_no):
    if not isinstance(rec, dict):
        raise ParseError("record is not a JSON object", line_no)
    for key in ("id", "frames"):
        if key not in rec:
            raise ParseError(f"missing field {key!r}", line_no)
    try:
        frames = np.asarray(rec["frames"], dtype=float)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"line {line_no}: frames are not a numeric T x J x 3 array") from exc
    if frames.ndim != 3 or frames.shape[1:] != (N_JOINTS, 3):
        raise SchemaError(
            f"line {line_no}: expected frames of {N_JOINTS} joints x 3, got shape {frames.shape}"
        )
    if frames.shape[0] == 0:
        raise SchemaError(f"line {line_no}: record has no frames")
    try:
        return GaitSample(str(rec["id"]), frames, rec.get("label_probs"), rec.get("source"))
    except SchemaError as exc:
        raise SchemaError(f"line {line_no}: {exc}") from None


def load_dataset(path) -> Dataset:
    """Read a JSON-lines dataset, validating every record.

    Raises:
        ParseError: malformed JSON or missing fields (with line number).
        SchemaError: wrong joint count, bad label vector, non-finite values.
    """
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(exc.msg, line_no) from None
            samples.append(_parse_record(rec, line_no))
    return Dataset(samples)


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in ds.samples:
            fh.write(json.dumps(s.to_record(), separators=(",", ":")))
            fh.write("\n")


def preprocess_temporal(sample, clip=CLIP_FRAMES, stride=STRIDE) -> np.ndarray:
    """Clip or zero-pad to ``clip`` frames, then keep every ``stride``-th frame.

    Accepts a :class:`GaitSample` or a raw ``(T, J, 3)`` array.
    """
    pos = sample.positions if isinstance(sample, GaitSample) else np.asarray(sample, dtype=float)
    if pos.shape[0] == 0:
        raise EmptyGaitError("gait has no frames")
    out = np.zeros((clip,) + pos.shape[1:])
    n = min(clip, pos.shape[0])
    out[:n] = pos[:n]
    return out[::stride]


def split_dataset(ds: Dataset, seed: int) -> Dataset:
    """Assign labeled samples 8:1:1 to train/val/test, unlabeled to train.

    When every labeled sample carries a ``source``, whole sources are moved
    to the test split so test sources never appear in train or val.
    """
    labeled = ds.labeled
    n = len(labeled)
    if n < 10:
        raise SplitError(f"need at least 10 labeled samples to split, got {n}")
    rng = np.random.default_rng(seed)
    n_test = n_val = int(round(n / 10))
    assignment = {s.id: "train" for s in ds.unlabeled}

    sources = [s.source for s in labeled]
    if all(src is not None for src in sources) and len(set(sources)) > 1:
        names = sorted(set(sources))
        rng.shuffle(names)
        test_sources, count = set(), 0
        for name in names[:-1]:
            if count >= n_test:
                break
            test_sources.add(name)
            count += sources.count(name)
        test = [s for s in labeled if s.source in test_sources]
        rest = [s for s in labeled if s.source not in test_sources]
    else:
        order = rng.permutation(n)
        test = [labeled[i] for i in order[:n_test]]
        rest = [labeled[i] for i in order[n_test:]]
    order = rng.permutation(len(rest))
    for k, i in enumerate(order):
        assignment[rest[i].id] = "val" if k < n_val else "train"
    for s in test:
        assignment[s.id] = "test"
    return Dataset(ds.samples, assignment)


def save_cache(path, arrays: Mapping[str, np.ndarray]) -> None:
    np.savez_compressed(path, **{k: np.asarray(v) for k, v in arrays.items()})


def load_cache(path) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}


# --- synthetic corpus -----------------------------------------------------

# Walk-cycle parameters per class:
#   arm: arm swing amplitude (rad)     leg: hip swing amplitude (rad)
#   knee: peak knee flexion (rad)      elbow: static elbow bend (rad)
#   pitch: forward lean of the torso   width: shoulder width factor
#   head: extra head drop (rad)        cycle: frames per gait cycle
#   bounce: vertical bob (m)           twist: torso counter-rotation (rad)
PROFILES = {
    "happy": dict(arm=0.55, leg=0.45, knee=0.65, elbow=0.25, pitch=-0.05, width=1.08, head=-0.15, cycle=95.0, bounce=0.035, twist=0.12),
    "sad": dict(arm=0.10, leg=0.22, knee=0.35, elbow=0.10, pitch=0.30, width=0.72, head=0.45, cycle=145.0, bounce=0.005, twist=0.03),
    "angry": dict(arm=0.65, leg=0.50, knee=0.50, elbow=0.95, pitch=0.16, width=1.00, head=0.10, cycle=78.0, bounce=0.012, twist=0.20),
    "neutral": dict(arm=0.30, leg=0.34, knee=0.45, elbow=0.18, pitch=0.04, width=0.92, head=0.02, cycle=112.0, bounce=0.015, twist=0.08),
}
_PARAM_NAMES = tuple(PROFILES["happy"])
_PROFILE_MATRIX = np.array([[PROFILES[c][p] for p in _PARAM_NAMES] for c in CLASS_NAMES])
# per-parameter jitter, as a fraction of the parameter's spread across classes
_JITTER = 0.15
PRIMARY_PRIOR = np.array([0.54, 0.27, 0.12, 0.07])
SECONDARY_RATE = 0.24
# happy and sad are never blended: annotators rarely see both in one walk,
# and their midpoint would sit on top of the neutral profile
_NO_BLEND = {(0, 1), (1, 0)}
N_ANNOTATORS = 10


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rx_batch(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry_batch(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _apply(rot, vec):
    return np.einsum("...ij,...j->...i", rot, np.broadcast_to(vec, rot.shape[:-1]))


def walk_cycle(params: Mapping[str, float], n_frames: int, phase0: float = 0.0) -> np.ndarray:
    """Procedural walk on the canonical skeleton, ``(n_frames, 21, 3)``.

    y is up and the walker heads along +z.  Arms swing in opposition to the
    legs; the torso leans forward by ``pitch`` and the shoulders are pulled
    in (and forward) when ``width`` drops below 1.
    """
    skel = canonical_skeleton()
    p = dict(params)
    t = np.arange(n_frames)
    phase = phase0 + 2 * np.pi * t / p["cycle"]
    pos = np.zeros((n_frames, skel.n_joints, 3))
    J = skel.index

    stride_len = 2 * 0.9 * math.sin(max(p["leg"], 0.05))
    root = np.stack(
        [
            np.zeros(n_frames),
            0.95 + p["bounce"] * np.abs(np.sin(phase)),
            stride_len * phase / (2 * np.pi),
        ],
        -1,
    )
    pos[:, J("root")] = root
    twist = _ry_batch(p["twist"] * np.sin(phase))
    pelvis = _ry_batch(-0.5 * p["twist"] * np.sin(phase))

    # spine curls forward progressively up the chain
    lean = _rx(0.0)
    cur = root
    for name, length, frac in (("lower_back", 0.10, 0.15), ("spine", 0.12, 0.25), ("spine1", 0.12, 0.30), ("spine2", 0.12, 0.30)):
        lean = lean @ _rx(p["pitch"] * frac)
        cur = cur + _apply(twist @ lean, np.array([0.0, length, 0.0]))
        pos[:, J(name)] = cur
    chest = twist @ lean
    neck = cur + _apply(chest, np.array([0.0, 0.13, 0.0]))
    pos[:, J("neck")] = neck
    pos[:, J("head")] = neck + _apply(chest @ _rx(p["head"]), np.array([0.0, 0.16, 0.0]))

    narrow = 1.0 - p["width"]
    for side, sign, leg_phase in (("left", 1.0, 0.0), ("right", -1.0, np.pi)):
        shoulder = cur + _apply(chest, np.array([sign * 0.18 * p["width"], 0.06, 0.12 * narrow]))
        pos[:, J(f"{side}_shoulder")] = shoulder
        swing = p["arm"] * np.sin(phase + leg_phase + np.pi)
        upper = _rx_batch(-swing)
        elbow = shoulder + _apply(upper, np.array([sign * 0.03, -0.28, 0.0]))
        flex = p["elbow"] + 0.3 * p["arm"] * (1 + np.sin(phase + leg_phase + np.pi))
        fore = upper @ _rx_batch(-flex)
        hand = elbow + _apply(fore, np.array([0.0, -0.25, 0.0]))
        pos[:, J(f"{side}_elbow")] = elbow
        pos[:, J(f"{side}_hand")] = hand
        pos[:, J(f"{side}_hand_index")] = hand + _apply(fore, np.array([0.0, -0.08, 0.0]))

        hip = root + _apply(pelvis, np.array([sign * 0.10, -0.06, 0.0]))
        hswing = p["leg"] * np.sin(phase + leg_phase)
        thigh = _rx_batch(-hswing)
        knee = hip + _apply(thigh, np.array([0.0, -0.43, 0.0]))
        kflex = p["knee"] * np.clip(np.sin(phase + leg_phase + 0.6 * np.pi), 0.0, None)
        shank = thigh @ _rx_batch(kflex)
        pos[:, J(f"{side}_hip")] = hip
        pos[:, J(f"{side}_knee")] = knee
        pos[:, J(f"{side}_toe")] = knee + _apply(shank, np.array([0.0, -0.42, 0.14]))
    return pos


def _sample_mixture(rng):
    primary = rng.choice(N_CLASSES, p=PRIMARY_PRIOR)
    mix = np.zeros(N_CLASSES)
    if rng.random() < SECONDARY_RATE:
        prior = PRIMARY_PRIOR.copy()
        prior[primary] = 0.0
        for a, b in _NO_BLEND:
            if a == primary:
                prior[b] = 0.0
        secondary = rng.choice(N_CLASSES, p=prior / prior.sum())
        w = rng.uniform(0.5, 0.7)
        mix[primary], mix[secondary] = w, 1.0 - w
    else:
        mix[primary] = 1.0
    return mix


def synth_sample(rng, sample_id: str, labeled: bool) -> GaitSample:
    """One synthetic gait whose style parameters blend the class profiles."""
    mix = _sample_mixture(rng)
    spread = _PROFILE_MATRIX.max(axis=0) - _PROFILE_MATRIX.min(axis=0)
    values = mix @ _PROFILE_MATRIX + rng.normal(0.0, _JITTER, len(_PARAM_NAMES)) * spread
    params = dict(zip(_PARAM_NAMES, values))
    params["cycle"] = max(params["cycle"], 40.0)
    params["width"] = max(params["width"], 0.5)

    n_frames = int(rng.integers(180, 321))
    pos = walk_cycle(params, n_frames, phase0=rng.uniform(0, 2 * np.pi))
    scale = rng.uniform(0.85, 1.15)
    heading = _ry(rng.uniform(-0.3, 0.3))
    offset = rng.uniform(-1.0, 1.0, 3) * np.array([1.0, 0.0, 1.0])
    pos = scale * pos @ heading.T + offset
    pos = pos + rng.normal(0.0, 0.004, pos.shape)
    pos = np.round(pos, 4)

    probs = None
    if labeled:
        annot = 0.85 * mix + 0.15 / N_CLASSES
        probs = rng.multinomial(N_ANNOTATORS, annot) / N_ANNOTATORS
    return GaitSample(sample_id, pos, probs)


def generate_synthetic(n_labeled: int, n_unlabeled: int, seed: int) -> Dataset:
    """Deterministic desk-scale corpus of labeled and unlabeled walks.

    Labeled gaits carry annotator-fraction label vectors from 10 simulated
    annotators; roughly 59/25/21/15 percent of them end up with a
    happy/sad/angry/neutral bit.
    """
    if n_labeled < 0 or n_unlabeled < 0:
        raise ValueError("sample counts must be non-negative")
    rng = np.random.default_rng(seed)
    samples = [synth_sample(rng, f"L{i:05d}", True) for i in range(n_labeled)]
    samples += [synth_sample(rng, f"U{i:05d}", False) for i in range(n_unlabeled)]
    return Dataset(samples)


def stack_preprocessed(samples) -> np.ndarray:
    return np.stack([preprocess_temporal(s) for s in samples]) if samples else np.zeros((0, N_FRAMES, N_JOINTS, 3))


def label_matrix(samples) -> np.ndarray:
    """Multi-hot rows, ``-1`` rows for unlabeled samples."""
    rows = [s.multihot if s.labeled else -np.ones(N_CLASSES, dtype=np.int64) for s in samples]
    return np.array(rows, dtype=np.int64).reshape(-1, N_CLASSES)
