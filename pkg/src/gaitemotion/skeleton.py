"""Canonical 21-joint body model and joint remapping.

The joint naming follows the usual motion-capture convention (root at the
pelvis, y axis up).  The exact numbering used by the original ELMD data is not
available, so the ordering below is a stand-in: every joint referenced by the
affective features is present and the remaining slots are filled with spine
segments.

Joint order (index: name, parent)::

     0 root            -
     1 lower_back      root
     2 spine           lower_back
     3 spine1          spine
     4 spine2          spine1
     5 neck            spine2
     6 head            neck
     7 left_shoulder   spine2
     8 left_elbow      left_shoulder
     9 left_hand       left_elbow
    10 left_hand_index left_hand
    11 right_shoulder  spine2
    12 right_elbow     right_shoulder
    13 right_hand      right_elbow
    14 right_hand_index right_hand
    15 left_hip        root
    16 left_knee       left_hip
    17 left_toe        left_knee
    18 right_hip       root
    19 right_knee      right_hip
    20 right_toe       right_knee

JSON layout of a skeleton::

    {"joint_names": [...21 names...],
     "parent": {"lower_back": "root", ...},          # root omitted
     "part_groups": {"left_arm": [...names...], ...}}

JSON layout of a joint map::

    {"source_names": [...], "target": {"<source name>": "<canonical name>" | null}}

where ``null`` drops the source joint.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from .exceptions import MappingError, SchemaError

DROP = None

JOINT_NAMES = (
    "root",
    "lower_back",
    "spine",
    "spine1",
    "spine2",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_hand",
    "left_hand_index",
    "right_shoulder",
    "right_elbow",
    "right_hand",
    "right_hand_index",
    "left_hip",
    "left_knee",
    "left_toe",
    "right_hip",
    "right_knee",
    "right_toe",
)

_PARENTS = {
    "lower_back": "root",
    "spine": "lower_back",
    "spine1": "spine",
    "spine2": "spine1",
    "neck": "spine2",
    "head": "neck",
    "left_shoulder": "spine2",
    "left_elbow": "left_shoulder",
    "left_hand": "left_elbow",
    "left_hand_index": "left_hand",
    "right_shoulder": "spine2",
    "right_elbow": "right_shoulder",
    "right_hand": "right_elbow",
    "right_hand_index": "right_hand",
    "left_hip": "root",
    "left_knee": "left_hip",
    "left_toe": "left_knee",
    "right_hip": "root",
    "right_knee": "right_hip",
    "right_toe": "right_knee",
}

PART_NAMES = ("left_arm", "right_arm", "left_leg", "right_leg", "torso")

_PART_GROUPS = {
    "left_arm": ("left_shoulder", "left_elbow", "left_hand", "left_hand_index"),
    "right_arm": ("right_shoulder", "right_elbow", "right_hand", "right_hand_index"),
    "left_leg": ("left_hip", "left_knee", "left_toe"),
    "right_leg": ("right_hip", "right_knee", "right_toe"),
    "torso": ("root", "lower_back", "spine", "spine1", "spine2", "neck", "head"),
}


@dataclass(frozen=True)
class Skeleton:
    """Joint names, parent links and the kinematic part groups.

    ``parent`` maps joint name to parent name; the root is absent from it.
    ``part_groups`` maps a part name to the joint names it owns.
    """

    joint_names: tuple
    parent: Mapping[str, str]
    part_groups: Mapping[str, tuple]
    root: str = "root"

    def __post_init__(self):
        object.__setattr__(self, "joint_names", tuple(self.joint_names))
        object.__setattr__(self, "parent", MappingProxyType(dict(self.parent)))
        object.__setattr__(
            self,
            "part_groups",
            MappingProxyType({k: tuple(v) for k, v in self.part_groups.items()}),
        )
        self.validate()

    @property
    def n_joints(self) -> int:
        return len(self.joint_names)

    def index(self, name: str) -> int:
        try:
            return self.joint_names.index(name)
        except ValueError:
            raise KeyError(f"unknown joint {name!r}") from None

    def validate(self) -> None:
        names = set(self.joint_names)
        if len(names) != len(self.joint_names):
            raise SchemaError("duplicate joint names")
        if self.root not in names or self.root in self.parent:
            raise SchemaError("root must be a joint without a parent")
        for child, par in self.parent.items():
            if child not in names or par not in names:
                raise SchemaError(f"bad parent link {child!r} -> {par!r}")
        missing = names - set(self.parent) - {self.root}
        if missing:
            raise SchemaError(f"joints without parent: {sorted(missing)}")
        for j in self.joint_names:
            self.depth(j)
        seen = []
        for members in self.part_groups.values():
            seen.extend(members)
        if sorted(seen) != sorted(self.joint_names):
            raise SchemaError("part groups must partition the joint set")

    def depth(self, joint: str) -> int:
        """Number of parent hops from ``joint`` to the root."""
        steps = 0
        while joint != self.root:
            joint = self.parent[joint]
            steps += 1
            if steps > len(self.joint_names):
                raise SchemaError("parent links contain a cycle")
        return steps

    def part_of(self, joint: str) -> str:
        for part, members in self.part_groups.items():
            if joint in members:
                return part
        raise KeyError(joint)

    @property
    def parent_indices(self) -> np.ndarray:
        """Parent index per joint, -1 for the root."""
        return np.array(
            [self.index(self.parent[j]) if j in self.parent else -1 for j in self.joint_names]
        )

    @property
    def bone_parents(self) -> np.ndarray:
        """Index of the joint each bone vector starts from.

        Same as ``parent_indices`` except the root, whose bone is taken from
        the root to its spine child: entry ``r`` holds ``r`` and the bone tip
        comes from :attr:`bone_tips`.
        """
        par = self.parent_indices
        par[self.index(self.root)] = self.index(self.root)
        return par

    @property
    def bone_tips(self) -> np.ndarray:
        tips = np.arange(self.n_joints)
        children = [j for j, p in self.parent.items() if p == self.root]
        spine_child = "lower_back" if "lower_back" in children else children[0]
        tips[self.index(self.root)] = self.index(spine_child)
        return tips

    def group_indices(self) -> list:
        """Joint indices per part, in ``part_groups`` order, each sorted."""
        return [sorted(self.index(j) for j in m) for m in self.part_groups.values()]

    def to_dict(self) -> dict:
        return {
            "joint_names": list(self.joint_names),
            "parent": dict(self.parent),
            "part_groups": {k: list(v) for k, v in self.part_groups.items()},
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Skeleton":
        return cls(doc["joint_names"], doc["parent"], doc["part_groups"], doc.get("root", "root"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Skeleton":
        return cls.from_dict(json.loads(text))


@lru_cache(maxsize=None)
def canonical_skeleton() -> Skeleton:
    return Skeleton(JOINT_NAMES, _PARENTS, _PART_GROUPS)


@dataclass(frozen=True)
class JointMap:
    """Assignment of a foreign joint set onto the canonical joints.

    ``target`` maps each source name to a canonical joint name, or to
    ``DROP`` (``None``) when the joint is discarded.
    """

    source_names: tuple
    target: Mapping[str, str | None] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "source_names", tuple(self.source_names))
        object.__setattr__(self, "target", MappingProxyType(dict(self.target)))

    def source_index(self, skel: Skeleton | None = None) -> np.ndarray:
        """Source position feeding each canonical joint, in canonical order."""
        skel = skel or canonical_skeleton()
        hits = {}
        for i, name in enumerate(self.source_names):
            dst = self.target.get(name, DROP)
            if dst is DROP:
                continue
            if dst not in skel.joint_names:
                raise MappingError(f"source joint {name!r} maps to unknown joint {dst!r}")
            if dst in hits:
                raise MappingError(f"canonical joint {dst!r} is hit more than once")
            hits[dst] = i
        for joint in skel.joint_names:
            if joint not in hits:
                raise MappingError(f"canonical joint {joint!r} has no source joint")
        return np.array([hits[j] for j in skel.joint_names])

    @classmethod
    def identity(cls, skel: Skeleton | None = None) -> "JointMap":
        skel = skel or canonical_skeleton()
        return cls(skel.joint_names, {j: j for j in skel.joint_names})

    def to_dict(self) -> dict:
        return {"source_names": list(self.source_names), "target": dict(self.target)}

    @classmethod
    def from_dict(cls, doc: dict) -> "JointMap":
        return cls(doc["source_names"], doc["target"])


def remap_pose(frame: Sequence, joint_map: JointMap, skel: Skeleton | None = None) -> np.ndarray:
    """Reorder one frame (or a ``(T, S, 3)`` sequence) into canonical joints.

    Raises:
        MappingError: if a canonical joint receives no source joint.
        ValueError: if the frame length does not match the map.
    """
    arr = np.asarray(frame, dtype=float)
    if arr.shape[-2] != len(joint_map.source_names):
        raise ValueError(
            f"frame has {arr.shape[-2]} joints, map expects {len(joint_map.source_names)}"
        )
    return arr[..., joint_map.source_index(skel), :]
