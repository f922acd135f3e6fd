import json

import numpy as np
import pytest

from gaitemotion.exceptions import MappingError
from gaitemotion.skeleton import PART_NAMES, JointMap, Skeleton, canonical_skeleton, remap_pose


def test_has_21_joints(skel):
    assert skel.n_joints == 21
    assert len(set(skel.joint_names)) == 21


def test_root_has_no_parent(skel):
    assert "root" not in skel.parent
    assert skel.parent_indices[skel.index("root")] == -1


def test_part_groups_partition(skel):
    assert tuple(skel.part_groups) == PART_NAMES
    members = [j for g in skel.part_groups.values() for j in g]
    assert sorted(members) == sorted(skel.joint_names)
    assert len(members) == len(set(members))


def test_every_joint_reaches_root(skel):
    for j in skel.joint_names:
        assert skel.depth(j) <= 20


def test_part_of_is_total(skel):
    for j in skel.joint_names:
        assert skel.part_of(j) in PART_NAMES


@pytest.mark.parametrize(
    "part, chain",
    [
        ("left_arm", ["left_shoulder", "left_elbow", "left_hand", "left_hand_index"]),
        ("right_arm", ["right_shoulder", "right_elbow", "right_hand", "right_hand_index"]),
        ("left_leg", ["left_hip", "left_knee", "left_toe"]),
        ("right_leg", ["right_hip", "right_knee", "right_toe"]),
        ("torso", ["root", "lower_back", "spine", "neck", "head"]),
    ],
)
def test_part_contents(skel, part, chain):
    assert set(chain) <= set(skel.part_groups[part])


def test_deterministic():
    assert canonical_skeleton().to_dict() == canonical_skeleton().to_dict()


def test_root_bone_uses_spine_child(skel):
    r = skel.index("root")
    assert skel.bone_parents[r] == r
    assert skel.bone_tips[r] == skel.index("lower_back")


def test_json_round_trip(skel):
    again = Skeleton.from_json(skel.to_json())
    assert again.to_dict() == skel.to_dict()
    json.loads(skel.to_json())


def test_cycle_rejected():
    names = ("root", "a", "b")
    with pytest.raises(Exception):
        Skeleton(names, {"a": "b", "b": "a"}, {"all": names})


def test_remap_identity(skel, rng):
    frame = rng.normal(size=(21, 3))
    np.testing.assert_array_equal(remap_pose(frame, JointMap.identity(skel)), frame)


def test_remap_missing_joint(skel, rng):
    target = {j: j for j in skel.joint_names}
    target["head"] = None
    jm = JointMap(skel.joint_names, target)
    with pytest.raises(MappingError, match="head"):
        remap_pose(rng.normal(size=(21, 3)), jm)


def test_remap_25_joint_source(skel, rng):
    # hand-permuted canonical frame with 4 extra joints interleaved
    canonical = rng.normal(size=(21, 3))
    perm = rng.permutation(21)
    extras = ["extra_a", "extra_b", "extra_c", "extra_d"]
    source_names = [f"src_{skel.joint_names[i]}" for i in perm]
    source = [canonical[i] for i in perm]
    for k, name in enumerate(extras):
        pos = 3 * k + 1
        source_names.insert(pos, name)
        source.insert(pos, rng.normal(size=3))
    target = {n: (None if n in extras else n[4:]) for n in source_names}
    jm = JointMap(source_names, target)
    out = remap_pose(np.array(source), jm)
    assert out.shape == (21, 3)
    for i in range(21):
        np.testing.assert_array_equal(out[i], canonical[i])


def test_remap_sequence(skel, rng):
    seq = rng.normal(size=(5, 21, 3))
    np.testing.assert_array_equal(remap_pose(seq, JointMap.identity(skel)), seq)


def test_jointmap_round_trip(skel):
    jm = JointMap.identity(skel)
    assert JointMap.from_dict(json.loads(json.dumps(jm.to_dict()))) == jm
