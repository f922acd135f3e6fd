"""Quaternion helpers and per-joint rotation extraction from positions.

Conventions:

- Quaternions are ``(w, x, y, z)`` arrays; every function broadcasts over
  leading axes.
- Euler angles are intrinsic X-Y-Z: ``R = Rx(rx) @ Ry(ry) @ Rz(rz)``, each
  angle reported in ``[0, 2*pi)``.
- Rotation tensors are laid out joints first: ``(J, T, 4)``.
"""

import numpy as np

from .exceptions import DegenerateQuatError, ShapeError

EPS = 1e-8
TWO_PI = 2.0 * np.pi
IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
_UP = np.array([0.0, 1.0, 0.0])
_SIDE = np.array([1.0, 0.0, 0.0])


def quat_norm(q):
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_mul(a, b):
    """Hamilton product ``a * b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate 3-vectors ``v`` by unit quaternions ``q``."""
    v = np.asarray(v, dtype=float)
    pure = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return quat_mul(quat_mul(q, pure), quat_conj(q))[..., 1:]


def hemisphere(q):
    """Pick the representative with non-negative scalar part."""
    q = np.asarray(q, dtype=float)
    return np.where(q[..., :1] < 0, -q, q)


def shortest_arc(u, v):
    """Minimal rotation taking direction ``u`` onto direction ``v``.

    Zero-length inputs (norm below 1e-8) give the identity.  Opposite
    directions give a half turn about ``u x up`` (or ``u x x-axis`` when ``u``
    is vertical), so the function is total and deterministic.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    u, v = np.broadcast_arrays(u, v)
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nv = np.linalg.norm(v, axis=-1, keepdims=True)
    degenerate = (nu < EPS) | (nv < EPS)
    un = u / np.where(degenerate, 1.0, nu)
    vn = v / np.where(degenerate, 1.0, nv)

    dot = np.sum(un * vn, axis=-1, keepdims=True)
    q = np.concatenate([1.0 + dot, np.cross(un, vn)], axis=-1)
    qn = np.linalg.norm(q, axis=-1, keepdims=True)
    antipodal = (~degenerate) & (qn < 1e-7)

    if np.any(antipodal):
        axis = np.cross(un, _UP)
        vertical = np.linalg.norm(axis, axis=-1, keepdims=True) < EPS
        axis = np.where(vertical, np.cross(un, _SIDE), axis)
        axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
        half_turn = np.concatenate([np.zeros_like(dot), axis], axis=-1)
        q = np.where(antipodal, half_turn, q)
        qn = np.where(antipodal, 1.0, qn)

    q = q / np.where(degenerate, 1.0, qn)
    return np.where(degenerate, IDENTITY, q)


def quat_to_matrix(q):
    """Rotation matrices for (internally normalized) quaternions."""
    q = np.asarray(q, dtype=float)
    n = quat_norm(q)
    if np.any(n == 0):
        raise DegenerateQuatError("zero quaternion has no rotation")
    w, x, y, z = np.moveaxis(q / n[..., None], -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def euler_to_matrix(angles):
    """Matrix of intrinsic X-Y-Z angles ``(..., 3)``."""
    a, b, c = np.moveaxis(np.asarray(angles, dtype=float), -1, 0)
    ca, sa, cb, sb, cc, sc = np.cos(a), np.sin(a), np.cos(b), np.sin(b), np.cos(c), np.sin(c)
    return np.stack(
        [
            np.stack([cb * cc, -cb * sc, sb], -1),
            np.stack([ca * sc + sa * sb * cc, ca * cc - sa * sb * sc, -sa * cb], -1),
            np.stack([sa * sc - ca * sb * cc, sa * cc + ca * sb * sc, ca * cb], -1),
        ],
        axis=-2,
    )


def matrix_to_euler(m):
    """Intrinsic X-Y-Z angles in ``[0, 2*pi)``; ``rz = 0`` at gimbal lock."""
    m = np.asarray(m, dtype=float)
    cos_b = np.hypot(m[..., 0, 0], m[..., 0, 1])
    lock = cos_b < 1e-9
    b = np.arctan2(m[..., 0, 2], cos_b)
    a = np.where(lock, np.arctan2(m[..., 2, 1], m[..., 1, 1]), np.arctan2(-m[..., 1, 2], m[..., 2, 2]))
    c = np.where(lock, 0.0, np.arctan2(-m[..., 0, 1], m[..., 0, 0]))
    return wrap_2pi(np.stack([a, b, c], axis=-1))


def wrap_2pi(angles):
    out = np.mod(angles, TWO_PI)
    return np.where(out >= TWO_PI, 0.0, out)


def quat_to_euler(q):
    """Euler triple(s) for quaternion(s); ``q`` and ``-q`` agree exactly.

    Raises:
        DegenerateQuatError: for an exactly zero quaternion.
    """
    return matrix_to_euler(quat_to_matrix(q))


def bone_vectors(positions, skel):
    """Per-joint bone vectors of a ``(..., J, 3)`` array."""
    positions = np.asarray(positions, dtype=float)
    return positions[..., skel.bone_tips, :] - positions[..., skel.bone_parents, :]


def extract_rotations(positions, skel):
    """Rotation of every bone from the first frame to each frame.

    Args:
        positions: ``(T, J, 3)`` joint positions, or a batch ``(N, T, J, 3)``.
        skel: the skeleton supplying parent links.

    Returns:
        Unit quaternions shaped ``(J, T, 4)`` (``(N, J, T, 4)`` for a batch),
        hemisphere-normalized so that ``w >= 0``.
    """
    positions = np.asarray(positions, dtype=float)
    if positions.ndim not in (3, 4) or positions.shape[-2:] != (skel.n_joints, 3):
        raise ShapeError(f"expected (T, {skel.n_joints}, 3) positions, got {positions.shape}")
    bones = bone_vectors(positions, skel)
    first = bones[..., :1, :, :]
    q = hemisphere(shortest_arc(first, bones))
    return np.swapaxes(q, -3, -2)
