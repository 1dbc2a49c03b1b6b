"""Quaternion and rotation-matrix primitives.

Quaternions are stored scalar-first, ``(w, x, y, z)``, as plain float arrays of
shape ``(..., 4)``. ``q`` and ``-q`` denote the same rotation; every function
here is even in ``q``.
"""

from __future__ import annotations

import numpy as np

UNIT_TOL = 1e-6


def check_unit(q: np.ndarray, tol: float = UNIT_TOL) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise ValueError(f"quaternion must have trailing dimension 4, got {q.shape}")
    norms = np.linalg.norm(q, axis=-1)
    if not np.all(np.isfinite(q)) or np.any(np.abs(norms - 1.0) > tol):
        raise ValueError(f"quaternion is not unit norm (|q| = {norms})")
    return q


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def random_unit_quat(rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform on S^3 (normalized isotropic Gaussian)."""
    shape = (4,) if size is None else (size, 4)
    return normalize(rng.standard_normal(shape))


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    q = check_unit(q)
    w, x, y, z = np.moveaxis(q, -1, 0)
    ww, xx, yy, zz = w * w, x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    R = np.stack(
        [
            ww + xx - yy - zz, 2 * (xy - wz), 2 * (xz + wy),
            2 * (xy + wz), ww - xx + yy - zz, 2 * (yz - wx),
            2 * (xz - wy), 2 * (yz + wx), ww - xx - yy + zz,
        ],
        axis=-1,
    )
    return R.reshape(q.shape[:-1] + (3, 3))


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Shepperd's method; returns the representative with w >= 0."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3), got {R.shape}")
    batch = R.shape[:-2]
    R = R.reshape(-1, 3, 3)
    out = np.empty((R.shape[0], 4))
    for n, m in enumerate(R):
        tr = np.trace(m)
        d = np.array([tr, m[0, 0], m[1, 1], m[2, 2]])
        k = int(np.argmax(d))
        if k == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif k == 1:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif k == 2:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] + m[1, 1] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - m[0, 0] - m[1, 1] + m[2, 2])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        out[n] = normalize(q if q[0] >= 0 else -q)
    return out.reshape(batch + (4,))


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    eye = np.eye(3)
    ortho = np.abs(np.swapaxes(R, -1, -2) @ R - eye).max() <= tol
    return bool(ortho and np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def _trace_rel(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray:
    # tr(Ra^T Rb) without forming the product
    return np.sum(np.asarray(Ra, float) * np.asarray(Rb, float), axis=(-2, -1))


def chordal_sq(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray | float:
    """Squared Frobenius distance ``6 - 2 tr(Ra^T Rb)``, in [0, 8]."""
    val = 6.0 - 2.0 * _trace_rel(Ra, Rb)
    return np.clip(val, 0.0, 8.0)


def geodesic_angle(Ra: np.ndarray, Rb: np.ndarray) -> np.ndarray | float:
    c = (_trace_rel(Ra, Rb) - 1.0) / 2.0
    return np.arccos(np.clip(c, -1.0, 1.0))


def axis_angle_to_rotmat(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues' formula. Used as an independent check on quaternion conversion."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
