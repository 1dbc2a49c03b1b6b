"""Bingham distribution on unit quaternions, parameterized from a raw 19-vector.

Dispersions are carried as the three nonzero diagonal entries ``z`` of
``Z = diag(z[0], z[1], z[2], 0)``, ascending (``z[0]`` most negative). Column
``j`` of ``M`` pairs with diagonal entry ``j``; column 3 pairs with the zero
entry and is the mode.

The raw-vector transforms are differentiable, and every function with a
``_vjp`` suffix returns the vector-Jacobian product used by the policy
gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .normconst import Z_MAX
from .rotmath import check_unit

RAW_DIM = 19
GS_EPS = 1e-8


class NormConstProvider(Protocol):
    def log_N(self, z): ...

    def grad_log_N(self, z): ...

    def log_N_and_grad(self, z): ...


class DegenerateBasisError(ValueError):
    pass


@dataclass(frozen=True)
class BinghamParams:
    M: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        z = np.array(self.z, dtype=float)
        if M.shape != (4, 4) or z.shape != (3,):
            raise ValueError("expected M of shape (4, 4) and z of shape (3,)")
        if np.abs(M.T @ M - np.eye(4)).max() > 1e-7:
            raise ValueError("M is not orthogonal")
        if not np.all(np.isfinite(z)) or np.any(np.diff(z) < 0) or z[-1] > 0:
            raise ValueError(f"dispersions must satisfy z1 <= z2 <= z3 <= 0, got {z}")
        M.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "z", z)

    @property
    def Z(self) -> np.ndarray:
        return np.diag(np.append(self.z, 0.0))

    @property
    def A(self) -> np.ndarray:
        """Exponent matrix ``M Z M^T`` (negative semidefinite)."""
        return (self.M * np.append(self.z, 0.0)) @ self.M.T

    @classmethod
    def from_raw(cls, v) -> "BinghamParams":
        v = np.asarray(v, dtype=float)
        if v.shape != (RAW_DIM,):
            raise ValueError(f"expected raw vector of length {RAW_DIM}")
        return cls(transform_M(v[3:]), transform_Z(v[:3]))


# --- transforms --------------------------------------------------------------


def transform_Z(v) -> np.ndarray:
    """Cumulative negative-exp map from ``(..., 3)`` pre-activations to ascending dispersions.

    ``c_i = -sum_{k<=i} exp(v_k)``; the diagonal is ``(c_3, c_2, c_1)``,
    clamped at ``-Z_MAX``.
    """
    v = np.asarray(v, dtype=float)
    c = -np.cumsum(np.exp(np.minimum(v, 50.0)), axis=-1)
    return np.maximum(c[..., ::-1], -Z_MAX)


def transform_Z_vjp(v, gz) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    z = transform_Z(v)
    live = z > -Z_MAX
    gc = np.where(live, gz, 0.0)[..., ::-1]  # cotangent on (c_1, c_2, c_3)
    # dc_i/dv_k = -exp(v_k) for k <= i
    tail = np.cumsum(gc[..., ::-1], axis=-1)[..., ::-1]
    return -np.exp(np.minimum(v, 50.0)) * tail


def transform_M(v) -> np.ndarray:
    """Classical Gram-Schmidt on the four 4-vectors in ``v[..., 0:16]``; they become the columns."""
    v = np.asarray(v, dtype=float)
    V = v.reshape(v.shape[:-1] + (4, 4))  # V[..., i, :] is the i-th vector
    cols = []
    for i in range(4):
        vi = V[..., i, :]
        u = vi.copy()
        for m in cols:
            u = u - np.sum(m * vi, axis=-1, keepdims=True) * m
        n = np.linalg.norm(u, axis=-1, keepdims=True)
        if np.any(n < GS_EPS):
            raise DegenerateBasisError(f"Gram-Schmidt residual {float(n.min()):.3g} for vector {i}")
        cols.append(u / n)
    return np.stack(cols, axis=-1)


def transform_M_vjp(v, gM) -> np.ndarray:
    """Cotangent on the raw 16-vector given ``gM = dL/dM``."""
    v = np.asarray(v, dtype=float)
    V = v.reshape(v.shape[:-1] + (4, 4))
    cols, norms = [], []
    for i in range(4):
        vi = V[..., i, :]
        u = vi.copy()
        for m in cols:
            u = u - np.sum(m * vi, axis=-1, keepdims=True) * m
        n = np.linalg.norm(u, axis=-1, keepdims=True)
        cols.append(u / n)
        norms.append(n)
    gm = [np.array(gM[..., :, i], dtype=float) for i in range(4)]
    gV = np.zeros_like(V)
    for i in range(3, -1, -1):
        m, n = cols[i], norms[i]
        gu = (gm[i] - np.sum(gm[i] * m, axis=-1, keepdims=True) * m) / n
        vi = V[..., i, :]
        gV[..., i, :] += gu
        for k in range(i):
            mk = cols[k]
            proj = np.sum(mk * vi, axis=-1, keepdims=True)
            gu_mk = np.sum(gu * mk, axis=-1, keepdims=True)
            gm[k] = gm[k] - gu_mk * vi - proj * gu
            gV[..., i, :] -= gu_mk * mk
    return gV.reshape(v.shape)


# --- density -----------------------------------------------------------------


def _exponent(M, z, q):
    s = np.einsum("...ij,...i->...j", M, q)  # projections onto the columns of M
    return np.sum(z * s[..., :3] ** 2, axis=-1), s


def log_pdf(params: BinghamParams, q, provider: NormConstProvider):
    """``q^T M Z M^T q - log N(Z)`` for unit ``q`` of shape ``(..., 4)``."""
    q = check_unit(q)
    expo, _ = _exponent(params.M, params.z, q)
    return expo - provider.log_N(params.z)


def mode(params: BinghamParams) -> np.ndarray:
    return params.M[:, 3].copy()


def entropy_from_z(z, provider: NormConstProvider):
    """``log N - sum_i z_i dlogN/dz_i``; depends on the dispersions only."""
    logn, g = provider.log_N_and_grad(z)
    return logn - np.sum(np.asarray(z) * g, axis=-1)


def entropy(params: BinghamParams, provider: NormConstProvider) -> float:
    return float(entropy_from_z(params.z, provider))


# --- batched raw-vector path (policy head) ----------------------------------


def raw_to_params(v) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``(n, 19) -> (M (n, 4, 4), z (n, 3))``."""
    v = np.asarray(v, dtype=float)
    return transform_M(v[..., 3:]), transform_Z(v[..., :3])


def log_pdf_raw(v, q, provider: NormConstProvider) -> np.ndarray:
    M, z = raw_to_params(v)
    expo, _ = _exponent(M, z, q)
    return expo - provider.log_N(z)


def log_pdf_raw_and_grad(v, q, provider: NormConstProvider) -> tuple[np.ndarray, np.ndarray]:
    """Log-density of ``q`` under raw head outputs ``v`` and its gradient w.r.t. ``v``."""
    v = np.asarray(v, dtype=float)
    q = np.asarray(q, dtype=float)
    M, z = raw_to_params(v)
    expo, s = _exponent(M, z, q)
    logn, glogn = provider.log_N_and_grad(z)
    gz = s[..., :3] ** 2 - glogn
    # d expo / d m_j = 2 z_j s_j q
    coef = np.concatenate([2.0 * z * s[..., :3], np.zeros(z.shape[:-1] + (1,))], axis=-1)
    gM = q[..., :, None] * coef[..., None, :]
    gv = np.concatenate([transform_Z_vjp(v[..., :3], gz), transform_M_vjp(v[..., 3:], gM)], axis=-1)
    return expo - logn, gv


def entropy_raw_and_grad(v, provider: NormConstProvider, h: float = 1e-4):
    """Entropy of each raw head output and its gradient w.r.t. ``v``.

    The Hessian of log N enters the gradient; it is taken by central
    differences of the provider's analytic gradient.
    """
    v = np.asarray(v, dtype=float)
    z = transform_Z(v[..., :3])
    logn, g = provider.log_N_and_grad(z)
    H = logn - np.sum(z * g, axis=-1)
    gz = np.zeros_like(z)
    for j in range(3):
        step = h * (1.0 + np.abs(z[..., j]))
        zp, zm = z.copy(), z.copy()
        zp[..., j] = np.minimum(z[..., j] + step, 0.0)
        zm[..., j] = np.maximum(z[..., j] - step, -Z_MAX)
        dg = (provider.grad_log_N(zp) - provider.grad_log_N(zm)) / (zp[..., j] - zm[..., j])[..., None]
        gz[..., j] = -np.sum(z * dg, axis=-1)
    gv = np.zeros_like(v)
    gv[..., :3] = transform_Z_vjp(v[..., :3], gz)
    return H, gv
