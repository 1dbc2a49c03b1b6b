"""Exact Bingham sampling by rejection from an angular central Gaussian (ACG) envelope.

Target (unnormalized): ``f*(x) = exp(x^T A x)`` with ``A = M Z M^T`` negative
semidefinite. With ``u = -x^T A x >= 0`` and any ``b > 0``, concavity of the
log gives::

    exp(-u) <= exp(-(n - b)/2) (n/b)^(n/2) (1 + 2u/b)^(-n/2)

and ``1 + 2u/b = x^T Omega x`` for ``Omega = I - 2A/b``. So
``f*(x) <= C* g*(x)`` with ``g*(x) = (x^T Omega x)^(-2)`` (n = 4) and
``log C* = -(n - b)/2 + (n/2) log(n/b)``. The tightest ``C*`` takes ``b`` as
the root of ``sum_i 1/(b - 2 z_i) = 1``. Both densities are compared
unnormalized, so N(Z) never enters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bingham import BinghamParams
from .normconst import envelope_b

DIM = 4
BATCH = 10
MAX_BATCHES = 100
FITTED_B_MARGIN = 1e-3


class SamplingFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ACGEnvelope:
    A: np.ndarray
    Omega: np.ndarray
    cov_factor: np.ndarray  # S with S S^T = Omega^{-1}
    b: float
    logC_star: float


def _log_c_star(b):
    return -(DIM - b) / 2.0 + (DIM / 2.0) * np.log(DIM / b)


def build_envelope(params: BinghamParams, bprov=None) -> ACGEnvelope:
    """``bprov`` maps dispersions to b; defaults to the exact root solver."""
    d = np.append(params.z, 0.0)
    if bprov is None:
        b, margin = float(envelope_b(params.z)), 0.0
    else:
        b, margin = float(bprov(params.z)), FITTED_B_MARGIN
    if not b > 0.0:
        raise ValueError(f"envelope parameter must be positive, got {b}")
    omega = 1.0 - 2.0 * d / b
    M = params.M
    return ACGEnvelope(
        A=(M * d) @ M.T,
        Omega=(M * omega) @ M.T,
        cov_factor=M / np.sqrt(omega),
        b=b,
        logC_star=float(_log_c_star(b)) + margin,
    )


def sample_acg(env: ACGEnvelope, rng: np.random.Generator, count: int) -> np.ndarray:
    if count < 1:
        raise ValueError("count must be >= 1")
    y = rng.standard_normal((count, DIM)) @ env.cov_factor.T
    return y / np.linalg.norm(y, axis=-1, keepdims=True)


def log_accept_ratio(env: ACGEnvelope, x) -> np.ndarray:
    """``log f*(x) - log C* - log g*(x)``; never positive for unit ``x``."""
    x = np.asarray(x, dtype=float)
    xa = np.einsum("...i,ij,...j->...", x, env.A, x)
    # x^T Omega x = |x|^2 - 2 x^T A x / b with |x| = 1; exact 0 at Z = 0
    return xa + (DIM / 2.0) * np.log1p(-2.0 * xa / env.b) - env.logC_star


def sample_bingham(
    params: BinghamParams,
    env: ACGEnvelope,
    rng: np.random.Generator,
    batch: int = BATCH,
    max_batches: int = MAX_BATCHES,
) -> tuple[np.ndarray, int]:
    """One exact draw; returns ``(q, proposals_used)``.

    Proposals come in batches; the first accepted one in draw order is
    returned (taking any other accepted one would bias the sample).
    """
    used = 0
    for _ in range(max_batches):
        x = sample_acg(env, rng, batch)
        logw = np.log(rng.random(batch))
        ok = np.flatnonzero(logw <= log_accept_ratio(env, x))
        if ok.size:
            used += int(ok[0]) + 1
            return x[ok[0]], used
        used += batch
    raise SamplingFailedError(f"no proposal accepted in {max_batches} batches of {batch}")


def sample_many(params: BinghamParams, env: ACGEnvelope, rng, count: int) -> tuple[np.ndarray, int]:
    """``count`` exact draws (vectorized); returns samples and total proposals."""
    out = np.empty((0, DIM))
    proposals = 0
    while len(out) < count:
        need = count - len(out)
        n = max(64, 3 * need)
        x = sample_acg(env, rng, n)
        keep = np.log(rng.random(n)) <= log_accept_ratio(env, x)
        acc = np.flatnonzero(keep)
        if len(acc) >= need:
            # proposals after the last needed acceptance were never "used"
            proposals += int(acc[need - 1]) + 1
            acc = acc[:need]
        else:
            proposals += n
        out = np.concatenate([out, x[acc]])
    return out, proposals


# --- batched path for policies: one distribution per row -------------------


def sample_rows(M, z, b, rng: np.random.Generator, batch: int = BATCH, max_batches: int = MAX_BATCHES, margin=0.0):
    """One draw per row of ``M (n, 4, 4)``, ``z (n, 3)``, ``b (n,)``.

    Returns ``(q (n, 4), proposals_used (n,))``.
    """
    M = np.asarray(M, float)
    n = M.shape[0]
    d = np.concatenate([np.asarray(z, float), np.zeros((n, 1))], axis=-1)
    b = np.asarray(b, float).reshape(n)
    omega = 1.0 - 2.0 * d / b[:, None]
    logc = _log_c_star(b) + margin
    out = np.zeros((n, DIM))
    used = np.zeros(n, dtype=int)
    todo = np.arange(n)
    for _ in range(max_batches):
        k = len(todo)
        eps = rng.standard_normal((k, batch, DIM))
        logw = np.log(rng.random((k, batch)))
        # coordinates in the eigenbasis of A: y = M diag(omega^-1/2) eps
        e = eps / np.sqrt(omega[todo, None, :])
        e /= np.linalg.norm(e, axis=-1, keepdims=True)
        xa = np.sum(d[todo, None, :] * e * e, axis=-1)
        ratio = xa + 2.0 * np.log1p(-2.0 * xa / b[todo, None]) - logc[todo, None]
        acc = logw <= ratio
        hit = acc.any(axis=1)
        first = np.argmax(acc, axis=1)
        rows = todo[hit]
        out[rows] = np.einsum("nij,nj->ni", M[rows], e[hit, first[hit]])
        used[rows] += first[hit] + 1
        used[todo[~hit]] += batch
        todo = todo[~hit]
        if not len(todo):
            return out, used
    raise SamplingFailedError(f"{len(todo)} rows had no acceptance in {max_batches} batches")
