"""Bingham normalization constant N(Z) on S^3, its gradient, and the envelope root b.

Dispersions are passed as the three nonzero diagonal entries ``z = (z1, z2, z3)``
of ``Z = diag(z1, z2, z3, 0)``; all functions accept ``(..., 3)`` arrays and are
invariant to permutations of the entries.

Exact evaluation
----------------
Write ``x = (cos t cos a, cos t sin a, sin t cos c, sin t sin c)`` on S^3.
Both circle integrals are closed-form modified Bessel functions, leaving a
1-D integral over ``s = cos^2 t`` in ``[0, 1]``::

    N(Z) = 2 pi^2  int_0^1 exp(s z2) i0e(s (z2 - z1)/2) i0e((1 - s)|z3|/2) ds

with ``z1 <= z2 <= z3 <= 0`` and ``i0e`` the exponentially scaled Bessel I0.
Every factor lies in (0, 1], so nothing overflows at z = -500. The integral is
evaluated with a fixed composite Gauss-Legendre rule on geometrically graded
panels, which keeps results deterministic and vectorized over many z.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import i0e, i1e

from .diffnet import DiffNet, AdamState, adam_step

log = logging.getLogger(__name__)

Z_MAX = 500.0
LOG_SURFACE_S3 = float(np.log(2.0 * np.pi**2))
TABLE_VERSION = 1

_BREAKS = np.array(
    [0.0, 1e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.25,
     0.5, 0.75, 0.9, 0.97, 0.99, 0.997, 0.999, 0.9997, 0.9999, 1.0]
)


def _panel_rule(order: int = 24) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for lo, hi in zip(_BREAKS[:-1], _BREAKS[1:]):
        half = 0.5 * (hi - lo)
        nodes.append(lo + half * (x + 1.0))
        weights.append(half * w)
    return np.concatenate(nodes), np.concatenate(weights)


_S, _W = _panel_rule()


def _sorted(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != 3:
        raise ValueError(f"expected 3 dispersion entries, got shape {z.shape}")
    order = np.argsort(z, axis=-1, kind="stable")
    return np.take_along_axis(z, order, axis=-1), order


def _check_range(z: np.ndarray):
    if not np.all(np.isfinite(z)) or np.any(z > 0.0) or np.any(z < -Z_MAX):
        raise ValueError(f"dispersion entries must lie in [-{Z_MAX:g}, 0]")


def _moments(z) -> tuple[np.ndarray, np.ndarray]:
    """log N and d(log N)/dz for sorted ``(n, 3)`` input."""
    a, b, c = (z[:, i : i + 1] for i in range(3))
    s = _S[None, :]
    y = s * (b - a) / 2.0
    w = (1.0 - s) * (-c) / 2.0
    e = np.exp(s * b)
    i0y, i1y, i0w, i1w = i0e(y), i1e(y), i0e(w), i1e(w)
    base = e * i0y * i0w
    n0 = base @ _W
    # d/dz_k of the integrand; factor pi^2 / (2 pi^2) = 1/2 relative to N
    da = 0.5 * ((s * e * (i0y - i1y) * i0w) @ _W)
    db = 0.5 * ((s * e * (i0y + i1y) * i0w) @ _W)
    dc = 0.5 * (((1.0 - s) * e * i0y * (i0w - i1w)) @ _W)
    logn = LOG_SURFACE_S3 + np.log(n0)
    grad = np.stack([da, db, dc], axis=-1) / n0[:, None]
    return logn, grad


def quad_log_N(z) -> np.ndarray | float:
    """log N(Z) for dispersions in [-500, 0]."""
    zs, _ = _sorted(z)
    _check_range(zs)
    flat = zs.reshape(-1, 3)
    logn, _ = _moments(flat)
    out = logn.reshape(zs.shape[:-1])
    return float(out) if out.ndim == 0 else out


def quad_grad_log_N(z) -> np.ndarray:
    """d(log N)/dz_i, i.e. E[x_i^2] under the Bingham density, in the caller's order."""
    zs, order = _sorted(z)
    _check_range(zs)
    flat = zs.reshape(-1, 3)
    _, g = _moments(flat)
    g = g.reshape(zs.shape)
    out = np.empty_like(g)
    np.put_along_axis(out, order, g, axis=-1)
    return out


def quad_log_N_and_grad(z) -> tuple[np.ndarray, np.ndarray]:
    zs, order = _sorted(z)
    _check_range(zs)
    logn, g = _moments(zs.reshape(-1, 3))
    g = g.reshape(zs.shape)
    out = np.empty_like(g)
    np.put_along_axis(out, order, g, axis=-1)
    return logn.reshape(zs.shape[:-1]), out


def spherical_log_N(z, order: int = 64) -> float:
    """Product Gauss-Legendre rule in 4-D hyperspherical coordinates.

    Independent (and much slower) route to log N, kept as a cross-check. Uses
    the Jacobian sin^2(p1) sin(p2) that matches the coordinate map below.
    """
    z = np.asarray(z, dtype=float)
    x, w = np.polynomial.legendre.leggauss(order)
    p12 = 0.5 * np.pi * (x + 1.0)
    w12 = 0.5 * np.pi * w
    p3 = np.pi * (x + 1.0)
    w3 = np.pi * w
    P1, P2, P3 = np.meshgrid(p12, p12, p3, indexing="ij")
    W = w12[:, None, None] * w12[None, :, None] * w3[None, None, :]
    s1, s2 = np.sin(P1), np.sin(P2)
    t = np.stack([s1 * s2 * np.sin(P3), s1 * s2 * np.cos(P3), s1 * np.cos(P2), np.cos(P1)])
    expo = z[0] * t[0] ** 2 + z[1] * t[1] ** 2 + z[2] * t[2] ** 2
    return float(np.log(np.sum(W * np.exp(expo) * s1**2 * s2)))


# --- envelope root -----------------------------------------------------------


def solve_b(a, tol: float = 1e-10) -> np.ndarray | float:
    """Root b of ``sum_i 1/(b + 2 a_i) = 1`` with ``a_4 = 0``.

    The root is taken on the branch where every denominator is positive,
    ``b > max(0, -2 min a)``, on which the left side decreases monotonically
    from +inf to 0, so it exists and is unique.

    The rejection envelope for Bingham(M, Z) needs ``solve_b(-z)``: the
    envelope is built for the positive semidefinite exponent ``-Z``.
    """
    a = np.asarray(a, dtype=float)
    if a.shape[-1] != 3:
        raise ValueError(f"expected 3 entries, got shape {a.shape}")
    full = np.concatenate([a, np.zeros(a.shape[:-1] + (1,))], axis=-1)
    lo = np.max(-2.0 * full, axis=-1)
    hi = lo + 4.0

    def resid(b):
        return np.sum(1.0 / (b[..., None] + 2.0 * full), axis=-1) - 1.0

    lo_b, hi_b = lo.copy(), hi.copy()
    for _ in range(120):
        mid = 0.5 * (lo_b + hi_b)
        pos = resid(mid) > 0.0
        lo_b = np.where(pos, mid, lo_b)
        hi_b = np.where(pos, hi_b, mid)
    # Newton polish from the bracket (convex decreasing: stays left of the root)
    b = lo_b
    for _ in range(4):
        r = resid(b)
        d = -np.sum(1.0 / (b[..., None] + 2.0 * full) ** 2, axis=-1)
        nb = b - r / d
        b = np.where(np.isfinite(nb) & (nb > lo), nb, b)
    bad = np.abs(resid(b)) > tol
    if np.any(bad):
        b = np.where(bad, 0.5 * (lo_b + hi_b), b)
    return float(b) if b.ndim == 0 else b


def envelope_b(z) -> np.ndarray | float:
    """Optimal ACG envelope parameter for dispersions ``z <= 0``; lies in [1, 4]."""
    return solve_b(-np.asarray(z, dtype=float))


# --- providers ---------------------------------------------------------------


class QuadratureProvider:
    """Exact N(Z) by quadrature."""

    name = "quadrature"

    def log_N(self, z):
        return quad_log_N(z)

    def grad_log_N(self, z):
        return quad_grad_log_N(z)

    def log_N_and_grad(self, z):
        return quad_log_N_and_grad(z)


_LAPLACE_C = np.pi ** (1.0 / 3.0)


def laplace_baseline(z) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form ``log 2pi^2 - 1/2 sum log(1 - c z_i)`` and its gradient.

    Exact at z = 0; with ``c = pi^(1/3)`` it also matches the two-mode Laplace
    asymptote ``2 pi^(3/2) prod |z_i|^(-1/2)`` for large |z|. Fitted nets learn
    the residual, which is small and smooth.
    """
    z = np.asarray(z, dtype=float)
    t = 1.0 - _LAPLACE_C * z
    return LOG_SURFACE_S3 - 0.5 * np.sum(np.log(t), axis=-1), 0.5 * _LAPLACE_C / t


BASELINES = ("none", "laplace")


class FittedProvider:
    """log N(Z) from a fitted network; symmetric by sorting inputs before the net."""

    name = "fitted"

    def __init__(self, net: DiffNet, baseline: str = "none"):
        if net.in_dim != 3 or net.out_dim != 1:
            raise ValueError("f_N network must map 3 -> 1")
        if baseline not in BASELINES:
            raise ValueError(f"unknown baseline {baseline!r}")
        self.net = net
        self.baseline = baseline

    def log_N_and_grad(self, z):
        zs, order = _sorted(z)
        zc = np.clip(zs, -Z_MAX, 0.0)
        flat = zc.reshape(-1, 3)
        y, dx = self.net.input_grad(flat)
        y = y[:, 0]
        if self.baseline == "laplace":
            by, bg = laplace_baseline(flat)
            y, dx = y + by, dx + bg
        dx = np.where((zs.reshape(-1, 3) < -Z_MAX) | (zs.reshape(-1, 3) > 0.0), 0.0, dx)
        g = np.empty_like(zs)
        np.put_along_axis(g, order, dx.reshape(zs.shape), axis=-1)
        return y.reshape(zs.shape[:-1]), g

    def log_N(self, z):
        zs, _ = _sorted(z)
        flat = np.clip(zs, -Z_MAX, 0.0).reshape(-1, 3)
        y = self.net(flat)[:, 0]
        if self.baseline == "laplace":
            y = y + laplace_baseline(flat)[0]
        y = y.reshape(zs.shape[:-1])
        return float(y) if y.ndim == 0 else y

    def grad_log_N(self, z):
        return self.log_N_and_grad(z)[1]

    def save(self, path, extra: dict | None = None):
        self.net.save(path, extra={"target": "fN", "baseline": self.baseline, **(extra or {})})

    @classmethod
    def load(cls, path) -> "FittedProvider":
        d = json.loads(Path(path).read_text())
        return cls(DiffNet.from_dict(d), d.get("meta", {}).get("baseline", "none"))


class FittedB:
    """Envelope parameter b from a fitted network (predicts log b; b > 0 always)."""

    def __init__(self, net: DiffNet):
        if net.in_dim != 3 or net.out_dim != 1:
            raise ValueError("f_b network must map 3 -> 1")
        self.net = net

    def __call__(self, z):
        zs, _ = _sorted(z)
        out = np.exp(self.net(np.clip(zs, -Z_MAX, 0.0).reshape(-1, 3))[:, 0])
        out = out.reshape(zs.shape[:-1])
        return float(out) if out.ndim == 0 else out

    def save(self, path, extra: dict | None = None):
        self.net.save(path, extra={"target": "fb", **(extra or {})})

    @classmethod
    def load(cls, path) -> "FittedB":
        return cls(DiffNet.load(path))


# --- dataset -----------------------------------------------------------------


@dataclass
class NormTable:
    z: np.ndarray
    logN: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.logN)

    def save(self, csv_path):
        csv_path = Path(csv_path)
        lines = ["z1,z2,z3,logN"]
        for row, v in zip(self.z, self.logN):
            lines.append(",".join(f"{x:.17g}" for x in (*row, v)))
        csv_path.write_text("\n".join(lines) + "\n")
        csv_path.with_suffix(".json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path) -> "NormTable":
        csv_path = Path(csv_path)
        with open(csv_path) as fh:
            header = fh.readline().strip()
            if header != "z1,z2,z3,logN":
                raise ValueError(f"unexpected header {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
        meta_path = csv_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(data[:, :3], data[:, 3], meta)


def sample_dispersions(count: int, rng: np.random.Generator, z_max: float = Z_MAX) -> np.ndarray:
    """Sorted triples ``-(10**u - 1)``, ``u ~ U[0, log10(z_max + 1)]``; dense near 0."""
    u = rng.uniform(0.0, np.log10(z_max + 1.0), size=(count, 3))
    z = -(10.0**u - 1.0)
    return np.sort(np.clip(z, -z_max, 0.0), axis=1)


def gen_norm_dataset(count: int, seed: int = 0, chunk: int = 4096, threads: int = 1) -> NormTable:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    z = sample_dispersions(count, rng)
    chunks = [z[i : i + chunk] for i in range(0, count, chunk)]
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(quad_log_N, chunks))
    else:
        parts = [quad_log_N(c) for c in chunks]
    logn = np.concatenate([np.atleast_1d(p) for p in parts])
    meta = {
        "version": TABLE_VERSION,
        "grid": {"scheme": "z = -(10**u - 1), u ~ U[0, log10(501)], sorted", "z_max": Z_MAX},
        "quadrature": {"method": "bessel-reduced 1-D Gauss-Legendre", "panels": len(_BREAKS) - 1, "order": 24},
        "seed": seed,
        "count": count,
    }
    return NormTable(z, logn, meta)


# --- fitting -----------------------------------------------------------------


class FitFailedError(RuntimeError):
    def __init__(self, msg, report):
        super().__init__(msg)
        self.report = report


@dataclass
class FitConfig:
    hidden: tuple = (128, 128)
    activation: str = "tanh"
    steps: int = 60000
    batch_size: int = 512
    lr: float = 3e-3
    lr_final: float = 1e-5
    holdout: float = 0.1
    seed: int = 0
    max_abs_tol: float = 0.05
    median_abs_tol: float = 0.005
    max_rel_tol: float = 1e-2
    anchor_repeat: int = 16  # weight of the boundary grid relative to one table row


def _train_regressor(X, y, cfg: FitConfig, log_every: int = 2000) -> DiffNet:
    rng = np.random.default_rng(cfg.seed)
    feats = np.log1p(-X)
    net = DiffNet.init(
        [3, *cfg.hidden, 1],
        activation=cfg.activation,
        seed=cfg.seed,
        in_shift=feats.mean(0),
        in_scale=feats.std(0) + 1e-12,
        out_shift=np.array([y.mean()]),
        out_scale=np.array([y.std() + 1e-12]),
        input_map="neglog1p",
    )
    state = AdamState.for_params(net.params())
    n = len(y)
    scale = net.out_scale[0]
    for step in range(cfg.steps):
        # cosine decay from lr to lr_final
        frac = step / max(cfg.steps - 1, 1)
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * frac))
        idx = rng.integers(0, n, cfg.batch_size)
        pred, tape = net.forward(X[idx], tape=True)
        r = (pred[:, 0] - y[idx]) / scale
        grads, _ = net.backward(tape, (2.0 * r / cfg.batch_size / scale)[:, None])
        adam_step(net, grads, state, lr)
        if log_every and step % log_every == 0:
            log.info("step %d  lr %.2e  rmse %.3e", step, lr, float(np.sqrt(np.mean(r * r))) * scale)
    return net


def anchor_grid(levels: int = 12) -> np.ndarray:
    """Sorted triples on a grid uniform in log(1 - z), including the domain faces."""
    f = np.linspace(0.0, np.log1p(Z_MAX), levels)
    g = -np.expm1(f)
    g[-1] = -Z_MAX
    trip = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    return np.unique(np.sort(trip, axis=1), axis=0)


def _split(n, holdout, seed):
    perm = np.random.default_rng(seed + 1).permutation(n)
    k = max(1, int(round(n * holdout)))
    return perm[k:], perm[:k]


def fit_f_N(table: NormTable, cfg: FitConfig | None = None, check: bool = True):
    """Fit log N(z) as a residual over :func:`laplace_baseline`.

    Returns ``(FittedProvider, report)``; raises FitFailedError on tolerance miss.
    """
    cfg = cfg or FitConfig()
    if len(table) < 10_000:
        raise ValueError("need at least 10^4 rows to fit f_N")
    tr, te = _split(len(table), cfg.holdout, cfg.seed)
    # boundary anchors: the sampled table is sparse near the faces of the domain
    za = np.tile(anchor_grid(), (cfg.anchor_repeat, 1))
    X = np.concatenate([table.z[tr], za])
    y = np.concatenate([table.logN[tr], quad_log_N(za)]) - laplace_baseline(X)[0]
    prov = FittedProvider(_train_regressor(X, y, cfg), baseline="laplace")
    err = np.abs(prov.log_N(table.z[te]) - table.logN[te])
    report = {
        "target": "fN",
        "heldout_rows": int(len(te)),
        "max_abs_error": float(err.max()),
        "median_abs_error": float(np.median(err)),
        "fN_at_zero": float(prov.log_N(np.zeros(3))),
        "config": asdict(cfg),
    }
    if check and (report["max_abs_error"] > cfg.max_abs_tol or report["median_abs_error"] > cfg.median_abs_tol):
        raise FitFailedError("f_N missed tolerance", report)
    return prov, report


def b_training_set(count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    z = sample_dispersions(count, np.random.default_rng(seed))
    return z, envelope_b(z)


def default_fb_config(seed: int = 0) -> FitConfig:
    return FitConfig(hidden=(64, 64), steps=20_000, seed=seed)


def fit_f_b(z: np.ndarray, b: np.ndarray, cfg: FitConfig | None = None, check: bool = True):
    """Fit the envelope parameter b(z) (as log b). Returns ``(FittedB, report)``."""
    cfg = cfg or default_fb_config()
    if len(b) < 10_000:
        raise ValueError("need at least 10^4 samples to fit f_b")
    tr, te = _split(len(b), cfg.holdout, cfg.seed)
    za = np.tile(anchor_grid(), (cfg.anchor_repeat, 1))
    X = np.concatenate([z[tr], za])
    y = np.log(np.concatenate([b[tr], envelope_b(za)]))
    fb = FittedB(_train_regressor(X, y, cfg))
    pred = fb(z[te])
    rel = np.abs(pred - b[te]) / b[te]
    report = {
        "target": "fb",
        "heldout_rows": int(len(te)),
        "max_rel_error": float(rel.max()),
        "median_rel_error": float(np.median(rel)),
        "fb_at_zero": float(fb(np.zeros(3))),
        "config": asdict(cfg),
    }
    if check and report["max_rel_error"] > cfg.max_rel_tol:
        raise FitFailedError("f_b missed tolerance", report)
    return fb, report


# --- shipped weights ---------------------------------------------------------

_WEIGHTS_DIR = Path(__file__).parent / "weights"


def default_weights_dir() -> Path:
    import os

    return Path(os.environ.get("BPP_WEIGHTS_DIR", _WEIGHTS_DIR))


def load_fitted_provider(weights_dir=None) -> FittedProvider:
    d = Path(weights_dir) if weights_dir else default_weights_dir()
    return FittedProvider.load(d / "f_N.json")


def load_fitted_b(weights_dir=None) -> FittedB:
    d = Path(weights_dir) if weights_dir else default_weights_dir()
    return FittedB.load(d / "f_b.json")
