"""Invariant suite behind ``bpp selfcheck``.

Fast checks are analytic or deterministic comparisons against the
quadrature oracle; slow checks draw samples (bound audit, moments, entropy).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import normconst as nc
from .bingham import BinghamParams, entropy_from_z
from .sampler import build_envelope, log_accept_ratio, sample_many

LOG_2PI2 = np.log(2.0 * np.pi**2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def random_rotation4(rng: np.random.Generator) -> np.ndarray:
    """Haar-ish orthogonal 4x4 via QR with sign fix."""
    Q, R = np.linalg.qr(rng.standard_normal((4, 4)))
    return Q * np.sign(np.diag(R))


def random_params(rng: np.random.Generator, z_max: float = nc.Z_MAX) -> BinghamParams:
    return BinghamParams(random_rotation4(rng), nc.sample_dispersions(1, rng, z_max)[0])


def uniform_s3(rng: np.random.Generator, n: int) -> np.ndarray:
    x = rng.standard_normal((n, 4))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# --- individual checks; each returns (ok, detail) ----------------------------


def check_quad_at_zero():
    err = abs(float(nc.quad_log_N(np.zeros(3))) - LOG_2PI2)
    return err <= 1e-8, f"|quad_log_N(0) - log 2pi^2| = {err:.2e}"


def check_b_closed_forms():
    r0 = float(nc.solve_b(np.zeros(3)))
    r1 = float(nc.solve_b(-np.ones(3)))
    r2 = float(nc.solve_b(-500.0 * np.ones(3)))
    want2 = (1004.0 + np.sqrt(1004.0**2 - 4000.0)) / 2.0
    ok = r0 == 4.0 and abs(r1 - (3 + np.sqrt(7))) <= 1e-9 and abs(r2 / want2 - 1) <= 1e-6
    return ok, f"b(0)={r0:.12g} b(-1)={r1:.12g} b(-500)={r2:.10g}"


def check_grad_simplex(rng):
    z = nc.sample_dispersions(50, rng)
    g = nc.quad_grad_log_N(z)
    d4 = 1.0 - g.sum(axis=1)
    ok = bool(np.all((g > 0) & (g < 1)) and np.all((d4 > 0) & (d4 < 1)))
    return ok, f"min component {min(g.min(), d4.min()):.3g}, max {max(g.max(), d4.max()):.3g}"


def check_fN_zero(prov):
    v = float(prov.log_N(np.zeros(3)))
    return abs(v - LOG_2PI2) <= 0.01, f"f_N(0) = {v:.5f}"


def check_fb_zero(bprov):
    v = float(bprov(np.zeros(3)))
    return abs(v - 4.0) <= 0.04, f"f_b(0) = {v:.5f}"


def check_fN_vs_quad(prov, rng, n=2000):
    z = nc.sample_dispersions(n, rng)
    err = np.abs(prov.log_N(z) - nc.quad_log_N(z))
    return bool(err.max() <= 0.05 and np.median(err) <= 0.005), f"max {err.max():.4f}, median {np.median(err):.5f} nats"


def check_fb_vs_solver(bprov, rng, n=2000):
    z = nc.sample_dispersions(n, rng)
    rel = np.abs(bprov(z) / nc.envelope_b(z) - 1.0)
    return bool(rel.max() <= 1e-2), f"max rel err {rel.max():.2e}"


def check_bound(rng, n_params=20, n_x=10_000, tol=1e-9):
    worst = -np.inf
    for _ in range(n_params):
        env = build_envelope(random_params(rng))
        worst = max(worst, float(log_accept_ratio(env, uniform_s3(rng, n_x)).max()))
    return worst <= tol, f"max log ratio {worst:.3e} over {n_params} x {n_x}"


def check_moments(rng, n_params=2, samples=200_000, tol=0.01):
    worst = 0.0
    for _ in range(n_params):
        p = random_params(rng, 50.0)
        x, _ = sample_many(p, build_envelope(p), rng, samples)
        d = np.append(nc.quad_grad_log_N(p.z), 0.0)
        d[3] = 1.0 - d[:3].sum()
        worst = max(worst, float(np.abs(x.T @ x / samples - (p.M * d) @ p.M.T).max()))
    return worst <= tol, f"max scatter error {worst:.2e}"


def check_entropy_mc(rng, n_params=2, samples=200_000):
    worst = 0.0
    prov = nc.QuadratureProvider()
    for _ in range(n_params):
        p = random_params(rng, 50.0)
        x, _ = sample_many(p, build_envelope(p), rng, samples)
        lp = np.einsum("ni,ij,nj->n", x, p.A, x) - float(nc.quad_log_N(p.z))
        H = float(entropy_from_z(p.z, prov))
        worst = max(worst, abs(H + lp.mean()) / (lp.std() / np.sqrt(samples)))
    return worst <= 3.0, f"worst |H - MC| = {worst:.2f} standard errors"


def run_checks(weights_dir=None, skip_slow: bool = False, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    def run(name, fn, *args):
        try:
            ok, detail = fn(*args)
        except Exception as exc:  # noqa: BLE001
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append(CheckResult(name, bool(ok), detail))

    run("quad_N_at_zero", check_quad_at_zero)
    run("b_closed_forms", check_b_closed_forms)
    run("grad_simplex", check_grad_simplex, rng)

    loaded = {}
    for key, loader in (("f_N", nc.load_fitted_provider), ("f_b", nc.load_fitted_b)):
        try:
            loaded[key] = loader(weights_dir)
            out.append(CheckResult(f"load_{key}", True, "ok"))
        except Exception as exc:  # noqa: BLE001
            out.append(CheckResult(f"load_{key}", False, f"{type(exc).__name__}: {exc}"))

    def needs(key, name, fn, *args):
        if key in loaded:
            run(name, fn, loaded[key], *args)
        else:
            out.append(CheckResult(name, False, f"{key} weights unavailable"))

    needs("f_N", "fN_at_zero", check_fN_zero)
    needs("f_b", "fb_at_zero", check_fb_zero)
    needs("f_N", "fN_vs_quadrature", check_fN_vs_quad, rng)
    needs("f_b", "fb_vs_solver", check_fb_vs_solver, rng)

    if not skip_slow:
        run("bound_audit", check_bound, rng)
        run("moment_identity", check_moments, rng)
        run("entropy_mc", check_entropy_mc, rng)
    return out
