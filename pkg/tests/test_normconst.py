import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bpp import normconst as nc

from conftest import dispersions

LOG_2PI2 = np.log(2 * np.pi**2)


def test_log_N_at_zero():
    assert abs(nc.quad_log_N(np.zeros(3)) - LOG_2PI2) <= 1e-8
    assert abs(nc.LOG_SURFACE_S3 - LOG_2PI2) < 1e-15


def test_monte_carlo_oracle_at_minus_one(rng):
    # N = 2 pi^2 e^{-1} E[exp(x4^2)] for x uniform on S^3
    vals = []
    for _ in range(10):
        x = rng.standard_normal((1_000_000, 4))
        vals.append(np.exp((x[:, 3] ** 2) / np.sum(x * x, axis=1)))
    vals = np.concatenate(vals)
    mean, se = vals.mean(), vals.std() / np.sqrt(len(vals))
    quad = np.exp(nc.quad_log_N(-np.ones(3))) / (2 * np.pi**2 * np.exp(-1.0))
    assert abs(quad - mean) <= 3 * se


def test_matches_spherical_product_rule(rng):
    for z in nc.sample_dispersions(8, rng, 100.0):
        assert abs(nc.quad_log_N(z) - nc.spherical_log_N(z, order=128)) < 1e-10


def test_matches_adaptive_quadrature():
    # independent adaptive integration of the same 1-D reduction
    z1, z2, z3 = -7.0, -3.0, -0.5

    def f(s):
        from scipy.special import i0e

        return np.exp(s * z2) * i0e(s * (z2 - z1) / 2) * i0e((1 - s) * abs(z3) / 2)

    val, _ = integrate.quad(f, 0.0, 1.0, epsabs=0, epsrel=1e-13)
    assert abs(np.log(2 * np.pi**2 * val) - nc.quad_log_N(np.array([z1, z2, z3]))) < 1e-12


def test_permutation_invariance():
    a = nc.quad_log_N(np.array([-5.0, -2.0, -1.0]))
    b = nc.quad_log_N(np.array([-1.0, -5.0, -2.0]))
    assert abs(a - b) <= 1e-9


def test_out_of_range_rejected():
    with pytest.raises(ValueError):
        nc.quad_log_N(np.array([-501.0, 0.0, 0.0]))
    with pytest.raises(ValueError):
        nc.quad_log_N(np.array([0.1, 0.0, 0.0]))


def test_gradient_examples():
    assert np.allclose(nc.quad_grad_log_N(np.zeros(3)), 0.25, atol=1e-12)
    assert np.all(nc.quad_grad_log_N(-500.0 * np.ones(3)) < 0.01)


def test_gradient_matches_fd(rng):
    h = 1e-4
    for z in nc.sample_dispersions(10, rng, 400.0):
        g = nc.quad_grad_log_N(z)
        fd = np.array([
            (nc.quad_log_N(z + h * e) - nc.quad_log_N(z - h * e)) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.abs(g - fd).max() <= 1e-5


def test_gradient_on_simplex(rng):
    g = nc.quad_grad_log_N(nc.sample_dispersions(50, rng))
    d4 = 1 - g.sum(axis=1)
    assert np.all((g > 0) & (g < 1)) and np.all((d4 > 0) & (d4 < 1))


@given(dispersions(), st.integers(0, 2), st.floats(0.0, 5.0))
def test_monotone_in_each_entry(z, i, dz):
    z2 = z.copy()
    z2[i] = min(z2[i] + dz, 0.0)
    assert nc.quad_log_N(z2) >= nc.quad_log_N(z) - 1e-12


@given(dispersions())
def test_bounded_by_uniform(z):
    assert nc.quad_log_N(z) <= LOG_2PI2 + 1e-9


def test_batched_equals_single(rng):
    z = nc.sample_dispersions(5, rng)
    batch = nc.quad_log_N(z)
    assert np.array_equal(batch, [nc.quad_log_N(r) for r in z])


# --- envelope root --------------------------------------------------------------


def test_solve_b_closed_forms():
    assert nc.solve_b(np.zeros(3)) == 4.0
    assert abs(nc.solve_b(-np.ones(3)) - (3 + np.sqrt(7))) <= 1e-9
    root = (1004 + np.sqrt(1004**2 - 4000)) / 2
    assert abs(nc.solve_b(-500 * np.ones(3)) / root - 1) <= 1e-6


@given(dispersions())
def test_solve_b_residual_and_branch(z):
    b = nc.solve_b(z)
    d = np.append(z, 0.0)
    assert b > -2 * z[0]
    assert abs(np.sum(1 / (b + 2 * d)) - 1) <= 1e-10


@given(dispersions())
def test_envelope_b_range(z):
    b = nc.envelope_b(z)
    d = np.append(z, 0.0)
    assert 1.0 - 1e-12 <= b <= 4.0
    assert abs(np.sum(1 / (b - 2 * d)) - 1) <= 1e-10


# --- dataset ---------------------------------------------------------------------


def test_dataset_small_and_deterministic(tmp_path):
    t = nc.gen_norm_dataset(1, seed=3)
    assert len(t) == 1 and t.logN[0] <= LOG_2PI2
    a, b = nc.gen_norm_dataset(200, seed=5), nc.gen_norm_dataset(200, seed=5)
    assert np.array_equal(a.z, b.z) and np.array_equal(a.logN, b.logN)
    assert np.all(np.diff(a.z, axis=1) >= 0) and np.all(a.z <= 0)
    a.save(tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "z1,z2,z3,logN"
    meta = json.loads((tmp_path / "t.json").read_text())
    assert meta["seed"] == 5
    back = nc.NormTable.load(tmp_path / "t.csv")
    assert np.array_equal(back.z, a.z) and np.array_equal(back.logN, a.logN)


def test_dataset_threads_do_not_change_output():
    a = nc.gen_norm_dataset(3000, seed=1, chunk=512, threads=1)
    b = nc.gen_norm_dataset(3000, seed=1, chunk=512, threads=3)
    assert np.array_equal(a.logN, b.logN)


def test_laplace_baseline():
    v, g = nc.laplace_baseline(np.zeros(3))
    assert abs(v - LOG_2PI2) < 1e-15
    z = np.array([-400.0, -300.0, -200.0])
    assert abs(nc.laplace_baseline(z)[0] - nc.quad_log_N(z)) < 0.02


# --- shipped fitted approximators ----------------------------------------------


@pytest.fixture(scope="module")
def fitted():
    return nc.load_fitted_provider(), nc.load_fitted_b()


def test_fitted_at_zero(fitted):
    fN, fb = fitted
    assert abs(fN.log_N(np.zeros(3)) - LOG_2PI2) <= 0.01
    assert abs(fb(np.zeros(3)) - 4.0) <= 0.04


def test_fitted_gradient_matches_own_fd(fitted, rng):
    fN, _ = fitted
    h = 1e-6
    for z in nc.sample_dispersions(20, rng):
        z = np.clip(z, -499.0, -1e-3)
        g = fN.grad_log_N(z)
        fd = np.array([(fN.log_N(z + h * e) - fN.log_N(z - h * e)) / (2 * h) for e in np.eye(3)])
        assert np.abs(g - fd).max() <= 1e-5 * max(np.abs(fd).max(), 1e-3) + 1e-9


@settings(max_examples=30)
@given(dispersions())
def test_fitted_symmetric(fitted, z):
    fN, fb = fitted
    p = z[[2, 0, 1]]
    assert fN.log_N(z) == fN.log_N(p)
    assert fb(z) == fb(p)
