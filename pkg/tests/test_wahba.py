import numpy as np
import pytest

from bpp import wahba
from bpp.rotmath import quat_to_rotmat, rotmat_to_quat


def test_noise_free_norms():
    cfg = wahba.WahbaConfig(num_pairs=20, noise_sigma=0.0)
    ep = wahba.reset(cfg, np.random.default_rng(0))
    u, v = wahba.split_pairs(ep.observation, 20)
    assert np.allclose(np.linalg.norm(u, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-12)
    assert np.allclose(v[0], u[0] @ ep.true_rotation.T, atol=1e-12)


def test_seeded_reset_identical():
    env = wahba.WahbaEnv()
    a = env.reset(seed=3)
    b = env.reset(seed=3)
    assert np.array_equal(a, b)


def test_noise_energy():
    sigma = 0.01
    cfg = wahba.WahbaConfig(num_pairs=100, noise_sigma=sigma)
    obs, R, _ = wahba.reset_batch(cfg, np.random.default_rng(1), 100)
    u, v = wahba.split_pairs(obs, 100)
    eps = v - np.einsum("nij,npj->npi", R, u)
    assert abs(np.mean(np.sum(eps * eps, axis=-1)) / (3 * sigma**2) - 1) < 0.05


def test_step_examples():
    cfg = wahba.WahbaConfig(num_pairs=5, noise_sigma=0.0)
    ep = wahba.reset(cfg, np.random.default_rng(2))
    assert wahba.step(ep, ep.true_quat) == (pytest.approx(0.0, abs=1e-12), True)
    assert wahba.step(ep, -ep.true_quat)[0] == pytest.approx(0.0, abs=1e-12)
    ident = wahba.WahbaEpisode(ep.observation, np.eye(3), np.array([1.0, 0, 0, 0]))
    assert wahba.step(ident, [0, 0, 0, 1.0])[0] == pytest.approx(-8.0)
    with pytest.raises(ValueError):
        wahba.step(ep, [1.0, 1.0, 0, 0])


def test_reward_sign_invariant():
    cfg = wahba.WahbaConfig()
    rng = np.random.default_rng(4)
    _, R, _ = wahba.reset_batch(cfg, rng, 1000)
    a = rng.standard_normal((1000, 4))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    r = wahba.rewards(a, R)
    assert np.array_equal(r, wahba.rewards(-a, R))
    assert np.all((r <= 0) & (r >= -8))


def test_true_quat_consistent():
    _, R, q = wahba.reset_batch(wahba.WahbaConfig(), np.random.default_rng(5), 10)
    assert np.allclose(quat_to_rotmat(q), R)
    assert np.allclose(quat_to_rotmat(rotmat_to_quat(R)), R)


def test_env_requires_reset():
    env = wahba.WahbaEnv()
    with pytest.raises(RuntimeError):
        env.step([1.0, 0, 0, 0])
    env.reset(seed=0)
    r, done = env.step([1.0, 0, 0, 0])
    assert done and -8 <= r <= 0


def test_config_validation():
    with pytest.raises(ValueError):
        wahba.WahbaConfig(num_pairs=0)
    with pytest.raises(ValueError):
        wahba.WahbaConfig(noise_sigma=-1.0)
