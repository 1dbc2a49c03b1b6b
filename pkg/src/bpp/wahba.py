"""One-step Wahba environment: observe noisy vector pairs, act with a rotation.

Each episode draws a uniform random rotation ``R`` and unit vectors ``u_i``;
the observation stacks ``(u_i, v_i)`` with ``v_i = R u_i + eps_i``. The
agent answers with a unit quaternion and is rewarded with the negated chordal
distance to ``R``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotmath import check_unit, chordal_sq, geodesic_angle, quat_to_rotmat, random_unit_quat


@dataclass(frozen=True)
class WahbaConfig:
    num_pairs: int = 50
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.num_pairs < 1:
            raise ValueError("num_pairs must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def obs_dim(self) -> int:
        return 6 * self.num_pairs


@dataclass(frozen=True)
class WahbaEpisode:
    observation: np.ndarray
    true_rotation: np.ndarray
    true_quat: np.ndarray


def _unit_vectors(rng, shape):
    u = rng.standard_normal(shape + (3,))
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def reset_batch(cfg: WahbaConfig, rng: np.random.Generator, n: int):
    """``n`` independent episodes: ``(obs (n, 6P), R (n, 3, 3), q (n, 4))``."""
    q = random_unit_quat(rng, n)
    R = quat_to_rotmat(q)
    u = _unit_vectors(rng, (n, cfg.num_pairs))
    v = np.einsum("nij,npj->npi", R, u) + cfg.noise_sigma * rng.standard_normal(u.shape)
    obs = np.concatenate([u, v], axis=-1).reshape(n, -1)
    return obs, R, q


def reset(cfg: WahbaConfig, rng: np.random.Generator) -> WahbaEpisode:
    obs, R, q = reset_batch(cfg, rng, 1)
    return WahbaEpisode(obs[0], R[0], q[0])


def split_pairs(observation, num_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = np.asarray(observation).reshape(-1, num_pairs, 6)
    return pairs[..., :3], pairs[..., 3:]


def rewards(actions, R_true) -> np.ndarray:
    return -chordal_sq(quat_to_rotmat(actions), R_true)


def geodesic_deg(actions, R_true) -> np.ndarray:
    return np.degrees(geodesic_angle(quat_to_rotmat(actions), R_true))


def step(ep: WahbaEpisode, action) -> tuple[float, bool]:
    action = check_unit(action)
    return float(rewards(action, ep.true_rotation)), True


class WahbaEnv:
    """Stateful wrapper with the usual ``reset``/``step`` interface."""

    def __init__(self, cfg: WahbaConfig | None = None):
        self.cfg = cfg or WahbaConfig()
        self.rng = np.random.default_rng(self.cfg.seed)
        self.episode: WahbaEpisode | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.episode = reset(self.cfg, self.rng)
        return self.episode.observation

    def step(self, action) -> tuple[float, bool]:
        if self.episode is None:
            raise RuntimeError("call reset() before step()")
        out = step(self.episode, action)
        self.episode = None
        return out
