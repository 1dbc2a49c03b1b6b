"""PPO with a Bingham (BPP) or Gaussian (GPP) rotation head on the Wahba task.

Both policies share the same trunk and differ only in the head:

* BPP: 19 raw outputs -> Bingham(M, Z); actions are exact rejection samples.
* GPP: 4 means + 4 log-stds -> diagonal Gaussian over R^4; the sample is
  normalized before it reaches the environment, while the log-probability is
  that of the raw (un-normalized) sample.

Episodes are one step long, so the advantage is simply ``reward - V(s)``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import bingham, sampler, wahba
from .diffnet import AdamState, DiffNet, adam_step, clip_grad_norm
from .normconst import FittedB, envelope_b, load_fitted_b, load_fitted_provider

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
GS_JITTER = 1e-6
LOG_HEADER = ["step", "mean_reward", "mean_geodesic_deg", "entropy", "accept_rate", "wall_ms"]
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, msg, diagnostics):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass
class PPOConfig:
    clip_eps: float = 0.2
    lr: float = 3e-4
    lr_schedule: str = "constant"  # "constant" | "linear" (decays to 0 at total_steps)
    epochs_per_batch: int = 10
    batch_episodes: int = 256
    minibatch_size: int = 64
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5
    normalize_advantage: bool = True
    total_steps: int = 200_000
    seed: int = 0
    trunk: str = "pairpool"  # "pairpool" | "mlp"
    pair_hidden: tuple = ()  # per-pair MLP widths; empty pools the lifted pair features directly
    pair_skip: bool = True
    trunk_hidden: tuple = (256, 256)
    value_hidden: tuple = (64, 64)
    b_source: str = "fitted"  # "fitted" | "exact"
    entropy_check_every: int = 10_000
    record_wall_time: bool = False

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.b_source not in ("fitted", "exact"):
            raise ValueError("b_source must be 'fitted' or 'exact'")
        if self.lr_schedule not in ("constant", "linear"):
            raise ValueError("lr_schedule must be 'constant' or 'linear'")
        if self.trunk not in ("pairpool", "mlp"):
            raise ValueError("trunk must be 'pairpool' or 'mlp'")
        self.pair_hidden = tuple(self.pair_hidden)
        self.trunk_hidden = tuple(self.trunk_hidden)
        self.value_hidden = tuple(self.value_hidden)


@dataclass
class Transition:
    observation: np.ndarray
    raw_output: np.ndarray
    sample: np.ndarray  # the variable whose density log_prob is (raw 4-vector for GPP)
    action: np.ndarray  # unit quaternion sent to the environment
    log_prob: float
    reward: float
    value_estimate: float


@dataclass
class Rollout:
    obs: np.ndarray
    raw: np.ndarray
    sample: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    reward: np.ndarray
    value: np.ndarray
    geodesic_deg: np.ndarray
    proposals: np.ndarray

    def __len__(self):
        return len(self.reward)

    def transitions(self):
        for i in range(len(self)):
            yield Transition(
                self.obs[i], self.raw[i], self.sample[i], self.action[i],
                float(self.log_prob[i]), float(self.reward[i]), float(self.value[i]),
            )


def lift_pairs(pairs: np.ndarray) -> np.ndarray:
    """``(m, 6)`` pairs ``(u, v)`` -> ``(m, 15)`` features ``(u, v, u v^T)``."""
    u, v = pairs[:, :3], pairs[:, 3:]
    return np.concatenate([u, v, (u[:, :, None] * v[:, None, :]).reshape(-1, 9)], axis=1)


class PairPool:
    """Per-pair features, mean-pooled over pairs, then an MLP.

    Input rows are flattened ``(P, 6)`` pair blocks; the pooled code is
    invariant to pair order. With ``lift=True`` each pair also carries its
    outer product, so the pooled code can express the correlation ``sum v u^T``.
    ``phi`` (shared per-pair MLP) may be ``None``, in which case the lifted
    features are pooled directly. With ``skip=True`` the pooled code is
    appended to the output so a downstream linear layer sees it unsquashed.
    """

    PAIR_DIM = 6

    def __init__(self, phi: DiffNet | None, rho: DiffNet, lift: bool = True, skip: bool = False):
        d = 15 if lift else self.PAIR_DIM
        pooled = phi.out_dim if phi is not None else d
        if (phi is not None and phi.in_dim != d) or rho.in_dim != pooled:
            raise ValueError("pair network dimensions do not chain")
        self.phi, self.rho, self.lift, self.skip = phi, rho, lift, skip
        self.pooled_dim = pooled

    @classmethod
    def init(cls, pair_hidden=(64, 128), hidden=(256,), seed: int = 0, lift: bool = True, skip: bool = False):
        d = 15 if lift else cls.PAIR_DIM
        pair_hidden = tuple(pair_hidden)
        phi = None
        if pair_hidden:
            phi = DiffNet.init([d, *pair_hidden], activation="tanh", out_activation="tanh", seed=seed)
        rho = DiffNet.init(
            [pair_hidden[-1] if pair_hidden else d, *hidden], activation="tanh", out_activation="tanh", seed=seed + 3
        )
        return cls(phi, rho, lift, skip)

    @property
    def out_dim(self) -> int:
        return self.rho.out_dim + (self.pooled_dim if self.skip else 0)

    def params(self):
        return (self.phi.params() if self.phi is not None else []) + self.rho.params()

    def mark_updated(self):
        if self.phi is not None:
            self.phi.mark_updated()
        self.rho.mark_updated()

    def _pairs(self, obs):
        obs = np.atleast_2d(np.asarray(obs, float))
        n, P = obs.shape[0], obs.shape[1] // self.PAIR_DIM
        if P * self.PAIR_DIM != obs.shape[1]:
            raise ValueError(f"observation width {obs.shape[1]} is not a multiple of {self.PAIR_DIM}")
        flat = obs.reshape(n * P, self.PAIR_DIM)
        return (lift_pairs(flat) if self.lift else flat), n, P

    def forward(self, obs, tape: bool = False):
        flat, n, P = self._pairs(obs)
        t1 = None
        if self.phi is None:
            f = flat
        elif tape:
            f, t1 = self.phi.forward(flat, tape=True)
        else:
            f = self.phi(flat)
        pool = f.reshape(n, P, -1).mean(axis=1)
        if tape:
            h, t2 = self.rho.forward(pool, tape=True)
        else:
            h = self.rho(pool)
        if self.skip:
            h = np.concatenate([h, pool], axis=1)
        return (h, (t1, t2, n, P)) if tape else h

    __call__ = forward

    def backward(self, tape, cot):
        """Parameter gradients; the input gradient is not propagated (returns ``None``)."""
        t1, t2, n, P = tape
        k = self.rho.out_dim
        g_rho, gpool = self.rho.backward(t2, cot[:, :k])
        if t1 is None:
            return g_rho, None
        if self.skip:
            gpool = gpool + cot[:, k:]
        gf = np.repeat(gpool[:, None, :] / P, P, axis=1).reshape(n * P, -1)
        g_phi, _ = self.phi.backward(t1, gf)
        return g_phi + g_rho, None

    def to_dict(self):
        return {
            "kind": "pairpool", "lift": self.lift, "skip": self.skip,
            "phi": self.phi.to_dict() if self.phi is not None else None, "rho": self.rho.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        phi = DiffNet.from_dict(d["phi"]) if d.get("phi") is not None else None
        return cls(phi, DiffNet.from_dict(d["rho"]), d.get("lift", True), d.get("skip", False))


def trunk_from_dict(d):
    return PairPool.from_dict(d) if d.get("kind") == "pairpool" else DiffNet.from_dict(d)


class Policy:
    """Trunk + head network pair with a BPP or GPP output distribution."""

    def __init__(self, variant: str, trunk, head: DiffNet, provider=None, bprov=None):
        variant = variant.lower()
        if variant not in ("bpp", "gpp"):
            raise ValueError(f"unknown policy variant {variant!r}")
        need = bingham.RAW_DIM if variant == "bpp" else 8
        if head.out_dim != need:
            raise ValueError(f"{variant} head needs {need} outputs, got {head.out_dim}")
        self.variant = variant
        self.trunk = trunk
        self.head = head
        self.provider = provider
        self.bprov = bprov
        if variant == "bpp" and provider is None:
            self.provider = load_fitted_provider()

    @classmethod
    def init(
        cls, variant: str, obs_dim: int, hidden=(256, 256), seed: int = 0, provider=None, bprov=None,
        trunk: str = "pairpool", pair_hidden=(), skip: bool = True,
    ):
        variant = variant.lower()
        out = bingham.RAW_DIM if variant == "bpp" else 8
        if trunk == "pairpool":
            body = PairPool.init(pair_hidden, hidden, seed=seed, skip=skip)
        elif trunk == "mlp":
            body = DiffNet.init([obs_dim, *hidden], activation="tanh", out_activation="tanh", seed=seed)
        else:
            raise ValueError(f"unknown trunk {trunk!r}")
        head = DiffNet.init([body.out_dim, out], out_activation="identity", seed=seed + 1)
        # small head init keeps the initial distribution close to its widest form
        head.layers[0].W *= 0.01
        if variant == "bpp":
            # start Gram-Schmidt from the identity basis; tiny raw vectors are ill-conditioned
            head.layers[0].b[3:] = np.eye(4).ravel()
        return cls(variant, body, head, provider, bprov)

    def params(self):
        return self.trunk.params() + self.head.params()

    def mark_updated(self):
        self.trunk.mark_updated()
        self.head.mark_updated()

    def raw(self, obs, tape: bool = False):
        if not tape:
            return self.head(self.trunk(obs))
        h, t1 = self.trunk.forward(obs, tape=True)
        raw, t2 = self.head.forward(h, tape=True)
        return raw, (t1, t2)

    def backward(self, tapes, graw):
        t1, t2 = tapes
        g_head, gh = self.head.backward(t2, graw)
        g_trunk, _ = self.trunk.backward(t1, gh)
        return g_trunk + g_head

    # --- distribution ---

    def _gauss(self, raw):
        return raw[..., :4], np.clip(raw[..., 4:], LOG_STD_MIN, LOG_STD_MAX)

    def log_prob(self, raw, sample):
        if self.variant == "bpp":
            return bingham.log_pdf_raw(raw, sample, self.provider)
        mu, ls = self._gauss(raw)
        r = (sample - mu) * np.exp(-ls)
        return np.sum(-0.5 * r * r - ls - _HALF_LOG_2PI, axis=-1)

    def log_prob_and_grad(self, raw, sample):
        if self.variant == "bpp":
            return bingham.log_pdf_raw_and_grad(raw, sample, self.provider)
        mu, ls = self._gauss(raw)
        inv = np.exp(-ls)
        r = (sample - mu) * inv
        lp = np.sum(-0.5 * r * r - ls - _HALF_LOG_2PI, axis=-1)
        live = (raw[..., 4:] > LOG_STD_MIN) & (raw[..., 4:] < LOG_STD_MAX)
        g = np.concatenate([r * inv, np.where(live, r * r - 1.0, 0.0)], axis=-1)
        return lp, g

    def entropy(self, raw):
        if self.variant == "bpp":
            return bingham.entropy_from_z(bingham.transform_Z(raw[..., :3]), self.provider)
        _, ls = self._gauss(raw)
        return np.sum(ls + 0.5 + _HALF_LOG_2PI, axis=-1)

    def entropy_and_grad(self, raw):
        if self.variant == "bpp":
            return bingham.entropy_raw_and_grad(raw, self.provider)
        _, ls = self._gauss(raw)
        live = (raw[..., 4:] > LOG_STD_MIN) & (raw[..., 4:] < LOG_STD_MAX)
        g = np.zeros_like(raw)
        g[..., 4:] = live.astype(float)
        return np.sum(ls + 0.5 + _HALF_LOG_2PI, axis=-1), g

    def _b(self, z):
        if self.bprov is None:
            return envelope_b(z), 0.0
        return self.bprov(z), sampler.FITTED_B_MARGIN

    def _bpp_params(self, raw, rng):
        try:
            M = bingham.transform_M(raw[:, 3:])
        except bingham.DegenerateBasisError:
            raw = raw.copy()
            raw[:, 3:] += rng.uniform(-GS_JITTER, GS_JITTER, raw[:, 3:].shape)
            M = bingham.transform_M(raw[:, 3:])
        return raw, M, bingham.transform_Z(raw[:, :3])

    def act(self, obs, rng: np.random.Generator):
        """Sample actions for a batch of observations.

        Returns ``(action, log_prob, raw, sample, proposals)``.
        """
        raw = self.raw(obs)
        if self.variant == "bpp":
            raw, M, z = self._bpp_params(raw, rng)
            b, margin = self._b(z)
            q, used = sampler.sample_rows(M, z, b, rng, margin=margin)
            return q, self.log_prob(raw, q), raw, q, used
        mu, ls = self._gauss(raw)
        a = mu + np.exp(ls) * rng.standard_normal(mu.shape)
        q = a / np.linalg.norm(a, axis=-1, keepdims=True)
        return q, self.log_prob(raw, a), raw, a, np.ones(len(a), dtype=int)

    def mode(self, obs):
        raw = self.raw(obs)
        if self.variant == "bpp":
            return bingham.transform_M(raw[:, 3:])[..., :, 3]
        mu = raw[:, :4]
        return mu / np.linalg.norm(mu, axis=-1, keepdims=True)

    # --- persistence ---

    def to_dict(self):
        return {"variant": self.variant, "trunk": self.trunk.to_dict(), "head": self.head.to_dict()}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path, provider=None, bprov=None):
        d = json.loads(Path(path).read_text())
        return cls(d["variant"], trunk_from_dict(d["trunk"]), DiffNet.from_dict(d["head"]), provider, bprov)


def make_value_net(obs_dim: int, hidden=(64, 64), seed: int = 0) -> DiffNet:
    return DiffNet.init([obs_dim, *hidden, 1], activation="tanh", seed=seed)


def collect(policy: Policy, value_net: DiffNet, env_cfg: wahba.WahbaConfig, rng, n: int) -> Rollout:
    obs, R, _ = wahba.reset_batch(env_cfg, rng, n)
    action, lp, raw, sample, used = policy.act(obs, rng)
    return Rollout(
        obs=obs, raw=raw, sample=sample, action=action, log_prob=lp,
        reward=wahba.rewards(action, R), value=value_net(obs)[:, 0],
        geodesic_deg=wahba.geodesic_deg(action, R), proposals=used,
    )


def clipped_surrogate(ratio, adv, eps):
    """Per-sample PPO objective ``min(r A, clip(r, 1-eps, 1+eps) A)`` and its d/dr."""
    s1 = ratio * adv
    s2 = np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    obj = np.minimum(s1, s2)
    dr = np.where(s1 <= s2, adv, 0.0)
    return obj, dr


@dataclass
class PPOState:
    policy: Policy
    value_net: DiffNet
    opt: AdamState

    @classmethod
    def create(cls, policy: Policy, value_net: DiffNet):
        return cls(policy, value_net, AdamState.for_params(policy.params() + value_net.params()))

    def params(self):
        return self.policy.params() + self.value_net.params()


def ppo_losses(state: PPOState, batch: Rollout, idx, adv, cfg: PPOConfig, with_grad: bool = True, rng=None):
    """Loss pieces on minibatch ``idx``; returns ``(diag, grads or None)``."""
    pol, vnet = state.policy, state.value_net
    obs = batch.obs[idx]
    raw, tapes = pol.raw(obs, tape=True)
    try:
        lp, glp = pol.log_prob_and_grad(raw, batch.sample[idx])
    except bingham.DegenerateBasisError:
        # same perturb-and-retry-once rule as act()
        jit = (rng or np.random.default_rng(0)).uniform(-GS_JITTER, GS_JITTER, raw[:, 3:].shape)
        raw = raw.copy()
        raw[:, 3:] += jit
        lp, glp = pol.log_prob_and_grad(raw, batch.sample[idx])
    ratio = np.exp(lp - batch.log_prob[idx])
    obj, dr = clipped_surrogate(ratio, adv[idx], cfg.clip_eps)
    B = len(idx)
    surr_loss = -float(np.mean(obj))
    graw = (-dr * ratio / B)[:, None] * glp
    if cfg.entropy_coef > 0.0:
        H, gH = pol.entropy_and_grad(raw)
        graw = graw - (cfg.entropy_coef / B) * gH
    else:
        H = pol.entropy(raw)
    v, vtape = vnet.forward(obs, tape=True)
    verr = v[:, 0] - batch.reward[idx]
    v_loss = float(np.mean(verr * verr))
    diag = {
        "surrogate_loss": surr_loss,
        "value_loss": v_loss,
        "entropy": float(np.mean(H)),
        "mean_ratio": float(np.mean(ratio)),
    }
    if not all(np.isfinite(x) for x in diag.values()):
        raise NonFiniteLossError("non-finite PPO loss", diag)
    if not with_grad:
        return diag, None
    g_pol = pol.backward(tapes, graw)
    g_val, _ = vnet.backward(vtape, (cfg.value_coef * 2.0 * verr / B)[:, None])
    return diag, g_pol + g_val


def advantages(batch: Rollout, normalize: bool) -> np.ndarray:
    adv = batch.reward - batch.value
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def ppo_update(state: PPOState, batch: Rollout, cfg: PPOConfig, rng: np.random.Generator, lr: float | None = None) -> dict:
    """``epochs_per_batch`` passes of shuffled minibatch Adam steps; returns mean diagnostics."""
    lr = cfg.lr if lr is None else lr
    adv = advantages(batch, cfg.normalize_advantage)
    n = len(batch)
    acc: dict[str, list] = {}
    for _ in range(cfg.epochs_per_batch):
        perm = rng.permutation(n)
        for s in range(0, n, cfg.minibatch_size):
            idx = perm[s : s + cfg.minibatch_size]
            diag, grads = ppo_losses(state, batch, idx, adv, cfg, rng=rng)
            clip_grad_norm(grads, cfg.max_grad_norm)
            adam_step(state.params(), grads, state.opt, lr)
            state.policy.mark_updated()
            state.value_net.mark_updated()
            for k, v in diag.items():
                acc.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in acc.items()}


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in self.rows:
            w.writerow([
                r["step"], repr(r["mean_reward"]), repr(r["mean_geodesic_deg"]),
                repr(r["entropy"]), repr(r["accept_rate"]),
                "" if r["wall_ms"] is None else r["wall_ms"],
            ])
        return buf.getvalue()

    def final_mean(self, key: str, window: int = 10_000) -> float:
        last = self.rows[-1]["step"]
        vals = [r[key] for r in self.rows if r["step"] > last - window]
        return float(np.mean(vals))


def _entropy_spot_check(policy: Policy, raw_row, rng, n: int = 4000) -> dict:
    """Analytic entropy vs Monte-Carlo -mean(log p) for one head output."""
    M = bingham.transform_M(raw_row[3:])
    z = bingham.transform_Z(raw_row[:3])
    raws = np.repeat(raw_row[None, :], n, axis=0)
    q, _ = sampler.sample_rows(np.repeat(M[None], n, 0), np.repeat(z[None], n, 0), np.full(n, envelope_b(z)), rng)
    lp = policy.log_prob(raws, q)
    H = float(policy.entropy(raw_row[None, :])[0])
    se = float(lp.std() / np.sqrt(n))
    return {"analytic": H, "mc": float(-lp.mean()), "se": se, "ok": bool(abs(H + lp.mean()) <= 3 * se + 1e-12)}


def default_bprov(cfg: PPOConfig) -> FittedB | None:
    return load_fitted_b() if cfg.b_source == "fitted" else None


def train(env_cfg: wahba.WahbaConfig, cfg: PPOConfig, variant: str, provider=None, bprov=None, progress=None):
    """Run PPO; returns ``(TrainingLog, PPOState)``. Deterministic for fixed seeds."""
    rng = np.random.default_rng(cfg.seed)
    obs_dim = env_cfg.obs_dim
    if variant.lower() == "bpp" and bprov is None:
        bprov = default_bprov(cfg)
    policy = Policy.init(
        variant, obs_dim, cfg.trunk_hidden, seed=cfg.seed, provider=provider, bprov=bprov,
        trunk=cfg.trunk, pair_hidden=cfg.pair_hidden, skip=cfg.pair_skip,
    )
    vnet = make_value_net(obs_dim, cfg.value_hidden, seed=cfg.seed + 7)
    state = PPOState.create(policy, vnet)
    env_rng = np.random.default_rng([cfg.seed, env_cfg.seed])
    tlog = TrainingLog()
    steps = 0
    checks = []
    next_check = cfg.entropy_check_every
    t0 = time.perf_counter()
    while True:
        n = cfg.batch_episodes if cfg.total_steps <= 0 else min(cfg.batch_episodes, cfg.total_steps - steps)
        batch = collect(policy, vnet, env_cfg, env_rng, max(n, 1))
        steps += len(batch)
        ent = float(np.mean(policy.entropy(batch.raw)))
        if cfg.total_steps > 0:
            frac = 1.0 - (steps - len(batch)) / cfg.total_steps if cfg.lr_schedule == "linear" else 1.0
            ppo_update(state, batch, cfg, rng, lr=cfg.lr * frac)
        wall = int(round((time.perf_counter() - t0) * 1000)) if cfg.record_wall_time else None
        tlog.rows.append({
            "step": steps,
            "mean_reward": float(np.mean(batch.reward)),
            "mean_geodesic_deg": float(np.mean(batch.geodesic_deg)),
            "entropy": ent,
            "accept_rate": float(len(batch) / np.sum(batch.proposals)),
            "wall_ms": wall,
        })
        if policy.variant == "bpp" and cfg.entropy_check_every and steps >= next_check:
            checks.append({"step": steps, **_entropy_spot_check(policy, batch.raw[0], rng)})
            next_check += cfg.entropy_check_every
        if progress:
            progress(tlog.rows[-1])
        if steps >= cfg.total_steps:
            break
    tlog.summary = {
        "variant": policy.variant,
        "steps": steps,
        "final_mean_reward": tlog.final_mean("mean_reward"),
        "final_mean_geodesic_deg": tlog.final_mean("mean_geodesic_deg"),
        "entropy_checks": checks,
        "entropy_checks_failed": sum(not c["ok"] for c in checks),
        "wall_s": time.perf_counter() - t0,
    }
    return tlog, state


def evaluate(policy, env_cfg: wahba.WahbaConfig, episodes: int, seed: int = 0, deterministic: bool = True) -> dict:
    """Mean reward and geodesic error over fresh episodes.

    ``policy`` may be ``"oracle"``, which answers with the hidden rotation.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    obs, R, q_true = wahba.reset_batch(env_cfg, rng, episodes)
    if isinstance(policy, str) and policy == "oracle":
        act = q_true
    elif deterministic:
        act = policy.mode(obs)
    else:
        act = policy.act(obs, rng)[0]
    r = wahba.rewards(act, R)
    return {
        "mean_reward": float(np.mean(r)),
        "mean_geodesic_deg": float(np.mean(wahba.geodesic_deg(act, R))),
        "std": float(np.std(r)),
        "episodes": episodes,
    }


def config_dict(cfg) -> dict:
    d = asdict(cfg)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
