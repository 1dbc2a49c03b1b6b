import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bpp.diffnet import AdamState, DiffNet, StaleTapeError, adam_step, clip_grad_norm


def _net(seed=0, **kw):
    return DiffNet.init([3, 8, 8, 2], activation="tanh", seed=seed, **kw)


def _loss(net, x, c):
    return float(np.sum(net(x) * c))


def test_param_grads_match_fd(rng):
    for act in ("tanh", "softplus"):
        net = DiffNet.init([3, 7, 5, 2], activation=act, seed=1)
        x, c = rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
        _, t = net.forward(x, tape=True)
        grads, _ = net.backward(t, c)
        h = 1e-6
        for p, g in zip(net.params(), grads):
            for i in range(p.size):
                old = p.flat[i]
                p.flat[i] = old + h
                up = _loss(net, x, c)
                p.flat[i] = old - h
                dn = _loss(net, x, c)
                p.flat[i] = old
                fd = (up - dn) / (2 * h)
                assert abs(g.flat[i] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_input_grad_matches_fd_with_input_map(rng):
    net = DiffNet.init([3, 6, 1], seed=2, input_map="neglog1p", in_shift=np.ones(3), in_scale=2 * np.ones(3))
    x = -rng.uniform(0, 50, (4, 3))
    _, dx = net.input_grad(x)
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (net(x + e) - net(x - e))[:, 0] / (2 * h)
        assert np.allclose(dx[:, j], fd, rtol=1e-6, atol=1e-9)


def test_stale_tape_rejected(rng):
    net = _net()
    x = rng.standard_normal((2, 3))
    _, t = net.forward(x, tape=True)
    net.mark_updated()
    with pytest.raises(StaleTapeError):
        net.backward(t, np.ones((2, 2)))
    _, t = net.forward(x, tape=True)
    net.backward(t, np.ones((2, 2)))
    with pytest.raises(StaleTapeError):
        net.backward(t, np.ones((2, 2)))
    with pytest.raises(StaleTapeError):
        _, t = _net(seed=1).forward(x, tape=True)
        net.backward(t, np.ones((2, 2)))


def test_round_trip_bit_exact(tmp_path, rng):
    net = _net(out_shift=np.array([0.5, -1.0]), out_scale=np.array([2.0, 3.0]))
    net.save(tmp_path / "w.json")
    back = DiffNet.load(tmp_path / "w.json")
    x = rng.standard_normal((9, 3))
    assert np.array_equal(net(x), back(x))
    d = json.loads((tmp_path / "w.json").read_text())
    assert d["layer_sizes"] == [3, 8, 8, 2] and d["version"] == 1


def test_load_rejects_bad_files(tmp_path):
    d = _net().to_dict()
    d["version"] = 99
    with pytest.raises(ValueError):
        DiffNet.from_dict(d)
    d = _net().to_dict()
    d["weights"][0][0][0] = float("nan")
    with pytest.raises(ValueError):
        DiffNet.from_dict(d)


def test_shape_errors():
    with pytest.raises(ValueError):
        _net()(np.zeros((2, 4)))


@given(st.integers(1, 70), st.integers(0, 1000))
def test_batch_rows_independent_of_batch(n, seed):
    net = _net()
    x = np.random.default_rng(seed).standard_normal((n, 3))
    full = net(x)
    assert np.array_equal(full[-1], net(x[-1:])[0])


def test_adam_decreases_quadratic():
    net = DiffNet.init([2, 1], out_activation="identity", seed=0)
    x = np.eye(2)
    y = np.array([[1.0], [-2.0]])
    st_ = AdamState.for_params(net.params())
    first = None
    for _ in range(500):
        p, t = net.forward(x, tape=True)
        r = p - y
        loss = float(np.sum(r * r))
        first = loss if first is None else first
        g, _ = net.backward(t, 2 * r)
        adam_step(net, g, st_, 0.05)
    assert loss < 1e-3 * first


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([[4.0]])]
    n = clip_grad_norm(g, 1.0)
    assert n == 5.0 and np.isclose(np.sqrt(sum(np.sum(x * x) for x in g)), 1.0)
    g = [np.array([0.3])]
    clip_grad_norm(g, 1.0)
    assert g[0][0] == 0.3
