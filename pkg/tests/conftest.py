import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)


@st.composite
def unit_quats(draw):
    v = draw(arrays(np.float64, 4, elements=finite))
    n = np.linalg.norm(v)
    if n < 1e-3:
        v, n = np.array([1.0, 0.0, 0.0, 0.0]), 1.0
    return v / n


@st.composite
def dispersions(draw, z_max=500.0):
    """Sorted nonpositive triples, log-dense near zero."""
    u = draw(arrays(np.float64, 3, elements=st.floats(0.0, float(np.log10(z_max + 1.0)))))
    return np.sort(np.clip(-(10.0**u - 1.0), -z_max, 0.0))


@st.composite
def rotations4(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    Q, R = np.linalg.qr(np.random.default_rng(seed).standard_normal((4, 4)))
    return Q * np.sign(np.diag(R))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
