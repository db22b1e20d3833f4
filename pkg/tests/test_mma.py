import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conformal_infill.mma import MMAError, MMAMemory, mma_update


def run_quadratic(a, c, xmin, xmax, x0, steps=50, fc=None):
    x = np.array(x0, dtype=float)
    mem = MMAMemory()
    f_hist = []
    for _ in range(steps):
        f = float(np.sum(a * (x - c) ** 2))
        f_hist.append(f)
        g = 2 * a * (x - c)
        if fc is None:
            x = mma_update(x, f, g, np.zeros(0), np.zeros((0, len(x))), xmin, xmax, mem, move=0.5)
        else:
            v, dv = fc(x)
            x = mma_update(x, f, g, v, dv, xmin, xmax, mem, move=0.5)
        assert np.all(x >= xmin) and np.all(x <= xmax)
    return x, np.array(f_hist)


def test_separable_quadratic_reaches_box_projection():
    a = np.array([1.0, 3.0, 0.5, 2.0, 1.0])
    c = np.array([0.3, -2.0, 4.0, 0.1, 1.5])
    xmin, xmax = -1.0 * np.ones(5), np.ones(5)
    x, _ = run_quadratic(a, c, xmin, xmax, np.zeros(5))
    assert np.allclose(x, np.clip(c, xmin, xmax), atol=1e-4)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_monotone_decrease_on_convex_toy(seed):
    # compliance-like: min sum c_j / x_j subject to a volume bound
    rng = np.random.default_rng(seed)
    n = 10
    c = rng.uniform(0.5, 5.0, n)
    V = 0.4 * n
    x = 0.4 * np.ones(n)
    xmin, xmax = 0.01 * np.ones(n), np.ones(n)
    mem = MMAMemory()
    f = []
    for _ in range(50):
        f.append(np.sum(c / x))
        x = mma_update(x, f[-1], -c / x ** 2, np.array([x.sum() / V - 1.0]),
                       np.ones((1, n)) / V, xmin, xmax, mem, move=0.2)
        assert np.all(x >= xmin) and np.all(x <= xmax)
    rise = np.diff(f) / f[0]
    assert (rise <= 1e-8).mean() >= 0.9
    exact = np.sqrt(c) / np.sqrt(c).sum() * V
    assert np.allclose(x, exact, atol=1e-6)


def test_interior_quadratic_converges():
    # steps here are set by the asymptotes alone, so the objective zigzags on the way
    rng = np.random.default_rng(5)
    a = rng.uniform(0.2, 5.0, 8)
    c = rng.uniform(-1.0, 1.0, 8)
    lim = np.log(5.0) * np.ones(8)
    x, f = run_quadratic(a, c, -lim, lim, rng.uniform(-lim, lim), steps=60)
    assert np.allclose(x, c, atol=1e-3) and f[-1] < 1e-4 * f[0]


def test_variable_at_bound_with_inward_gradient_stays_feasible():
    xmin, xmax = np.zeros(2), np.ones(2)
    mem = MMAMemory()
    x = np.array([0.0, 1.0])
    for _ in range(5):
        x = mma_update(x, 0.0, np.array([-1.0, 1.0]), np.zeros(0), np.zeros((0, 2)),
                       xmin, xmax, mem)
        assert np.all(x >= 0) and np.all(x <= 1)
    assert x[0] > 0.0 and x[1] < 1.0


def test_linear_constraint_is_respected():
    # min sum (x - 1)^2 s.t. sum x <= 1 on [0, 1]^4 has x = 1/4
    n = 4

    def con(x):
        return np.array([x.sum() - 1.0]), np.ones((1, n))

    x, _ = run_quadratic(np.ones(n), np.ones(n), np.zeros(n), np.ones(n), 0.1 * np.ones(n),
                         steps=60, fc=con)
    assert np.allclose(x, 0.25, atol=2e-3)


def test_errors_and_memory_roundtrip():
    mem = MMAMemory()
    with pytest.raises(MMAError):
        mma_update(np.zeros(2), 0.0, np.array([np.nan, 0.0]), np.zeros(0), np.zeros((0, 2)),
                   -np.ones(2), np.ones(2), mem)
    with pytest.raises(MMAError):
        mma_update(np.zeros(2), 0.0, np.zeros(2), np.zeros(0), np.zeros((0, 2)),
                   np.ones(2), np.ones(2), mem)
    x = mma_update(np.zeros(2), 0.0, np.ones(2), np.zeros(0), np.zeros((0, 2)),
                   -np.ones(2), np.ones(2), mem)
    x = mma_update(x, 0.0, np.ones(2), np.zeros(0), np.zeros((0, 2)), -np.ones(2), np.ones(2), mem)
    back = MMAMemory.from_dict(mem.to_dict())
    assert back.k == 2 and np.array_equal(back.low, mem.low) and np.array_equal(back.xold2, mem.xold2)
    assert MMAMemory.from_dict(MMAMemory().to_dict()).xold1 is None
