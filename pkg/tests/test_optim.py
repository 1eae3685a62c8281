import math

import numpy as np
import pytest

from tiertransform.optim import Adam, milestone_steps


def scalar_adam(x0, grads, lr, b1=0.9, b2=0.999, eps=1e-8, milestones=(), gamma=0.1):
    """Element-by-element reference written straight from the update rule."""
    x = list(x0)
    m = [0.0] * len(x)
    v = [0.0] * len(x)
    for t, g in enumerate(grads, start=1):
        rate = lr * gamma ** sum(1 for s in milestones if t - 1 >= s)
        for i in range(len(x)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] ** 2
            mh = m[i] / (1 - b1**t)
            vh = v[i] / (1 - b2**t)
            x[i] -= rate * mh / (math.sqrt(vh) + eps)
    return x


def test_matches_scalar_reference(rng):
    grads = rng.normal(size=(30, 5))
    x = np.zeros(5)
    opt = Adam(5, lr=0.01, milestones=[10, 20])
    for g in grads:
        opt.step(x, g)
    np.testing.assert_allclose(x, scalar_adam([0.0] * 5, grads, 0.01, milestones=[10, 20]), rtol=1e-13, atol=1e-15)


def test_first_step_has_size_lr():
    x = np.array([1.0, -2.0])
    Adam(2, lr=0.1).step(x, np.array([3.0, -0.001]))
    np.testing.assert_allclose(x, [0.9, -1.9], rtol=1e-6)


def test_schedule_decays_at_milestones():
    opt = Adam(1, lr=1.0, milestones=milestone_steps([0.5, 0.75], 2000))
    x = np.zeros(1)
    rates = []
    for _ in range(2000):
        rates.append(opt.current_lr())
        opt.step(x, np.ones(1))
    assert rates[999] == 1.0
    assert rates[1000] == pytest.approx(0.1)
    assert rates[1499] == pytest.approx(0.1)
    assert rates[1500] == pytest.approx(0.01)


def test_milestone_steps():
    assert milestone_steps([0.5, 0.75], 2000) == [1000, 1500]
    assert milestone_steps([0.75, 0.5], 200) == [100, 150]


def test_frozen_entries_never_change(rng):
    x = rng.normal(size=6)
    x0 = x.copy()
    free = np.array([True, False, True, False, False, True])
    opt = Adam(6, lr=0.1, free=free)
    for _ in range(50):
        opt.step(x, rng.normal(size=6))
    assert np.array_equal(x[~free], x0[~free])
    assert np.all(x[free] != x0[free])


def test_lr_scale_per_entry():
    x = np.zeros(2)
    Adam(2, lr=0.1, lr_scale=[1.0, 100.0]).step(x, np.array([1.0, 1.0]))
    np.testing.assert_allclose(x, [-0.1, -10.0], rtol=1e-6)


def test_converges_on_quadratic():
    target = np.array([1.0, -2.0, 3.0])
    x = np.zeros(3)
    opt = Adam(3, lr=0.05, milestones=[1500])
    for _ in range(2000):
        opt.step(x, 2 * (x - target))
    np.testing.assert_allclose(x, target, atol=1e-4)
