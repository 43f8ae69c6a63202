import numpy as np
import pytest

from smat.autodiff import ShapeError
from smat.nn import Parameter
from smat.optim import AdamW, AdamWConfig, AdamWState, adamw_step


def test_zero_gradient_zero_decay_is_noop(rng):
    p = rng.standard_normal((3, 4))
    before = p.copy()
    adamw_step([p], [np.zeros_like(p)], AdamWState(), AdamWConfig(weight_decay=0.0))
    np.testing.assert_array_equal(p, before)


def test_first_step_is_signed_lr(rng):
    p = np.zeros(50)
    g = rng.standard_normal(50) * 10.0 ** rng.integers(-3, 3, 50)
    cfg = AdamWConfig(lr=1e-3, weight_decay=0.0)
    adamw_step([p], [g], AdamWState(), cfg)
    # closed form: m_hat = g, sqrt(v_hat) = |g|
    np.testing.assert_allclose(p, -cfg.lr * g / (np.abs(g) + cfg.eps), rtol=1e-12)
    big = np.abs(g) >= 1e-3
    np.testing.assert_allclose(p[big], -cfg.lr * np.sign(g[big]), rtol=1e-5)


def test_decay_only(rng):
    p = rng.standard_normal(10)
    before = p.copy()
    cfg = AdamWConfig(lr=1e-2, weight_decay=0.5)
    adamw_step([p], [np.zeros_like(p)], AdamWState(), cfg)
    np.testing.assert_allclose(p, before * (1 - cfg.lr * cfg.weight_decay))


def test_bias_correction_keeps_constant_gradient_steps_equal():
    p = np.zeros(1)
    state = AdamWState()
    cfg = AdamWConfig(lr=0.1, weight_decay=0.0)
    trail = []
    for _ in range(5):
        adamw_step([p], [np.array([2.0])], state, cfg)
        trail.append(p[0])
    np.testing.assert_allclose(np.diff(trail), -0.1, rtol=1e-6)
    assert state.step == 5


def test_shape_errors():
    with pytest.raises(ShapeError):
        adamw_step([np.zeros(2)], [np.zeros(3)], AdamWState(), AdamWConfig())
    with pytest.raises(ShapeError):
        adamw_step([np.zeros(2)], [], AdamWState(), AdamWConfig())


def test_group_multiplier():
    a, b = Parameter(np.zeros(3)), Parameter(np.zeros(3))
    a.grad = np.ones(3)
    b.grad = np.ones(3)
    opt = AdamW({"backbone": [a], "head": [b]}, AdamWConfig(lr=1e-2, weight_decay=0.0), {"backbone": 0.1})
    assert opt.group_lr("backbone") == pytest.approx(0.1 * opt.group_lr("head"))
    opt.step()
    np.testing.assert_allclose(a.data, -1e-3, rtol=1e-5)
    np.testing.assert_allclose(b.data, -1e-2, rtol=1e-5)
    opt.zero_grad()
    assert a.grad is None and b.grad is None


def test_missing_gradient_counts_as_zero():
    a = Parameter(np.ones(2))
    opt = AdamW({"head": [a]}, AdamWConfig(lr=0.1, weight_decay=0.0))
    opt.step()
    np.testing.assert_array_equal(a.data, 1.0)
