import numpy as np

from esihgnn import numeric as nc
from esihgnn.optim import AdamW, clip_grad_norm, global_norm


def _param(values):
    return nc.Parameter(np.asarray(values, dtype=np.float64), dtype=np.float64)


def test_adamw_matches_closed_form():
    p = _param([1.0, -2.0])
    opt = AdamW([p], lr=0.1, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.5)
    x = np.array([1.0, -2.0])
    m = np.zeros(2)
    v = np.zeros(2)
    for t in range(1, 4):
        g = np.array([0.3, -0.1]) * t
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x = x * (1 - 0.1 * 0.5)
        x = x - 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert np.allclose(p.data, x, atol=1e-15)


def test_decay_is_decoupled_from_gradient_scale():
    # with zero gradients only the decay moves the weights
    p = _param([2.0])
    p.grad = np.zeros(1)
    AdamW([p], lr=0.1, weight_decay=0.1).step()
    assert np.allclose(p.data, [2.0 * 0.99])


def test_zero_learning_rate_is_bitwise_noop(rng):
    p = _param(rng.normal(size=5))
    before = p.data.copy()
    opt = AdamW([p], lr=0.0)
    for _ in range(3):
        p.grad = rng.normal(size=5)
        opt.step()
    assert np.array_equal(before, p.data)


def test_params_without_grad_are_skipped():
    p = _param([1.0])
    AdamW([p], lr=1.0).step()
    assert p.data.tolist() == [1.0]


def test_clip_grad_norm():
    a, b = _param([0.0, 0.0]), _param([0.0])
    a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([a, b], 1.0) == 5.0
    assert abs(global_norm([a, b]) - 1.0) < 1e-9
    a.grad = np.array([0.3, 0.0])
    b.grad = np.array([0.4])
    clip_grad_norm([a, b], 1.0)
    assert np.allclose(a.grad, [0.3, 0.0])
