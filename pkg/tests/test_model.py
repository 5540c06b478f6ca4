import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srnnpb import kernels
from srnnpb.model import (
    ModelConfig,
    backward,
    generate_closed_loop,
    init_params,
    lstm_step,
    output_project,
    pb_gradients,
    reparameterize,
    rollout,
)
from srnnpb.numerics import RngStream


def small(seed=0, D=3, P=2, H=5, N=4):
    cfg = ModelConfig(input_dim=D, pb_dim=P, hidden_dim=H)
    params = init_params(cfg, N, RngStream(seed))
    params.pb_mu = RngStream(seed, 1).normal((N, P))
    return cfg, params


def test_init_shapes_and_values():
    cfg, p = small()
    p0 = init_params(cfg, 4, RngStream(0))
    p.check(cfg)
    assert p.w_x.shape == (20, 5) and p.w_h.shape == (20, 5) and p.w_out.shape == (3, 5)
    assert np.all(p0.pb_mu == 0) and np.all(p0.sigma == 1)
    assert np.all(p0.b[5:10] == 1) and np.count_nonzero(p0.b) == 5
    assert np.abs(p0.w_x).max() <= 1 / np.sqrt(10)
    with pytest.raises(ValueError):
        ModelConfig(0, 1, 1)


def test_vector_roundtrip():
    _, p = small()
    q = p.with_vector(p.to_vector())
    for a, b in zip(p.arrays().values(), q.arrays().values()):
        assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        p.with_vector(np.zeros(3))


def test_reparameterize():
    mu, sigma, eps = np.array([1.0, -2.0]), np.array([0.5, 2.0]), np.array([2.0, 0.5])
    assert np.array_equal(reparameterize(mu, sigma, eps), [2.0, -1.0])
    assert np.array_equal(reparameterize(mu, sigma, eps, deterministic=True), mu)
    assert np.array_equal(reparameterize(mu, np.zeros(2), eps), mu)
    with pytest.raises(ValueError):
        reparameterize(mu, sigma, eps[:1])


def _manual_rollout(params, pb, T):
    # step-by-step oracle built from the single-cell primitives
    H, D = params.w_h.shape[1], params.w_out.shape[0]
    h, c, x = np.zeros(H), np.zeros(H), np.zeros(D)
    out = []
    for _ in range(T):
        h, c, _ = lstm_step(np.concatenate([pb, x]), h, c, params)
        x = output_project(h, params)
        out.append(x)
    return np.array(out)


def test_rollout_matches_stepwise_oracle():
    _, p = small()
    pb = np.array([0.3, -0.7])
    seq, cache = generate_closed_loop(p, pb, 12)
    np.testing.assert_allclose(seq, _manual_rollout(p, pb, 12), atol=1e-13)
    assert cache.length == 12
    # first input is [pb; 0]
    np.testing.assert_array_equal(cache.z[0, 0], np.concatenate([pb, np.zeros(3)]))


def test_lstm_step_formula():
    _, p = small()
    z, h, c = np.ones(5) * 0.1, np.ones(5) * 0.2, np.ones(5) * -0.3
    h2, c2, g = lstm_step(z, h, c, p)
    a = p.w_x @ z + p.w_h @ h + p.b
    sig = lambda v: 1 / (1 + np.exp(-v))  # noqa: E731
    i, f, gg, o = sig(a[:5]), sig(a[5:10]), np.tanh(a[10:15]), sig(a[15:])
    np.testing.assert_allclose(c2, f * c + i * gg)
    np.testing.assert_allclose(h2, o * np.tanh(f * c + i * gg))
    with pytest.raises(ValueError):
        lstm_step(z[:2], h, c, p)


def test_same_pb_same_output_and_batch_independence():
    _, p = small()
    pbs = RngStream(4).normal((3, 2))
    batch = rollout(p, pbs, 9).x_hat
    for k in range(3):
        np.testing.assert_allclose(batch[k], rollout(p, pbs[k][None], 9).x_hat[0], atol=1e-14)
    assert np.array_equal(rollout(p, pbs, 9).x_hat, batch)


def test_zero_length_rollout():
    _, p = small()
    assert rollout(p, np.zeros((2, 2)), 0).x_hat.shape == (2, 0, 3)


def _loss(params, pb, target):
    x = rollout(params, pb, target.shape[1]).x_hat
    return 0.5 * np.sum((x - target) ** 2)


def test_backward_matches_finite_differences():
    _, p = small(H=4)
    rng = RngStream(8)
    pb = rng.normal((2, 2))
    target = rng.normal((2, 6, 3)) * 0.3
    cache = rollout(p, pb, 6)
    g = backward(cache, cache.x_hat - target, p)
    h = 1e-6
    for name, grad in (("w_x", g.w_x), ("w_h", g.w_h), ("b", g.b), ("w_out", g.w_out), ("b_out", g.b_out)):
        arr = getattr(p, name)
        flat = arr.reshape(-1)
        for k in range(0, flat.size, max(1, flat.size // 7)):
            old = flat[k]
            flat[k] = old + h
            up = _loss(p, pb, target)
            flat[k] = old - h
            dn = _loss(p, pb, target)
            flat[k] = old
            assert grad.reshape(-1)[k] == pytest.approx((up - dn) / (2 * h), rel=1e-5, abs=1e-8), name
    for i in range(2):
        for j in range(2):
            e = np.zeros_like(pb)
            e[i, j] = h
            num = (_loss(p, pb + e, target) - _loss(p, pb - e, target)) / (2 * h)
            assert g.d_pb[i, j] == pytest.approx(num, rel=1e-5, abs=1e-8)


def test_backward_without_weights_keeps_pb_gradient():
    _, p = small()
    cache = rollout(p, np.ones((1, 2)), 5)
    d = np.ones((1, 5, 3))
    full = backward(cache, d, p)
    light = backward(cache, d, p, weights=False)
    np.testing.assert_allclose(light.d_pb, full.d_pb, atol=1e-14)
    assert not np.any(light.w_x)


def test_backward_rejects_foreign_cache_and_bad_shape():
    _, p = small()
    cache = rollout(p, np.ones((1, 2)), 5)
    with pytest.raises(ValueError):
        backward(cache, np.ones((1, 5, 3)), p.copy())
    with pytest.raises(ValueError):
        backward(cache, np.ones((1, 4, 3)), p)


def test_pb_gradients_chain_rule():
    d_pb = np.array([[1.0, -2.0]])
    eps = np.array([[0.5, 0.25]])
    sigma = np.array([[2.0, 4.0]])
    d_mu, d_ls = pb_gradients(d_pb, eps, sigma)
    assert np.array_equal(d_mu, d_pb)
    assert np.array_equal(d_ls, [[1.0, -2.0]])
    assert not np.any(pb_gradients(d_pb, eps, sigma, deterministic=True)[1])


@pytest.mark.skipif(kernels._ckernels is None, reason="compiled kernels not built")
@settings(max_examples=15, deadline=None)
@given(st.integers(1, 4), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_backends_agree(B, T, seed):
    _, p = small(seed=seed % 100)
    rng = RngStream(seed)
    pb = rng.normal((B, 2))
    py, cy = kernels.get_backend("python"), kernels.get_backend("cython")
    fp = py.forward(p.w_x, p.w_h, p.b, p.w_out, p.b_out, pb, T)
    fc = cy.forward(p.w_x, p.w_h, p.b, p.w_out, p.b_out, pb, T)
    for a, b in zip(fp, fc):
        np.testing.assert_allclose(a, b, atol=1e-12)
    d = rng.normal(fp[-1].shape)
    bp = py.backward(p.w_x, p.w_h, p.w_out, 2, *fp[:4], d)
    bc = cy.backward(p.w_x, p.w_h, p.w_out, 2, *fc[:4], d)
    for a, b in zip(bp, bc):
        np.testing.assert_allclose(a, b, atol=1e-11)


def test_backend_selection():
    assert kernels.BACKEND in ("cython", "python")
    assert kernels.get_backend("python") is kernels._kernels_py
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")


def test_pure_python_fallback_selected_by_env():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SRNNPB_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import srnnpb; print(srnnpb.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
