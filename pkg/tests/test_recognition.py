import math

import numpy as np
import pytest

from srnnpb.model import ModelConfig, init_params, rollout
from srnnpb.numerics import RngStream
from srnnpb.recognition import (
    RecognitionConfig,
    observed_split,
    pre_search,
    prediction_error,
    recognize,
    recognize_pattern,
    run_recognition_experiment,
    sequence_errors,
    summarize,
)


@pytest.fixture(scope="module")
def model():
    cfg = ModelConfig(3, 2, 6)
    p = init_params(cfg, 4, RngStream(1))
    p.pb_mu = RngStream(2).normal((4, 2)) * 2
    return p


def test_observed_split_floor():
    seq = np.zeros((10, 2))
    pre, post = observed_split(seq, 0.8)
    assert pre.shape[0] == 8 and post.shape[0] == 2
    assert observed_split(np.zeros((7, 1)), 0.8)[0].shape[0] == 5
    assert observed_split(np.zeros((2, 1)), 0.1)[0].shape[0] == 1
    with pytest.raises(ValueError):
        observed_split(np.zeros((1, 1)), 0.8)


def test_pre_search_picks_lowest_and_first_on_ties(model):
    target = rollout(model, model.pb_mu[2][None], 8).x_hat[0]
    best, loss = pre_search(model, target, model.pb_mu)
    assert np.array_equal(best, model.pb_mu[2]) and loss < 1e-25
    cands = np.array([[0.5, 0.5], [0.5, 0.5], [9.0, 9.0]])
    t2 = rollout(model, cands[:1], 8).x_hat[0]
    best, _ = pre_search(model, t2, cands)
    assert np.array_equal(best, cands[0])


def test_sequence_errors_oracle(model):
    target = np.ones((5, 3))
    pbs = np.zeros((2, 2))
    x = rollout(model, pbs, 5).x_hat
    np.testing.assert_allclose(sequence_errors(model, pbs, target), ((x - 1) ** 2).sum(axis=(1, 2)))


def test_recognize_invariants(model):
    target = rollout(model, np.array([[0.4, -0.3]]), 10).x_hat[0]
    before = model.to_vector().copy()
    res = recognize(model, target, RecognitionConfig(iterations=40), RngStream(3))
    assert np.array_equal(model.to_vector(), before)
    assert len(res.trace) == 40
    assert np.all(np.diff(res.l_min_trace) <= 0)
    # L_MIN starts unset, so the first sample always fires
    assert res.trace[0].early_update
    for s, rec in enumerate(res.trace):
        nxt = res.trace[s + 1].mu if s + 1 < len(res.trace) else res.mu
        if rec.early_update:
            assert np.array_equal(nxt, rec.pb)
            assert rec.loss == rec.l_min
    assert res.reconstruction_loss <= res.init_loss
    assert res.reconstruction_loss == min([res.init_loss] + [r.loss for r in res.trace])
    assert res.reconstruction_loss == pytest.approx(float(sequence_errors(model, res.best_mu[None], target)[0]))


def test_recognition_improves_on_baseline(model):
    target = rollout(model, np.array([[0.8, -0.5]]), 10).x_hat[0]
    res = recognize(model, target, RecognitionConfig(iterations=100), RngStream(0))
    assert res.reconstruction_loss < 0.5 * res.init_loss


def test_deterministic_mode_has_no_early_updates(model):
    target = rollout(model, np.array([[0.4, -0.3]]), 10).x_hat[0]
    res = recognize(model, target, RecognitionConfig(iterations=20), RngStream(3), deterministic=True)
    assert not any(r.early_update for r in res.trace)
    assert all(np.array_equal(r.pb, r.mu) for r in res.trace)
    assert np.all(res.sigma == 1.0)


def test_learned_init_recovers_own_sequence(model):
    full = rollout(model, model.pb_mu[1][None], 10).x_hat[0]
    res = recognize_pattern(model, full, RecognitionConfig(init_mode="learned", iterations=10), RngStream(0))
    assert res.reconstruction_loss < 1e-10
    assert res.prediction_error < 1e-10
    assert res.n_observed == 8


def test_random_init_draws_candidates(model):
    target = rollout(model, model.pb_mu[0][None], 8).x_hat[0]
    a = recognize(model, target, RecognitionConfig(init_mode="random", iterations=5), RngStream(4))
    b = recognize(model, target, RecognitionConfig(init_mode="random", iterations=5), RngStream(4))
    assert np.array_equal(a.init_mu, b.init_mu) and np.any(a.init_mu != 0)


def test_prediction_error_oracle(model):
    full = np.zeros((10, 3))
    res = recognize_pattern(model, full, RecognitionConfig(iterations=3), RngStream(0))
    x = rollout(model, res.best_mu[None], 10).x_hat[0]
    assert res.prediction_error == pytest.approx(np.sum(x[8:] ** 2))
    with pytest.raises(ValueError):
        prediction_error(model, res, full[:8])


def test_experiment_layout_and_workers(model):
    pats = [rollout(model, model.pb_mu[k][None], 10).x_hat[0] + 0.01 for k in range(2)]
    cfg = RecognitionConfig(iterations=5, trials=3, init_mode="learned")
    serial = run_recognition_experiment(model, pats, cfg)
    parallel = run_recognition_experiment(model, pats, cfg, workers=2)
    assert [(o.pattern, o.trial) for o in serial] == [(p, t) for p in range(2) for t in range(3)]
    assert [o.reconstruction_loss for o in serial] == [o.reconstruction_loss for o in parallel]
    s = summarize(serial)
    assert s["n"] == 6 and s["recon_std"] >= 0 and math.isfinite(s["pred_mean"])
    with pytest.raises(ValueError):
        run_recognition_experiment(model, [], cfg)


def test_config_validation():
    for bad in ({"iterations": 0}, {"observed_fraction": 0}, {"init_mode": "oracle"},
                {"trials": 0}, {"presearch_sigma": 0}, {"init_mode": "random", "random_candidates": 0}):
        with pytest.raises(ValueError):
            RecognitionConfig(**bad)


def test_bad_init_shape(model):
    with pytest.raises(ValueError):
        recognize(model, np.zeros((5, 3)), RecognitionConfig(), RngStream(0), init=np.zeros(3))
