"""Avoidance objective, its gradient, and the full training pipeline."""

import dataclasses

import numpy as np
import pytest

from uniq_mdp.data import build_mix, build_undesired, label_undesired, rollout
from uniq_mdp.kernels import TrainingDiverged
from uniq_mdp.mdp import QTable, TabularPolicy, softmax_policy
from uniq_mdp.ratio import closed_form_optimum, tau_of
from uniq_mdp.training import (
    UniqConfig,
    f_gradient,
    f_objective,
    loss_trace_to_csv,
    policy_from_json,
    psi_chi2,
    q_from_json,
    train_q,
    train_uniq,
    wbc_extract,
)


@pytest.fixture(scope="module")
def small_mdp():
    from uniq_mdp.oracles import random_mdp

    return random_mdp(4, 3, 0.9, np.random.default_rng(0))


@pytest.fixture(scope="module")
def mix_and_un(small_mdp):
    rng = np.random.default_rng(42)
    sharp = rng.random((small_mdp.num_states, small_mdp.num_actions))
    sharp /= sharp.sum(axis=1, keepdims=True)
    pol = TabularPolicy(sharp)
    trajs = rollout(small_mdp, pol, 120, 25, seed=21)
    bad, _ = label_undesired(trajs, np.median([t.total_cost for t in trajs]))
    mix = build_mix(trajs[:80], [], 80, 0, small_mdp, seed=1)
    thresh = min(t.total_cost for t in bad) - 1e-9
    un = build_undesired(bad, min(len(bad), 30), thresh, small_mdp, seed=2)
    return mix, un


def tau_for(mix, un):
    from uniq_mdp.data import empirical_occupancy

    w_un = empirical_occupancy(un, "discounted")
    w_mix = empirical_occupancy(mix, "discounted")
    return tau_of(closed_form_optimum(w_un, w_mix), w_mix > 0)


def test_psi_is_concave_quadratic():
    t = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(psi_chi2(t), t - t**2)


def test_config_validation():
    UniqConfig()
    with pytest.raises(ValueError, match="step counts"):
        UniqConfig(steps=-1)
    with pytest.raises(ValueError, match="learning rates"):
        UniqConfig(lr_q=0.0)
    with pytest.raises(ValueError, match="gamma"):
        UniqConfig(gamma=1.0)
    with pytest.raises(ValueError, match="weight_cap"):
        UniqConfig(wbc_weight_cap=0.5)
    with pytest.raises(ValueError, match="occupancy_weighting"):
        UniqConfig(occupancy_weighting="sampled")
    with pytest.raises(ValueError, match="batch_size"):
        UniqConfig(batch_size=0)
    with pytest.raises(ValueError, match="checkpoint_every"):
        UniqConfig(checkpoint_every=0)


def test_f_gradient_matches_finite_differences(mix_and_un, rng):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    for sampled in (False, True):
        q = rng.normal(scale=0.5, size=tau.tau.shape)
        grad = f_gradient(q, tau, mix, sampled_actions=sampled)
        h = 1e-6
        for idx in np.ndindex(q.shape):
            qp = q.copy()
            qp[idx] += h
            up = f_objective(qp, tau, mix, sampled_actions=sampled)
            qp[idx] -= 2 * h
            down = f_objective(qp, tau, mix, sampled_actions=sampled)
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(grad[idx]), 1e-8)
            assert abs(fd - grad[idx]) / denom < 1e-4


def test_f_objective_accepts_qtable_and_raw(mix_and_un, rng):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    q = rng.normal(size=tau.tau.shape)
    assert f_objective(QTable(q), tau, mix) == f_objective(q, tau, mix)


def test_f_objective_exact_form_uses_model(mix_and_un, small_mdp, rng):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    q = rng.normal(size=tau.tau.shape)
    sample = f_objective(q, tau, mix)
    exact = f_objective(q, tau, mix, mdp=small_mdp)
    assert np.isfinite(sample) and np.isfinite(exact)
    assert sample != exact  # different estimators of the same functional


def test_tau_shape_and_sign_validation(mix_and_un):
    mix, _ = mix_and_un
    with pytest.raises(ValueError, match="shape"):
        f_objective(np.zeros((2, 2)), np.zeros((3, 3)), mix)
    bad = -np.ones((mix.num_states, mix.num_actions))
    with pytest.raises(ValueError, match="non-negative"):
        f_objective(np.zeros_like(bad), bad, mix)


def test_train_q_directions_move_objective_oppositely(mix_and_un):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    cfg = UniqConfig(steps=300, lr_q=0.02, ratio_steps=0)
    start = f_objective(np.zeros(tau.tau.shape), tau, mix, sampled_actions=True)
    q_down, trace_down = train_q(mix, tau, cfg, direction="avoid")
    q_up, trace_up = train_q(mix, tau, cfg, direction="imitate")
    end_down = f_objective(q_down, tau, mix, sampled_actions=True)
    end_up = f_objective(q_up, tau, mix, sampled_actions=True)
    assert end_down < start < end_up
    assert trace_down.shape[1] == 3
    with pytest.raises(ValueError, match="direction"):
        train_q(mix, tau, cfg, direction="descend")


def test_divergence_guard_raises(mix_and_un):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    with pytest.raises(TrainingDiverged):
        train_q(mix, tau, UniqConfig(steps=40000, lr_q=5.0, checkpoint_every=100))


def test_wbc_exact_weights_is_softmax(rng):
    q = rng.normal(size=(5, 3))
    pol = wbc_extract(q, dataset=None)
    np.testing.assert_allclose(pol.probs, softmax_policy(q).probs, atol=1e-12)


def test_wbc_closed_form_matches_gradient(mix_and_un, rng):
    mix, _ = mix_and_un
    q = rng.normal(size=(mix.num_states, mix.num_actions))
    a = wbc_extract(q, mix, method="closed_form")
    # count-scaled weights need a step small enough that lr * rowsum < 1
    lr = 0.5 / mix.num_transitions
    b = wbc_extract(q, mix, method="gradient", lr=lr, steps=30000)
    np.testing.assert_allclose(a.probs, b.probs, atol=1e-6)
    with pytest.raises(ValueError, match="method"):
        wbc_extract(q, mix, method="exact")
    with pytest.raises(ValueError, match="weight_cap"):
        wbc_extract(q, mix, weight_cap=0.1)


def test_wbc_lower_cap_binds():
    # exp(q - v) <= 1 always, so only the floor 1/cap can clip: the weak
    # action is lifted from exp(-30) up to exp(-1)
    q = np.zeros((2, 2))
    q[0, 0] = 30.0
    pol = wbc_extract(q, dataset=None, weight_cap=np.exp(1.0))
    w = np.array([1.0, np.exp(-1.0)])
    np.testing.assert_allclose(pol.probs[0], w / w.sum(), rtol=1e-10)
    np.testing.assert_allclose(pol.probs[1], [0.5, 0.5], atol=1e-12)


def test_train_uniq_end_to_end(mix_and_un):
    mix, un = mix_and_un
    cfg = UniqConfig(steps=200, ratio_steps=2000)
    out = train_uniq(un, mix, cfg, seed=0)
    assert out.policy.probs.shape == (mix.num_states, mix.num_actions)
    assert out.q.q.shape == out.policy.probs.shape
    assert out.ratio.tau.shape == out.policy.probs.shape
    steps = out.loss_trace[:, 0]
    assert steps[0] == 0 and steps[-1] == cfg.steps
    # avoid direction: F decreases from its start value
    assert out.loss_trace[-1, 1] < out.loss_trace[0, 1]


def test_train_uniq_is_deterministic(mix_and_un):
    mix, un = mix_and_un
    cfg = UniqConfig(steps=120, ratio_steps=1500)
    a = train_uniq(un, mix, cfg, seed=3)
    b = train_uniq(un, mix, cfg, seed=3)
    np.testing.assert_array_equal(a.policy.probs, b.policy.probs)
    np.testing.assert_array_equal(a.q.q, b.q.q)
    np.testing.assert_array_equal(a.loss_trace, b.loss_trace)


def test_minibatch_path_runs_and_is_seeded(mix_and_un):
    mix, un = mix_and_un
    cfg = UniqConfig(steps=60, ratio_steps=500, batch_size=32, checkpoint_every=20)
    a = train_uniq(un, mix, cfg, seed=5)
    b = train_uniq(un, mix, cfg, seed=5)
    c = train_uniq(un, mix, cfg, seed=6)
    np.testing.assert_array_equal(a.q.q, b.q.q)
    assert not np.array_equal(a.q.q, c.q.q)


def test_gamma_override_warns(mix_and_un):
    mix, un = mix_and_un
    tau = tau_for(mix, un)
    cfg = UniqConfig(steps=10, gamma=0.5)
    with pytest.warns(UserWarning, match="overrides dataset gamma"):
        train_q(mix, tau, cfg)


def test_json_roundtrips(mix_and_un):
    mix, un = mix_and_un
    out = train_uniq(un, mix, UniqConfig(steps=50, ratio_steps=500), seed=0)
    np.testing.assert_array_equal(policy_from_json(out.policy_json()).probs, out.policy.probs)
    np.testing.assert_array_equal(q_from_json(out.q_json()).q, out.q.q)


def test_loss_trace_csv_format():
    trace = np.array([[0.0, 1.5, 2.5], [100.0, -0.25, 0.125]])
    text = loss_trace_to_csv(trace)
    lines = text.strip().split("\n")
    assert lines[0] == "step,f_value,wbc_loss"
    assert lines[1] == "0,1.5,2.5"
    assert lines[2] == "100,-0.25,0.125"
