"""Backend parity and the wrapper validation around the hot loops."""

import os
import subprocess
import sys

import numpy as np
import pytest

from uniq_mdp import kernels


def random_loop_args(rng, S=5, A=3, n_tr=40):
    q = rng.normal(scale=0.3, size=(S, A))
    theta = rng.normal(scale=0.3, size=(S, A))
    sa = rng.integers(0, S * A, size=n_tr)
    ns = rng.integers(0, S, size=n_tr)
    w = rng.random(n_tr)
    w /= w.sum()
    tau = rng.random(S * A) * 2.0
    w0 = rng.dirichlet(np.ones(S))
    wbc = rng.random(S * A)
    mask = rng.random((S, A)) < 0.7
    return dict(
        q=q, theta=theta, sa_idx=sa, ns_idx=ns, w_t=w, tau_sa=tau, w0=w0,
        wbc_w=wbc, action_mask=mask, gamma=0.9, steps=150, lr_q=0.05,
        lr_policy=2.0, direction=1.0, weight_cap=np.exp(10.0),
        checkpoint_every=50,
    )


def test_backend_listing_and_selection():
    backs = kernels.available_backends()
    assert "py" in backs
    assert kernels.backend_name in backs
    assert kernels.get_backend("py") is not None
    with pytest.raises(ValueError, match="not available"):
        kernels.get_backend("fortran")


def test_compiled_backend_is_built():
    # the wheel ships with the compiled module; fail loudly if it is missing
    assert "c" in kernels.available_backends()


@pytest.mark.parametrize("direction", [1.0, -1.0])
def test_train_loop_backend_parity(direction):
    rng = np.random.default_rng(17)
    args = random_loop_args(rng)
    args["direction"] = direction
    outs = {}
    for name in kernels.available_backends():
        outs[name] = kernels.train_loop(backend=kernels.get_backend(name), **args)
    if len(outs) < 2:
        pytest.skip("single backend build")
    q_c, th_c, tr_c = outs["c"]
    q_p, th_p, tr_p = outs["py"]
    np.testing.assert_allclose(q_c, q_p, atol=1e-12)
    np.testing.assert_allclose(th_c, th_p, atol=1e-12)
    np.testing.assert_allclose(tr_c, tr_p, atol=1e-12)


def test_ratio_ascent_backend_parity():
    rng = np.random.default_rng(23)
    shape = (6, 2)
    w_un = rng.random(shape)
    w_mix = rng.random(shape)
    outs = {}
    for name in kernels.available_backends():
        outs[name] = kernels.ratio_ascent(
            np.zeros(shape), np.zeros(shape), w_un, w_mix,
            steps=400, lr=0.2, backend=kernels.get_backend(name),
        )
    if len(outs) < 2:
        pytest.skip("single backend build")
    for a, b in zip(outs["c"], outs["py"]):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_train_loop_trace_checkpoints():
    rng = np.random.default_rng(3)
    args = random_loop_args(rng)
    args["steps"] = 120
    args["checkpoint_every"] = 50
    _, _, trace = kernels.train_loop(**args)
    assert list(trace[:, 0]) == [0, 50, 100, 120]


def test_train_loop_zero_steps_is_identity():
    rng = np.random.default_rng(5)
    args = random_loop_args(rng)
    args["steps"] = 0
    q_out, th_out, trace = kernels.train_loop(**args)
    np.testing.assert_array_equal(q_out, args["q"])
    np.testing.assert_array_equal(th_out, args["theta"])
    assert trace.shape[0] == 1


def test_train_loop_divergence_parity():
    rng = np.random.default_rng(11)
    args = random_loop_args(rng)
    args["steps"] = 100000
    args["lr_q"] = 50.0
    for name in kernels.available_backends():
        with pytest.raises(kernels.TrainingDiverged, match="lower the learning rate"):
            kernels.train_loop(backend=kernels.get_backend(name), **args)


def test_train_loop_validation_errors():
    rng = np.random.default_rng(1)
    args = random_loop_args(rng)
    bad = dict(args)
    bad["weight_cap"] = 0.5
    with pytest.raises(ValueError, match="weight_cap"):
        kernels.train_loop(**bad)
    bad = dict(args)
    bad["theta"] = np.zeros((2, 2))
    with pytest.raises(ValueError, match="theta shape"):
        kernels.train_loop(**bad)
    bad = dict(args)
    bad["sa_idx"] = np.array([999])
    bad["ns_idx"] = np.array([0])
    bad["w_t"] = np.array([1.0])
    with pytest.raises(ValueError, match="sa_idx out of range"):
        kernels.train_loop(**bad)
    bad = dict(args)
    bad["action_mask"] = np.ones((1, 1))
    with pytest.raises(ValueError, match="action_mask shape"):
        kernels.train_loop(**bad)
    bad = dict(args)
    bad["steps"] = -1
    with pytest.raises(ValueError, match="steps"):
        kernels.train_loop(**bad)


def test_empty_mask_rows_fall_back_to_full_action_set():
    rng = np.random.default_rng(9)
    args = random_loop_args(rng)
    mask = np.asarray(args["action_mask"], dtype=bool).copy()
    mask[0] = False
    args_a = dict(args)
    args_a["action_mask"] = mask
    full = mask.copy()
    full[0] = True
    args_b = dict(args)
    args_b["action_mask"] = full
    out_a = kernels.train_loop(**args_a)
    out_b = kernels.train_loop(**args_b)
    np.testing.assert_array_equal(out_a[0], out_b[0])


def test_ratio_ascent_validation_errors():
    z = np.zeros((2, 2))
    with pytest.raises(ValueError, match="logits2"):
        kernels.ratio_ascent(z, np.zeros((3, 3)), z, z, steps=10, lr=0.1)
    with pytest.raises(ValueError, match="lr"):
        kernels.ratio_ascent(z, z, z, z, steps=10, lr=0.0)
    with pytest.raises(ValueError, match="clip_eps"):
        kernels.ratio_ascent(z, z, z, z, steps=10, lr=0.1, clip_eps=0.9)


def _run_with_env(value):
    env = dict(os.environ)
    if value is None:
        env.pop("UNIQ_MDP_KERNELS", None)
    else:
        env["UNIQ_MDP_KERNELS"] = value
    code = "from uniq_mdp import kernels; print(kernels.backend_name)"
    return subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )


def test_env_var_selects_backend():
    out = _run_with_env("py")
    assert out.returncode == 0 and out.stdout.strip() == "py"
    out = _run_with_env(None)
    assert out.returncode == 0 and out.stdout.strip() in ("c", "py")


def test_env_var_rejects_unknown_backend():
    out = _run_with_env("rust")
    assert out.returncode != 0
    assert "UNIQ_MDP_KERNELS" in out.stderr
