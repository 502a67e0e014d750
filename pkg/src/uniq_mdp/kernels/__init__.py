"""Hot training loops with two interchangeable backends.

The compiled Cython backend (_ck) is used when it built successfully; the
pure-numpy backend (_pk) is the fallback. Selection happens once at import
and can be forced with UNIQ_MDP_KERNELS=auto|c|py. Both backends implement
the same two entry points with identical semantics:

    ratio_ascent(...)   gradient ascent on the two-head discriminator
    train_loop(...)     interleaved soft-Q descent / weighted-BC policy ascent

benchmarks/bench_kernels.py compares the two.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "backend_name",
    "available_backends",
    "get_backend",
    "ratio_ascent",
    "train_loop",
    "TrainingDiverged",
    "DIVERGENCE_LIMIT",
]

# Training aborts when the objective magnitude passes this.
DIVERGENCE_LIMIT = 1e9


class TrainingDiverged(RuntimeError):
    """Raised when a training objective blows up instead of converging."""


from uniq_mdp.kernels import _pk  # noqa: E402

_BACKENDS = {"py": _pk}
try:
    from uniq_mdp.kernels import _ck as _ck_mod

    _BACKENDS["c"] = _ck_mod
except ImportError:
    _ck_mod = None

_choice = os.environ.get("UNIQ_MDP_KERNELS", "auto").strip().lower() or "auto"
if _choice not in ("auto", "c", "py"):
    raise ImportError(
        f"UNIQ_MDP_KERNELS must be one of auto|c|py, got {_choice!r}"
    )
if _choice == "auto":
    backend_name = "c" if "c" in _BACKENDS else "py"
elif _choice == "c" and "c" not in _BACKENDS:
    raise ImportError(
        "UNIQ_MDP_KERNELS=c requested but the compiled kernel module is not "
        "available; rebuild the package or use UNIQ_MDP_KERNELS=py"
    )
else:
    backend_name = _choice

_impl = _BACKENDS[backend_name]


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def get_backend(name: str):
    """Explicit backend handle, used by tests and the benchmark."""
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {sorted(_BACKENDS)})")
    return _BACKENDS[name]


def _vec(x, n: int, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=np.float64)).reshape(-1)
    if arr.shape[0] != n:
        raise ValueError(f"{name} must have {n} entries, got {arr.shape[0]}")
    return arr


def ratio_ascent(
    logits1,
    logits2,
    w_un,
    w_mix,
    steps: int,
    lr: float,
    clip_eps: float = 1e-6,
    checkpoint_every: int = 100,
    backend=None,
):
    """Full-batch gradient ascent on

        g(mu1, mu2) = E_mix[log mu2 + log(1 - mu1)] + E_un[log mu1 + log(1 - mu2)]

    over per-(s, a) logits, mu_i = sigmoid(logits_i). Expectations are the
    supplied occupancy weight tables. Returns updated logits plus a trace of
    (step, objective) checkpoints; the objective is evaluated with mu clipped
    to [clip_eps, 1 - clip_eps] so empty cells stay finite.
    """
    impl = _impl if backend is None else backend
    l1 = np.array(logits1, dtype=np.float64, copy=True).reshape(-1)
    n = l1.shape[0]
    l2 = _vec(logits2, n, "logits2").copy()
    wu = _vec(w_un, n, "w_un")
    wm = _vec(w_mix, n, "w_mix")
    if steps < 0 or lr <= 0:
        raise ValueError("steps must be >= 0 and lr > 0")
    if not (0.0 < clip_eps < 0.5):
        raise ValueError(f"clip_eps must be in (0, 0.5), got {clip_eps!r}")
    every = max(1, int(checkpoint_every))
    out1, out2, t_step, t_val = impl.ratio_ascent(l1, l2, wu, wm, int(steps), float(lr), float(clip_eps), every)
    return out1, out2, np.column_stack([t_step.astype(np.float64), t_val])


def train_loop(
    q,
    theta,
    sa_idx,
    ns_idx,
    w_t,
    tau_sa,
    w0,
    wbc_w,
    action_mask,
    gamma: float,
    steps: int,
    lr_q: float,
    lr_policy: float,
    direction: float,
    weight_cap: float,
    checkpoint_every: int = 100,
    backend=None,
):
    """Interleaved training loop over aggregated transitions.

    Transitions are COO-aggregated: entry k carries flat state-action index
    sa_idx[k], next-state ns_idx[k] and total weight w_t[k]. Each step takes
    one full-batch gradient step on the avoidance objective

        F(Q) = sum_k w_k [tau_k * r_k + r_k - r_k^2] - (1 - gamma) * sum_s w0_s V(s),
        r_k = Q[sa_k] - gamma * V[ns_k],

    moving Q by -lr_q * direction * grad (direction +1 descends, -1 ascends,
    which turns the same loop into the imitation trainer), and one ascent
    step on the advantage-weighted behavioral cloning objective

        sum_{s,a} wbc_w[s,a] * clip(exp(Q - V), 1/cap, cap) * log pi_theta(a|s)

    using the pre-update Q. action_mask restricts the log-sum-exp behind V
    (and the softmax behind the Q gradient) to observed actions; rows with no
    observed action fall back to the full action set. Raises TrainingDiverged
    if |F| exceeds DIVERGENCE_LIMIT. Returns (q, theta, trace) with trace rows
    (step, f_value, wbc_loss); wbc_loss is the negated ascent objective.
    """
    impl = _impl if backend is None else backend
    q = np.array(q, dtype=np.float64, copy=True)
    if q.ndim != 2:
        raise ValueError("q must be (S, A)")
    S, A = q.shape
    theta = np.array(theta, dtype=np.float64, copy=True)
    if theta.shape != (S, A):
        raise ValueError(f"theta shape {theta.shape} does not match q {q.shape}")
    sa = np.ascontiguousarray(np.asarray(sa_idx, dtype=np.int64)).reshape(-1)
    ns = np.ascontiguousarray(np.asarray(ns_idx, dtype=np.int64)).reshape(-1)
    if sa.shape != ns.shape:
        raise ValueError("sa_idx and ns_idx must have the same length")
    if sa.size and (sa.min() < 0 or sa.max() >= S * A):
        raise ValueError("sa_idx out of range")
    if ns.size and (ns.min() < 0 or ns.max() >= S):
        raise ValueError("ns_idx out of range")
    wt = _vec(w_t, sa.shape[0], "w_t")
    tau = _vec(tau_sa, S * A, "tau_sa")
    w0v = _vec(w0, S, "w0")
    wbc = _vec(wbc_w, S * A, "wbc_w")
    if action_mask is None:
        mask = np.ones((S, A), dtype=np.uint8)
    else:
        mask = np.ascontiguousarray(np.asarray(action_mask).astype(np.uint8))
        if mask.shape != (S, A):
            raise ValueError(f"action_mask shape {mask.shape} does not match ({S}, {A})")
        # a state with no observed action uses the full action set
        empty = mask.sum(axis=1) == 0
        if np.any(empty):
            mask = mask.copy()
            mask[empty] = 1
    if weight_cap < 1.0:
        raise ValueError(f"weight_cap must be >= 1, got {weight_cap!r}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    every = max(1, int(checkpoint_every))
    q_out, th_out, t_step, t_f, t_wbc, status, bad_step = impl.train_loop(
        np.ascontiguousarray(q),
        np.ascontiguousarray(theta),
        sa,
        ns,
        wt,
        tau,
        w0v,
        wbc,
        mask,
        float(gamma),
        int(steps),
        float(lr_q),
        float(lr_policy),
        float(direction),
        1.0 / float(weight_cap),
        float(weight_cap),
        every,
    )
    if status != 0:
        raise TrainingDiverged(
            f"training objective left [-{DIVERGENCE_LIMIT:g}, {DIVERGENCE_LIMIT:g}] "
            f"at step {bad_step}; lower the learning rate or the step count"
        )
    trace = np.column_stack([t_step.astype(np.float64), t_f, t_wbc])
    return q_out, th_out, trace
