"""Avoidance training: soft-Q descent against a reweighted mixture.

The trained objective, over mixture transitions (s, a, s') with normalized
weights w and implied reward r = Q(s, a) - gamma * V(s'),

    F(Q) = sum w * [tau * r + psi(r)] - (1 - gamma) * sum_s w0(s) * V(s),
    psi(t) = t - t^2,

pushes the implied reward DOWN on state-actions where the undesired-to-mix
ratio tau is large while the (1 - gamma) * V term keeps the soft values from
collapsing; psi is the chi-square conjugate penalty that keeps the implied
reward bounded. Descending F avoids the undesired occupancy; ascending the
very same function is the imitation objective used by the IQ baselines, so
both trainers share one loop (direction = +1 descends, -1 ascends).

The executed policy is not softmax(Q) read off directly; it is trained by
interleaved weighted behavioral cloning: logits theta ascend

    sum_{s,a} n_hat(s,a) * clip(exp(Q(s,a) - V(s)), 1/cap, cap) * log pi_theta(a|s)

with n_hat the empirical (s, a) frequency of the mixture, so the policy only
sharpens on state-actions the data supports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from uniq_mdp import kernels
from uniq_mdp.data import (
    TrajectoryDataset,
    empirical_occupancy,
    initial_state_weights,
    observed_action_mask,
    transition_triples,
)
from uniq_mdp.kernels import TrainingDiverged
from uniq_mdp.mdp import (
    QTable,
    TabularPolicy,
    soft_value_of_q,
    softmax_policy,
    table_from_json,
    table_to_json,
)
from uniq_mdp.ratio import RatioEstimate, fit_ratio, tau_of, warn_on_coverage_gap

__all__ = [
    "UniqConfig",
    "TrainedUniq",
    "TrainingDiverged",
    "psi_chi2",
    "f_objective",
    "f_gradient",
    "train_q",
    "wbc_extract",
    "train_uniq",
    "loss_trace_to_csv",
    "policy_from_json",
    "q_from_json",
]


def psi_chi2(t: np.ndarray) -> np.ndarray:
    """Per-sample reward penalty added inside the mixture expectation."""
    return t - t * t


@dataclass(frozen=True)
class UniqConfig:
    """Knobs for the ratio fit and the interleaved Q/policy loop.

    Everything is full-batch by default; batch_size switches the Q loop to
    minibatch SGD (slower here, kept for parity with sampled settings).
    sampled_actions restricts soft values to actions observed in the data
    instead of the full action set.
    """

    steps: int = 1200
    lr_q: float = 0.02
    lr_policy: float = 8.0
    gamma: float | None = None  # None: take it from the mixture dataset
    ratio_steps: int = 20_000
    ratio_lr: float = 0.3
    wbc_weight_cap: float = math.exp(10.0)
    occupancy_weighting: str = "discounted"
    sampled_actions: bool = True
    batch_size: int | None = None
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.steps < 0 or self.ratio_steps < 0:
            raise ValueError("step counts must be >= 0")
        if self.lr_q <= 0 or self.lr_policy < 0 or self.ratio_lr <= 0:
            raise ValueError("learning rates must be positive (lr_policy may be 0)")
        if self.gamma is not None and not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma!r}")
        if self.wbc_weight_cap < 1.0:
            raise ValueError("wbc_weight_cap must be >= 1")
        if self.occupancy_weighting not in ("discounted", "uniform"):
            raise ValueError(f"unknown occupancy_weighting {self.occupancy_weighting!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1 when set")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")


@dataclass(frozen=True)
class TrainedUniq:
    q: QTable
    policy: TabularPolicy
    ratio: RatioEstimate
    loss_trace: np.ndarray  # rows (step, f_value, wbc_loss)

    def q_json(self) -> str:
        return table_to_json("q", {"q": self.q.q})

    def policy_json(self) -> str:
        return table_to_json("policy", {"probs": self.policy.probs})


def policy_from_json(text: str) -> TabularPolicy:
    return TabularPolicy(table_from_json(text, "policy", ("probs",))["probs"])


def q_from_json(text: str) -> QTable:
    return QTable(table_from_json(text, "q", ("q",))["q"])


def _tau_array(tau, shape: tuple[int, int]) -> np.ndarray:
    arr = tau.tau if isinstance(tau, RatioEstimate) else np.asarray(tau, dtype=np.float64)
    if arr.shape != shape:
        raise ValueError(f"tau shape {arr.shape} does not match tables {shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ValueError("tau must be finite and non-negative")
    return arr


def _resolve_gamma(config: UniqConfig, dataset: TrajectoryDataset) -> float:
    gamma = dataset.gamma if config.gamma is None else config.gamma
    if config.gamma is not None and abs(config.gamma - dataset.gamma) > 1e-12:
        warnings.warn(
            f"config gamma {config.gamma} overrides dataset gamma {dataset.gamma}",
            stacklevel=3,
        )
    return gamma


def _mask_for(dataset: TrajectoryDataset, sampled_actions: bool) -> np.ndarray | None:
    return observed_action_mask(dataset) if sampled_actions else None


def _masked_soft_value(q: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return soft_value_of_q(q)
    eff = np.where(mask.any(axis=1, keepdims=True), mask, True)
    qm = np.where(eff, q, -np.inf)
    m = qm.max(axis=1)
    return m + np.log(np.exp(qm - m[:, None]).sum(axis=1))


def f_objective(
    q,
    tau,
    dataset_mix: TrajectoryDataset,
    mdp=None,
    psi=psi_chi2,
    weighting: str | None = None,
    sampled_actions: bool = False,
) -> float:
    """Value of F at a Q-table.

    Sample form (mdp=None) uses the per-transition implied reward
    r = Q(s,a) - gamma * V(s'); passing the MDP replaces it with the exact
    next-state expectation r = Q - gamma * E_{s'|s,a}[V(s')], which is what
    the brute-force oracles difference against.
    """
    qa = q.q if isinstance(q, QTable) else np.asarray(q, dtype=np.float64)
    S, A = dataset_mix.num_states, dataset_mix.num_actions
    tau_arr = _tau_array(tau, (S, A))
    gamma = dataset_mix.gamma
    weighting = weighting or "discounted"
    mask = _mask_for(dataset_mix, sampled_actions)
    v = _masked_soft_value(qa, mask)
    w0 = initial_state_weights(dataset_mix)
    head = (1.0 - gamma) * float(w0 @ v)
    if mdp is None:
        sa, ns, w = transition_triples(dataset_mix, weighting)
        r = qa.reshape(-1)[sa] - gamma * v[ns]
        data = float(np.dot(w, tau_arr.reshape(-1)[sa] * r + psi(r)))
    else:
        r_table = qa - gamma * (mdp.transition @ v)
        w_sa = empirical_occupancy(dataset_mix, weighting)
        data = float(np.sum(w_sa * (tau_arr * r_table + psi(r_table))))
    return data - head


def f_gradient(
    q,
    tau,
    dataset_mix: TrajectoryDataset,
    weighting: str | None = None,
    sampled_actions: bool = False,
) -> np.ndarray:
    """Analytic gradient of the sample-form F with respect to Q."""
    qa = q.q if isinstance(q, QTable) else np.asarray(q, dtype=np.float64)
    S, A = dataset_mix.num_states, dataset_mix.num_actions
    tau_arr = _tau_array(tau, (S, A))
    gamma = dataset_mix.gamma
    weighting = weighting or "discounted"
    mask = _mask_for(dataset_mix, sampled_actions)
    v = _masked_soft_value(qa, mask)
    sa, ns, w = transition_triples(dataset_mix, weighting)
    r = qa.reshape(-1)[sa] - gamma * v[ns]
    coef = w * (tau_arr.reshape(-1)[sa] + 1.0 - 2.0 * r)
    grad = np.bincount(sa, weights=coef, minlength=S * A).reshape(S, A)
    ns_mass = np.bincount(ns, weights=coef, minlength=S)
    w0 = initial_state_weights(dataset_mix)
    if mask is None:
        pi_q = np.exp(qa - v[:, None])
    else:
        eff = np.where(mask.any(axis=1, keepdims=True), mask, True)
        pi_q = np.where(eff, np.exp(np.where(eff, qa, -np.inf) - v[:, None]), 0.0)
    grad -= pi_q * (gamma * ns_mass + (1.0 - gamma) * w0)[:, None]
    return grad


def _run_loop(
    dataset_mix: TrajectoryDataset,
    tau_arr: np.ndarray,
    config: UniqConfig,
    direction: float,
    seed: int,
):
    S, A = dataset_mix.num_states, dataset_mix.num_actions
    gamma = _resolve_gamma(config, dataset_mix)
    w0 = initial_state_weights(dataset_mix)
    wbc_w = empirical_occupancy(dataset_mix, "uniform").reshape(-1)
    mask = _mask_for(dataset_mix, config.sampled_actions)
    q0 = np.zeros((S, A))
    # start the policy head at the behavior-cloning solution so the
    # interleaved updates track the advantage weights from step one
    counts = wbc_w.reshape(S, A)
    tot = counts.sum(axis=1, keepdims=True)
    p0 = np.where(tot > 0, counts / np.where(tot > 0, tot, 1.0), 1.0 / A)
    th0 = np.log(np.maximum(p0, 1e-8))
    if config.batch_size is None:
        sa, ns, w = transition_triples(dataset_mix, config.occupancy_weighting)
        return kernels.train_loop(
            q0, th0, sa, ns, w, tau_arr.reshape(-1), w0, wbc_w, mask, gamma,
            config.steps, config.lr_q, config.lr_policy, direction,
            config.wbc_weight_cap, config.checkpoint_every,
        )
    return _minibatch_loop(dataset_mix, tau_arr, config, direction, seed, q0, th0, w0, wbc_w, mask, gamma)


def _minibatch_loop(dataset_mix, tau_arr, config, direction, seed, q, theta, w0, wbc_w, mask, gamma):
    """Minibatch variant of the kernel loop, kept in python: it exists for
    parity experiments, not speed. Samples transitions proportional to their
    full-batch weights each step."""
    from uniq_mdp.kernels import _pk

    rng = np.random.default_rng(seed)
    S, A = tau_arr.shape
    sa, ns, w = transition_triples(dataset_mix, config.occupancy_weighting)
    p = w / w.sum()
    trace_rows = []
    wbc2 = wbc_w.reshape(S, A)
    maskb = None if mask is None else np.where(mask.any(1, keepdims=True), mask, True).astype(bool)
    for step in range(config.steps + 1):
        v = _masked_soft_value(q, mask)
        if step % config.checkpoint_every == 0 or step == config.steps:
            r_full = q.reshape(-1)[sa] - gamma * v[ns]
            f = float(np.dot(w, tau_arr.reshape(-1)[sa] * r_full + psi_chi2(r_full))) - (1.0 - gamma) * float(w0 @ v)
            if not np.isfinite(f) or abs(f) > kernels.DIVERGENCE_LIMIT:
                raise TrainingDiverged(f"objective magnitude exploded at step {step}")
            adv_w = wbc2 * np.clip(np.exp(np.minimum(q - v[:, None], 50.0)), 1.0 / config.wbc_weight_cap, config.wbc_weight_cap)
            th_max = theta.max(axis=1, keepdims=True)
            log_pi = theta - th_max - np.log(np.exp(theta - th_max).sum(axis=1, keepdims=True))
            trace_rows.append((step, f, -float(np.sum(adv_w * log_pi))))
        if step == config.steps:
            break
        pick = rng.choice(len(sa), size=min(config.batch_size, len(sa)), p=p)
        r = q.reshape(-1)[sa[pick]] - gamma * v[ns[pick]]
        coef = (tau_arr.reshape(-1)[sa[pick]] + 1.0 - 2.0 * r) / len(pick)
        grad = np.bincount(sa[pick], weights=coef, minlength=S * A).reshape(S, A)
        ns_mass = np.bincount(ns[pick], weights=coef, minlength=S)
        pi_q = np.exp(q - v[:, None]) if maskb is None else np.where(maskb, np.exp(np.where(maskb, q, -np.inf) - v[:, None]), 0.0)
        grad -= pi_q * (gamma * ns_mass + (1.0 - gamma) * w0)[:, None]
        q = q - (config.lr_q * direction) * grad
        adv_w = wbc2 * np.clip(np.exp(np.minimum(q - v[:, None], 50.0)), 1.0 / config.wbc_weight_cap, config.wbc_weight_cap)
        pi_th = np.exp(theta - theta.max(axis=1, keepdims=True))
        pi_th /= pi_th.sum(axis=1, keepdims=True)
        theta = theta + config.lr_policy * (adv_w - pi_th * adv_w.sum(axis=1, keepdims=True))
    trace = np.asarray(trace_rows, dtype=np.float64)
    return q, theta, trace


def train_q(
    dataset_mix: TrajectoryDataset,
    tau,
    config: UniqConfig,
    direction: str = "avoid",
    seed: int = 0,
) -> tuple[QTable, np.ndarray]:
    """Q-only training (no policy extraction): descend F for 'avoid',
    ascend it for 'imitate'. Returns the table and the loss trace."""
    if direction not in ("avoid", "imitate"):
        raise ValueError(f"direction must be 'avoid' or 'imitate', got {direction!r}")
    S, A = dataset_mix.num_states, dataset_mix.num_actions
    tau_arr = _tau_array(tau, (S, A))
    sign = 1.0 if direction == "avoid" else -1.0
    cfg = replace(config, lr_policy=0.0)
    q, _theta, trace = _run_loop(dataset_mix, tau_arr, cfg, sign, seed)
    return QTable(q), trace


def wbc_extract(
    q,
    dataset: TrajectoryDataset | None = None,
    weight_cap: float = math.exp(10.0),
    method: str = "closed_form",
    lr: float = 0.5,
    steps: int = 2000,
) -> TabularPolicy:
    """Advantage-weighted behavioral cloning against a fixed Q-table.

    With dataset=None the (s, a) weights are uniform (exact-weights mode)
    and the closed form collapses to softmax_policy(q) wherever the cap is
    slack, because exp(Q - V) already normalizes to the softmax. With data,
    rows never visited fall back to softmax_policy(q) there.
    """
    qa = q.q if isinstance(q, QTable) else np.asarray(q, dtype=np.float64)
    if weight_cap < 1.0:
        raise ValueError("weight_cap must be >= 1")
    v = soft_value_of_q(qa)
    adv_w = np.clip(np.exp(qa - v[:, None]), 1.0 / weight_cap, weight_cap)
    counts = (
        np.ones_like(qa)
        if dataset is None
        else empirical_occupancy(dataset, "uniform") * dataset.num_transitions
    )
    weights = counts * adv_w
    fallback = softmax_policy(qa).probs
    if method == "closed_form":
        rowsum = weights.sum(axis=1, keepdims=True)
        have_data = counts.sum(axis=1, keepdims=True) > 0
        probs = np.where(
            have_data & (rowsum > 0), weights / np.where(rowsum > 0, rowsum, 1.0), fallback
        )
        probs /= probs.sum(axis=1, keepdims=True)
        return TabularPolicy(probs)
    if method != "gradient":
        raise ValueError(f"method must be 'closed_form' or 'gradient', got {method!r}")
    theta = np.zeros_like(qa)
    for _ in range(steps):
        pi = np.exp(theta - theta.max(axis=1, keepdims=True))
        pi /= pi.sum(axis=1, keepdims=True)
        theta += lr * (weights - pi * weights.sum(axis=1, keepdims=True))
    probs = np.exp(theta - theta.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    empty = counts.sum(axis=1) == 0
    if np.any(empty):
        probs[empty] = fallback[empty]
    return TabularPolicy(probs)


def train_uniq(
    dataset_un: TrajectoryDataset,
    dataset_mix: TrajectoryDataset,
    config: UniqConfig = UniqConfig(),
    seed: int = 0,
) -> TrainedUniq:
    """Full pipeline: fit the occupancy ratio, then run the interleaved
    descent on F and ascent on the weighted-cloning objective.

    Deterministic for a fixed (datasets, config, seed): the default
    full-batch path never samples, and the minibatch path derives all
    randomness from the seed.
    """
    if (dataset_un.num_states, dataset_un.num_actions) != (dataset_mix.num_states, dataset_mix.num_actions):
        raise ValueError("datasets live in different state-action spaces")
    w_un = empirical_occupancy(dataset_un, config.occupancy_weighting)
    w_mix = empirical_occupancy(dataset_mix, config.occupancy_weighting)
    support = w_mix > 0.0
    warn_on_coverage_gap(w_un, support)
    table = fit_ratio(
        dataset_un,
        dataset_mix,
        steps=config.ratio_steps,
        lr=config.ratio_lr,
        weighting=config.occupancy_weighting,
    )
    estimate = tau_of(table, support)
    q, theta, trace = _run_loop(dataset_mix, estimate.tau, config, 1.0, seed)
    pi = np.exp(theta - theta.max(axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    return TrainedUniq(q=QTable(q), policy=TabularPolicy(pi), ratio=estimate, loss_trace=trace)


def loss_trace_to_csv(trace: np.ndarray) -> str:
    lines = ["step,f_value,wbc_loss"]
    for row in np.atleast_2d(trace):
        lines.append(f"{int(row[0])},{float(row[1])!r},{float(row[2])!r}")
    return "\n".join(lines) + "\n"
