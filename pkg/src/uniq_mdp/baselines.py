"""Reference methods the avoidance trainer is compared against.

Behavioral cloning (clone and anti-clone variants), inverse soft-Q
imitation/avoidance (same loop as the main trainer with the occupancy ratio
pinned to 1), and discriminator-weighted BC on positive-unlabeled data.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from uniq_mdp.data import TrajectoryDataset, empirical_occupancy
from uniq_mdp.mdp import QTable, TabularPolicy
from uniq_mdp.ratio import RatioEstimate
from uniq_mdp.training import TrainedUniq, UniqConfig, _run_loop

__all__ = [
    "BaselineKind",
    "DwbcResult",
    "train_bc",
    "train_iq",
    "train_dwbc",
    "floor_project_rows",
]


class BaselineKind(enum.Enum):
    BC_MIX = "bc-mix"
    BC_UN = "bc-un"
    IQ_MIX = "iq-mix"
    IQ_UN = "iq-un"
    DWBC = "dwbc"


def floor_project_rows(probs: np.ndarray, floor: float) -> np.ndarray:
    """Project simplex rows onto {p : p_a >= floor, sum p = 1}.

    Entries at or below the floor are pinned to exactly the floor and the
    remaining mass is rescaled over the rest; rescaling can push new entries
    under the floor, hence the loop (at most A passes).
    """
    if not (0.0 <= floor < 1.0):
        raise ValueError(f"floor must be in [0, 1), got {floor!r}")
    A = probs.shape[1]
    if floor * A > 1.0 + 1e-12:
        raise ValueError(f"floor {floor} infeasible for {A} actions")
    out = probs.copy()
    for s in range(out.shape[0]):
        row = out[s]
        fixed = np.zeros(A, dtype=bool)
        for _ in range(A):
            low = (row <= floor) & ~fixed
            if not low.any():
                break
            fixed |= low
            row[fixed] = floor
            free = ~fixed
            remaining = 1.0 - floor * fixed.sum()
            total = row[free].sum()
            if total <= 0.0:
                row[free] = remaining / max(free.sum(), 1)
            else:
                row[free] *= remaining / total
        out[s] = row
    return out


def train_bc(
    dataset: TrajectoryDataset,
    mode: str = "clone",
    method: str = "closed_form",
    lr: float = 0.5,
    steps: int = 2000,
    prob_floor: float = 0.01,
) -> TabularPolicy:
    """Behavioral cloning on (s, a) visit counts.

    mode='clone' maximizes data log-likelihood; the closed form is the
    per-state count frequencies (uniform where a state was never visited),
    and method='gradient' reaches the same optimum by logit ascent with the
    per-state gradient p_hat - pi. mode='avoid' descends the data
    log-likelihood instead and then projects every row onto the
    prob_floor-floored simplex, so the least likely actions sit at exactly
    the floor rather than at zero.
    """
    S, A = dataset.num_states, dataset.num_actions
    counts = empirical_occupancy(dataset, "uniform") * dataset.num_transitions
    visited = counts.sum(axis=1) > 0
    if mode == "clone":
        if method == "closed_form":
            probs = np.full((S, A), 1.0 / A)
            probs[visited] = counts[visited] / counts[visited].sum(axis=1, keepdims=True)
            return TabularPolicy(probs)
        if method != "gradient":
            raise ValueError(f"method must be 'closed_form' or 'gradient', got {method!r}")
        p_hat = np.zeros((S, A))
        p_hat[visited] = counts[visited] / counts[visited].sum(axis=1, keepdims=True)
        theta = np.zeros((S, A))
        for _ in range(steps):
            pi = np.exp(theta - theta.max(axis=1, keepdims=True))
            pi /= pi.sum(axis=1, keepdims=True)
            theta[visited] += lr * (p_hat[visited] - pi[visited])
        pi = np.exp(theta - theta.max(axis=1, keepdims=True))
        pi /= pi.sum(axis=1, keepdims=True)
        return TabularPolicy(pi)
    if mode != "avoid":
        raise ValueError(f"mode must be 'clone' or 'avoid', got {mode!r}")
    w = counts / counts.sum()
    theta = np.zeros((S, A))
    for _ in range(steps):
        pi = np.exp(theta - theta.max(axis=1, keepdims=True))
        pi /= pi.sum(axis=1, keepdims=True)
        theta -= lr * (w - pi * w.sum(axis=1, keepdims=True))
    pi = np.exp(theta - theta.max(axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    return TabularPolicy(floor_project_rows(pi, prob_floor))


def train_iq(
    dataset: TrajectoryDataset,
    config: UniqConfig = UniqConfig(),
    mode: str = "imitate",
    seed: int = 0,
) -> TrainedUniq:
    """Inverse soft-Q on a single dataset: the avoidance loop with tau
    pinned to 1 everywhere. mode='imitate' ascends the shared objective
    (matching the data), mode='avoid' descends it (fleeing the data); the
    interleaved weighted-BC policy extraction is unchanged.
    """
    if mode not in ("imitate", "avoid"):
        raise ValueError(f"mode must be 'imitate' or 'avoid', got {mode!r}")
    S, A = dataset.num_states, dataset.num_actions
    tau = np.ones((S, A))
    sign = -1.0 if mode == "imitate" else 1.0
    q, theta, trace = _run_loop(dataset, tau, config, sign, seed)
    pi = np.exp(theta - theta.max(axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    support = empirical_occupancy(dataset, config.occupancy_weighting) > 0
    estimate = RatioEstimate(tau=np.where(support, 1.0, 0.0), support=support)
    return TrainedUniq(q=QTable(q), policy=TabularPolicy(pi), ratio=estimate, loss_trace=trace)


@dataclass(frozen=True)
class DwbcResult:
    policy: TabularPolicy
    d_probs: np.ndarray  # discriminator output per (s, a)
    loss_trace: np.ndarray  # rows (step, loss)


def train_dwbc(
    dataset_un: TrajectoryDataset,
    dataset_mix: TrajectoryDataset,
    eta: float = 0.5,
    lr: float = 1.0,
    steps: int = 20_000,
    pu_clamp: bool = False,
    d_clip: float = 0.1,
    checkpoint_every: int = 100,
) -> DwbcResult:
    """Discriminator-weighted BC with a positive-unlabeled discriminator.

    The discriminator d(s, a) = sigmoid(l) descends

        eta * E_un[-log d] + E_mix[-log(1 - d)] - eta * E_un[-log(1 - d)],

    whose per-cell optimum is d* = eta * w_un / w_mix (the unlabeled excess
    over the eta-discounted positives); with pu_clamp=True the last two
    terms (the negative-risk estimate) contribute their unclamped gradient
    only while their sum is positive. Outputs are clamped to
    [d_clip, 1 - d_clip] (0.1 matching the reference implementation), which
    caps the cloning weights below. The policy is count-weighted cloning of
    the mixture with weights 1/d - 1, so transitions the discriminator
    attributes to the undesired set are downweighted. States without data
    stay uniform.
    """
    if not (0.0 < eta <= 1.0):
        raise ValueError(f"eta must be in (0, 1], got {eta!r}")
    if (dataset_un.num_states, dataset_un.num_actions) != (dataset_mix.num_states, dataset_mix.num_actions):
        raise ValueError("datasets live in different state-action spaces")
    S, A = dataset_mix.num_states, dataset_mix.num_actions
    w_un = empirical_occupancy(dataset_un, "uniform")
    w_mix = empirical_occupancy(dataset_mix, "uniform")
    logits = np.zeros((S, A))
    rows = []
    for step in range(steps + 1):
        d = 1.0 / (1.0 + np.exp(-logits))
        dc = np.clip(d, d_clip, 1.0 - d_clip)
        pos = float(np.sum(eta * w_un * (-np.log(dc))))
        neg = float(np.sum((w_mix - eta * w_un) * (-np.log1p(-dc))))
        loss = pos + max(neg, 0.0) if pu_clamp else pos + neg
        if step % checkpoint_every == 0 or step == steps:
            rows.append((step, loss))
        if step == steps:
            break
        grad = eta * w_un * (d - 1.0)
        if not pu_clamp or neg > 0.0:
            grad = grad + (w_mix - eta * w_un) * d
        logits -= lr * grad
    d = np.clip(1.0 / (1.0 + np.exp(-logits)), d_clip, 1.0 - d_clip)
    counts = empirical_occupancy(dataset_mix, "uniform") * dataset_mix.num_transitions
    weights = counts * (1.0 / d - 1.0)
    rowsum = weights.sum(axis=1, keepdims=True)
    probs = np.full((S, A), 1.0 / A)
    ok = rowsum[:, 0] > 0
    probs[ok] = weights[ok] / rowsum[ok]
    return DwbcResult(
        policy=TabularPolicy(probs),
        d_probs=d,
        loss_trace=np.asarray(rows, dtype=np.float64),
    )
