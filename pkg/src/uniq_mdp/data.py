"""Trajectories, datasets, rollout generation and empirical occupancies.

A dataset file is a text file: one JSON header line with metadata, then one
line per transition, space-separated `s a r c s_next done traj_id t`. Floats
are written with repr (shortest exact form) so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from uniq_mdp.mdp import FiniteMdp, TabularPolicy

__all__ = [
    "Role",
    "Transition",
    "Trajectory",
    "TrajectoryDataset",
    "rollout",
    "label_undesired",
    "build_mix",
    "build_undesired",
    "dataset_from_trajectories",
    "empirical_occupancy",
    "initial_state_weights",
    "observed_action_mask",
    "transition_triples",
    "save_dataset",
    "load_dataset",
    "standardize",
    "normalize_states",
]


class Role(enum.Enum):
    UNDESIRED = "undesired"
    MIX = "mix"


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    cost: float
    next_state: int
    done: bool


class Trajectory:
    """One episode, stored columnar. Rewards/costs are the table values of
    the generating MDP (expected immediate values, not sampled)."""

    __slots__ = ("states", "actions", "rewards", "costs", "next_states", "dones",
                 "total_return", "total_cost")

    def __init__(self, states, actions, rewards, costs, next_states, dones):
        self.states = np.asarray(states, dtype=np.int64)
        self.actions = np.asarray(actions, dtype=np.int64)
        self.rewards = np.asarray(rewards, dtype=np.float64)
        self.costs = np.asarray(costs, dtype=np.float64)
        self.next_states = np.asarray(next_states, dtype=np.int64)
        self.dones = np.asarray(dones, dtype=bool)
        n = len(self.states)
        if n == 0:
            raise ValueError("empty trajectory")
        for name in ("actions", "rewards", "costs", "next_states", "dones"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"trajectory column {name} has wrong length")
        if not np.array_equal(self.next_states[:-1], self.states[1:]):
            raise ValueError("trajectory breaks the s_next == next s chain")
        if np.any(self.dones[:-1]):
            raise ValueError("done may only be set on the final transition")
        self.total_return = float(self.rewards.sum())
        self.total_cost = float(self.costs.sum())

    def __len__(self) -> int:
        return len(self.states)

    @property
    def transitions(self) -> list[Transition]:
        return [
            Transition(int(s), int(a), float(r), float(c), int(ns), bool(d))
            for s, a, r, c, ns, d in zip(
                self.states, self.actions, self.rewards, self.costs,
                self.next_states, self.dones,
            )
        ]


@dataclass(frozen=True)
class TrajectoryDataset:
    """A bag of trajectories plus the metadata needed to interpret it.

    source_counts records how many trajectories came from the constrained
    and the unconstrained demonstrator, in that order. normalization is None
    for tabular id states (identity; see normalize_states).
    """

    trajectories: tuple[Trajectory, ...]
    role: Role
    num_states: int
    num_actions: int
    gamma: float
    source_counts: tuple[int, int]
    cost_threshold: float | None = None
    normalization: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("dataset must contain at least one trajectory")
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError(f"gamma must be in [0, 1), got {self.gamma!r}")
        for tr in self.trajectories:
            if tr.states.max() >= self.num_states or tr.actions.max() >= self.num_actions:
                raise ValueError("trajectory references states/actions outside the declared space")
        if self.role is Role.UNDESIRED:
            if self.cost_threshold is None:
                raise ValueError("an undesired dataset needs its cost_threshold")
            worst = min(t.total_cost for t in self.trajectories)
            if worst <= self.cost_threshold:
                raise ValueError(
                    f"undesired dataset contains a trajectory with cost {worst!r} "
                    f"<= threshold {self.cost_threshold!r}"
                )

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def num_transitions(self) -> int:
        return int(sum(len(t) for t in self.trajectories))

    def columns(self) -> dict[str, np.ndarray]:
        """Concatenated transition columns plus traj_id and in-episode t."""
        lens = [len(t) for t in self.trajectories]
        return {
            "s": np.concatenate([t.states for t in self.trajectories]),
            "a": np.concatenate([t.actions for t in self.trajectories]),
            "r": np.concatenate([t.rewards for t in self.trajectories]),
            "c": np.concatenate([t.costs for t in self.trajectories]),
            "s_next": np.concatenate([t.next_states for t in self.trajectories]),
            "done": np.concatenate([t.dones for t in self.trajectories]),
            "traj_id": np.repeat(np.arange(len(lens), dtype=np.int64), lens),
            "t": np.concatenate([np.arange(n, dtype=np.int64) for n in lens]),
        }


def _absorbing_states(mdp: FiniteMdp) -> np.ndarray:
    """States where every action self-loops with zero reward and cost."""
    S = mdp.num_states
    self_loop = np.all(mdp.transition[np.arange(S), :, np.arange(S)] == 1.0, axis=1)
    silent = np.all(mdp.reward == 0.0, axis=1) & np.all(mdp.cost == 0.0, axis=1)
    return self_loop & silent


def _sample_rows(prob_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF sampling, one uniform per row
    cum = np.cumsum(prob_rows, axis=1)
    idx = (cum < u[:, None]).sum(axis=1)
    return np.minimum(idx, prob_rows.shape[1] - 1)


def rollout(
    mdp: FiniteMdp,
    policy: TabularPolicy,
    n_trajectories: int,
    horizon: int,
    seed: int,
) -> list[Trajectory]:
    """Sample episodes of length <= horizon; an episode ends early only when
    it enters an absorbing zero-reward state (done=True on that transition).

    Sampling is vectorized across trajectories with a single seeded
    generator, so the result is a pure function of
    (mdp, policy, n_trajectories, horizon, seed).
    """
    if n_trajectories < 1 or horizon < 1:
        raise ValueError("need n_trajectories >= 1 and horizon >= 1")
    S, A = mdp.num_states, mdp.num_actions
    if policy.probs.shape != (S, A):
        raise ValueError("policy does not match the mdp")
    rng = np.random.default_rng(seed)
    absorbing = _absorbing_states(mdp)

    s = _sample_rows(np.tile(mdp.initial_dist, (n_trajectories, 1)), rng.random(n_trajectories))
    states = np.zeros((n_trajectories, horizon), dtype=np.int64)
    actions = np.zeros_like(states)
    next_states = np.zeros_like(states)
    lengths = np.zeros(n_trajectories, dtype=np.int64)
    alive = np.ones(n_trajectories, dtype=bool)

    for t in range(horizon):
        u_a = rng.random(n_trajectories)
        u_s = rng.random(n_trajectories)
        if not alive.any():
            break
        idx = np.flatnonzero(alive)
        a = _sample_rows(policy.probs[s[idx]], u_a[idx])
        ns = _sample_rows(mdp.transition[s[idx], a], u_s[idx])
        states[idx, t] = s[idx]
        actions[idx, t] = a
        next_states[idx, t] = ns
        lengths[idx] = t + 1
        s[idx] = ns
        alive[idx] &= ~absorbing[ns]

    out = []
    for i in range(n_trajectories):
        n = int(lengths[i])
        st, ac, nx = states[i, :n], actions[i, :n], next_states[i, :n]
        dones = np.zeros(n, dtype=bool)
        dones[-1] = bool(absorbing[nx[-1]])
        out.append(
            Trajectory(st, ac, mdp.reward[st, ac], mdp.cost[st, ac], nx, dones)
        )
    return out


def label_undesired(
    trajectories: Sequence[Trajectory], cost_threshold: float
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Partition by total episode cost strictly above the threshold."""
    over = [t for t in trajectories if t.total_cost > cost_threshold]
    under = [t for t in trajectories if t.total_cost <= cost_threshold]
    return over, under


def _sample_without_replacement(pool, n: int, rng, what: str) -> list[Trajectory]:
    if n < 0:
        raise ValueError(f"{what}: negative sample size")
    if n > len(pool):
        raise ValueError(f"{what}: asked for {n} trajectories but the pool has {len(pool)}")
    idx = rng.choice(len(pool), size=n, replace=False)
    return [pool[i] for i in np.sort(idx)]


def dataset_from_trajectories(
    trajectories: Iterable[Trajectory],
    role: Role,
    mdp: FiniteMdp,
    source_counts: tuple[int, int],
    cost_threshold: float | None = None,
) -> TrajectoryDataset:
    return TrajectoryDataset(
        trajectories=tuple(trajectories),
        role=role,
        num_states=mdp.num_states,
        num_actions=mdp.num_actions,
        gamma=mdp.discount,
        source_counts=(int(source_counts[0]), int(source_counts[1])),
        cost_threshold=cost_threshold,
    )


def build_mix(
    safe_pool: Sequence[Trajectory],
    undesired_pool: Sequence[Trajectory],
    n_safe: int,
    n_undesired: int,
    mdp: FiniteMdp,
    seed: int,
) -> TrajectoryDataset:
    """Unlabeled mixture: n_safe + n_undesired trajectories sampled without
    replacement from the two pools."""
    rng = np.random.default_rng(seed)
    safe = _sample_without_replacement(safe_pool, n_safe, rng, "mix/safe")
    bad = _sample_without_replacement(undesired_pool, n_undesired, rng, "mix/undesired")
    return dataset_from_trajectories(
        safe + bad, Role.MIX, mdp, source_counts=(n_safe, n_undesired)
    )


def build_undesired(
    undesired_pool: Sequence[Trajectory],
    n: int,
    cost_threshold: float,
    mdp: FiniteMdp,
    seed: int,
) -> TrajectoryDataset:
    rng = np.random.default_rng(seed)
    picks = _sample_without_replacement(undesired_pool, n, rng, "undesired")
    return dataset_from_trajectories(
        picks, Role.UNDESIRED, mdp, source_counts=(0, n), cost_threshold=cost_threshold
    )


def _transition_weights(dataset: TrajectoryDataset, weighting: str) -> np.ndarray:
    cols = dataset.columns()
    if weighting == "discounted":
        w = (1.0 - dataset.gamma) * np.power(dataset.gamma, cols["t"].astype(np.float64))
    elif weighting == "uniform":
        w = np.ones(len(cols["t"]), dtype=np.float64)
    else:
        raise ValueError(f"unknown weighting {weighting!r} (use 'discounted' or 'uniform')")
    return w / w.sum()


def empirical_occupancy(
    dataset: TrajectoryDataset, weighting: str = "discounted"
) -> np.ndarray:
    """Empirical state-action visitation, normalized to sum 1.

    'discounted' weights a transition at in-episode time t by
    (1 - gamma) gamma^t (finite-horizon truncation of the discounted
    occupancy; episodes cut at the horizon or at absorption bias it a little
    and that is accepted here), 'uniform' counts every transition equally.
    """
    cols = dataset.columns()
    w = _transition_weights(dataset, weighting)
    flat = cols["s"] * dataset.num_actions + cols["a"]
    occ = np.bincount(flat, weights=w, minlength=dataset.num_states * dataset.num_actions)
    return occ.reshape(dataset.num_states, dataset.num_actions)


def initial_state_weights(dataset: TrajectoryDataset) -> np.ndarray:
    """Empirical start-state distribution (each trajectory's first state)."""
    heads = np.array([t.states[0] for t in dataset.trajectories], dtype=np.int64)
    w = np.bincount(heads, minlength=dataset.num_states).astype(np.float64)
    return w / w.sum()


def observed_action_mask(dataset: TrajectoryDataset) -> np.ndarray:
    mask = np.zeros((dataset.num_states, dataset.num_actions), dtype=bool)
    cols = dataset.columns()
    mask[cols["s"], cols["a"]] = True
    return mask


def transition_triples(
    dataset: TrajectoryDataset, weighting: str = "discounted"
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Aggregate transitions into unique (flat (s,a), s', total weight)
    triples. Weighted sums over these triples equal weighted sums over raw
    transitions, which is what the training loops iterate over."""
    cols = dataset.columns()
    w = _transition_weights(dataset, weighting)
    S, A = dataset.num_states, dataset.num_actions
    sa = cols["s"] * A + cols["a"]
    key = sa * S + cols["s_next"]
    tot = np.bincount(key, weights=w, minlength=S * A * S)
    nz = np.flatnonzero(tot)
    return (nz // S).astype(np.int64), (nz % S).astype(np.int64), tot[nz]


# ---------------------------------------------------------------------------
# file format


def save_dataset(dataset: TrajectoryDataset, path) -> None:
    header = {
        "role": dataset.role.value,
        "gamma": dataset.gamma,
        "num_states": dataset.num_states,
        "num_actions": dataset.num_actions,
        "source_counts": list(dataset.source_counts),
        "cost_threshold": dataset.cost_threshold,
        "normalization": None
        if dataset.normalization is None
        else {
            "mean": dataset.normalization[0].tolist(),
            "std": dataset.normalization[1].tolist(),
        },
    }
    cols = dataset.columns()
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s, a, r, c, ns, d, tid, t in zip(
            cols["s"], cols["a"], cols["r"], cols["c"], cols["s_next"],
            cols["done"], cols["traj_id"], cols["t"],
        ):
            fh.write(
                f"{s} {a} {float(r)!r} {float(c)!r} {ns} {int(d)} {tid} {t}\n"
            )


def load_dataset(path) -> TrajectoryDataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        rows = [line.split() for line in fh if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no transitions")
    s = np.array([int(r[0]) for r in rows], dtype=np.int64)
    a = np.array([int(r[1]) for r in rows], dtype=np.int64)
    rew = np.array([float(r[2]) for r in rows], dtype=np.float64)
    cost = np.array([float(r[3]) for r in rows], dtype=np.float64)
    ns = np.array([int(r[4]) for r in rows], dtype=np.int64)
    done = np.array([bool(int(r[5])) for r in rows])
    tid = np.array([int(r[6]) for r in rows], dtype=np.int64)
    trajs = []
    for u in np.unique(tid):
        m = tid == u
        trajs.append(Trajectory(s[m], a[m], rew[m], cost[m], ns[m], done[m]))
    norm = header.get("normalization")
    return TrajectoryDataset(
        trajectories=tuple(trajs),
        role=Role(header["role"]),
        num_states=int(header["num_states"]),
        num_actions=int(header["num_actions"]),
        gamma=float(header["gamma"]),
        source_counts=tuple(header["source_counts"]),
        cost_threshold=header.get("cost_threshold"),
        normalization=None
        if norm is None
        else (np.asarray(norm["mean"], dtype=np.float64), np.asarray(norm["std"], dtype=np.float64)),
    )


# ---------------------------------------------------------------------------
# state normalization


def standardize(
    features: np.ndarray,
    mean: np.ndarray | None = None,
    std: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature-wise (x - mean) / std for feature-vector states.

    Constant features get their std clamped to 1 so they map to exactly 0
    instead of blowing up. Returns (normalized, mean, std) so the same stats
    can be reapplied to a second dataset.
    """
    x = np.asarray(features, dtype=np.float64)
    if mean is None:
        mean = x.mean(axis=0)
    if std is None:
        std = x.std(axis=0)
    std = np.where(np.asarray(std) < 1e-8, 1.0, std)
    return (x - mean) / std, np.asarray(mean, dtype=np.float64), std


def normalize_states(dataset: TrajectoryDataset) -> TrajectoryDataset:
    """Identity for tabular id states: integer ids are categorical, so there
    is nothing to standardize. Kept as the single entry point so a
    feature-state variant can slot in standardize() without touching
    callers. Clears any stale stats."""
    if dataset.normalization is None:
        return dataset
    return replace(dataset, normalization=None)
