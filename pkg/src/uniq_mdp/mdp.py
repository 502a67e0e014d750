"""Finite MDPs and exact soft (entropy-regularized) dynamic programming.

Everything here is tabular and double precision. States and actions are
integer ids; policies, occupancy measures and Q-tables are dense (S, A)
arrays. Occupancy measures use the from-t=0 convention

    rho_pi(s, a) = (1 - gamma) * sum_t gamma^t P(s_t = s, a_t = a),

which makes them proper distributions (sum exactly 1) and keeps every
identity in this package free of stray (1 - gamma) factors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FiniteMdp",
    "TabularPolicy",
    "OccupancyMeasure",
    "QTable",
    "occupancy_of",
    "soft_value_of_q",
    "softmax_policy",
    "soft_bellman",
    "inverse_bellman",
    "soft_value_iteration",
    "soft_bellman_fixed_point",
    "mdp_to_json",
    "mdp_from_json",
]

# Row-stochasticity is enforced tightly; occupancy sums get a looser budget
# because they come out of a linear solve.
_ROW_ATOL = 1e-9
_OCC_ATOL = 1e-8

# Above this many states the direct linear solve for occupancies is replaced
# by power iteration (S^2 dense solve memory gets silly).
_DIRECT_SOLVE_MAX_STATES = 4096


def _frozen_array(x, dtype=np.float64) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(x, dtype=dtype))
    arr.setflags(write=False)
    return arr


def _require_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")


@dataclass(frozen=True)
class FiniteMdp:
    """A finite MDP with a reward table and a separate cost table.

    transition[s, a, s'] is P(s' | s, a); reward and cost are (S, A) tables;
    initial_dist is the start-state distribution p0.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _frozen_array(self.transition)
        r = _frozen_array(self.reward)
        c = _frozen_array(self.cost)
        p0 = _frozen_array(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        S, A = P.shape[0], P.shape[1]
        if S < 1 or A < 1:
            raise ValueError("need at least one state and one action")
        if r.shape != (S, A):
            raise ValueError(f"reward shape {r.shape} does not match (S, A)=({S}, {A})")
        if c.shape != (S, A):
            raise ValueError(f"cost shape {c.shape} does not match (S, A)=({S}, {A})")
        if p0.shape != (S,):
            raise ValueError(f"initial_dist shape {p0.shape} does not match S={S}")
        for name, arr in (("transition", P), ("reward", r), ("cost", c), ("initial_dist", p0)):
            _require_finite(name, arr)
        if np.any(P < 0) or np.any(p0 < 0):
            raise ValueError("probabilities must be non-negative")
        rowsums = P.sum(axis=2)
        if not np.allclose(rowsums, 1.0, rtol=0.0, atol=_ROW_ATOL):
            bad = np.unravel_index(np.argmax(np.abs(rowsums - 1.0)), rowsums.shape)
            raise ValueError(
                f"transition rows must sum to 1 (worst row (s={bad[0]}, a={bad[1]}) "
                f"sums to {rowsums[bad]!r})"
            )
        if abs(float(p0.sum()) - 1.0) > _ROW_ATOL:
            raise ValueError(f"initial_dist must sum to 1, got {float(p0.sum())!r}")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError(f"discount must lie in [0, 1), got {self.discount!r}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "cost", c)
        object.__setattr__(self, "initial_dist", p0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transition.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class TabularPolicy:
    """Stochastic policy; probs[s, a] = pi(a | s), rows on the simplex."""

    probs: np.ndarray

    def __post_init__(self):
        p = _frozen_array(self.probs)
        if p.ndim != 2:
            raise ValueError(f"policy table must be 2-D, got shape {p.shape}")
        _require_finite("policy", p)
        if np.any(p < 0):
            raise ValueError("policy probabilities must be non-negative")
        rowsums = p.sum(axis=1)
        if not np.allclose(rowsums, 1.0, rtol=0.0, atol=_ROW_ATOL):
            s = int(np.argmax(np.abs(rowsums - 1.0)))
            raise ValueError(f"policy row {s} sums to {rowsums[s]!r}, expected 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, num_states: int, num_actions: int) -> "TabularPolicy":
        return cls(np.full((num_states, num_actions), 1.0 / num_actions))

    @property
    def num_states(self) -> int:
        return self.probs.shape[0]

    @property
    def num_actions(self) -> int:
        return self.probs.shape[1]


@dataclass(frozen=True)
class OccupancyMeasure:
    """Normalized discounted state-action visitation, rho[s, a] >= 0, sum 1."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=np.float64)
        if rho.ndim != 2:
            raise ValueError(f"occupancy table must be 2-D, got shape {rho.shape}")
        _require_finite("occupancy", rho)
        # tiny negative dust from the linear solve is zeroed, real negativity is an error
        if np.any(rho < -1e-12):
            raise ValueError("occupancy has negative mass")
        rho = np.maximum(rho, 0.0)
        total = float(rho.sum())
        if abs(total - 1.0) > _OCC_ATOL:
            raise ValueError(f"occupancy must sum to 1 within {_OCC_ATOL}, got {total!r}")
        object.__setattr__(self, "rho", _frozen_array(rho))

    @property
    def state_dist(self) -> np.ndarray:
        return self.rho.sum(axis=1)


@dataclass(frozen=True)
class QTable:
    """Dense soft Q-values, finite everywhere."""

    q: np.ndarray

    def __post_init__(self):
        q = _frozen_array(self.q)
        if q.ndim != 2:
            raise ValueError(f"q table must be 2-D, got shape {q.shape}")
        _require_finite("q", q)
        object.__setattr__(self, "q", q)


def _as_q_array(q) -> np.ndarray:
    if isinstance(q, QTable):
        return q.q
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D q table, got shape {arr.shape}")
    return arr


def occupancy_of(mdp: FiniteMdp, policy: TabularPolicy) -> OccupancyMeasure:
    """Exact discounted occupancy of `policy` in `mdp`.

    Solves (I - gamma * P_pi^T) d = (1 - gamma) * p0 for the state
    distribution and multiplies in the policy. Uses a dense solve up to
    _DIRECT_SOLVE_MAX_STATES states, power iteration beyond that.
    """
    S, A = mdp.num_states, mdp.num_actions
    if policy.probs.shape != (S, A):
        raise ValueError(
            f"policy shape {policy.probs.shape} does not match mdp ({S}, {A})"
        )
    gamma = mdp.discount
    # P_pi[s, s'] = sum_a pi(a|s) P(s'|s, a)
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    b = (1.0 - gamma) * mdp.initial_dist
    if S <= _DIRECT_SOLVE_MAX_STATES:
        d = np.linalg.solve(np.eye(S) - gamma * P_pi.T, b)
    else:
        d = b.copy()
        for _ in range(200000):
            d_next = b + gamma * (P_pi.T @ d)
            if np.max(np.abs(d_next - d)) < 1e-15:
                d = d_next
                break
            d = d_next
        else:
            raise RuntimeError("occupancy power iteration did not converge")
    rho = d[:, None] * policy.probs
    return OccupancyMeasure(rho)


def soft_value_of_q(q) -> np.ndarray:
    """Soft state value V(s) = log sum_a exp Q(s, a), computed with max
    subtraction so large Q-values do not overflow."""
    qa = _as_q_array(q)
    m = np.max(qa, axis=1, keepdims=True)
    return (m + np.log(np.sum(np.exp(qa - m), axis=1, keepdims=True)))[:, 0]


def softmax_policy(q) -> TabularPolicy:
    """Boltzmann policy pi(a|s) = exp(Q(s,a) - V(s))."""
    qa = _as_q_array(q)
    v = soft_value_of_q(qa)
    p = np.exp(qa - v[:, None])
    p /= p.sum(axis=1, keepdims=True)
    return TabularPolicy(p)


def _soft_policy_value(policy: TabularPolicy, qa: np.ndarray) -> np.ndarray:
    """V^pi(s) = E_{a~pi}[Q(s,a) - log pi(a|s)], with 0 * log 0 = 0."""
    p = policy.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        contrib = np.where(p > 0.0, p * (qa - np.log(np.where(p > 0.0, p, 1.0))), 0.0)
    return contrib.sum(axis=1)


def soft_bellman(mdp: FiniteMdp, reward: np.ndarray, policy: TabularPolicy, q) -> QTable:
    """One application of the soft Bellman operator for a fixed policy:
    (B q)(s, a) = r(s, a) + gamma * E_{s'}[V^pi(s')]."""
    qa = _as_q_array(q)
    r = np.asarray(reward, dtype=np.float64)
    if r.shape != qa.shape:
        raise ValueError(f"reward shape {r.shape} does not match q shape {qa.shape}")
    v_pi = _soft_policy_value(policy, qa)
    return QTable(r + mdp.discount * (mdp.transition @ v_pi))


def inverse_bellman(mdp: FiniteMdp, q) -> np.ndarray:
    """Reward implied by a Q-table under the softmax policy of that table:
    r_q(s, a) = Q(s, a) - gamma * E_{s'}[V(s')] with V = soft_value_of_q(Q).

    This is the exact inverse of the soft Bellman operator at pi = softmax(Q),
    so soft_bellman(mdp, inverse_bellman(mdp, q), softmax_policy(q), q)
    reproduces q up to floating point.
    """
    qa = _as_q_array(q)
    v = soft_value_of_q(qa)
    return qa - mdp.discount * (mdp.transition @ v)


def soft_value_iteration(
    mdp: FiniteMdp,
    reward: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 2_000_000,
) -> QTable:
    """Fixed point of Q = r + gamma * P V(Q), V = log-sum-exp over actions.

    The operator is a gamma-contraction in sup norm, so plain iteration
    converges; `tol` bounds the final sup-norm step size.
    """
    r = mdp.reward if reward is None else np.asarray(reward, dtype=np.float64)
    if r.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"reward shape {r.shape} does not match mdp tables")
    gamma = mdp.discount
    q = np.zeros_like(r)
    for _ in range(max_iter):
        v = soft_value_of_q(q)
        q_next = r + gamma * (mdp.transition @ v)
        if np.max(np.abs(q_next - q)) <= tol:
            return QTable(q_next)
        q = q_next
    raise RuntimeError(f"soft value iteration did not reach tol={tol} in {max_iter} iters")


def soft_bellman_fixed_point(
    mdp: FiniteMdp, reward: np.ndarray, policy: TabularPolicy
) -> QTable:
    """Fixed point of the fixed-policy soft Bellman operator, by linear solve.

    V^pi satisfies (I - gamma * M_pi P) V = M_pi r + H_row, where M_pi takes
    action expectations and H_row(s) is the policy's per-state entropy.
    """
    r = np.asarray(reward, dtype=np.float64)
    S = mdp.num_states
    if r.shape != (S, mdp.num_actions):
        raise ValueError(f"reward shape {r.shape} does not match mdp tables")
    p = policy.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        h_row = -np.sum(np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0), axis=1)
    M = np.einsum("sa,sat->st", p, mdp.transition)  # state -> next-state under pi
    b = np.sum(p * r, axis=1) + h_row
    v = np.linalg.solve(np.eye(S) - mdp.discount * M, b)
    return QTable(r + mdp.discount * (mdp.transition @ v))


# ---------------------------------------------------------------------------
# serialization


def mdp_to_json(mdp: FiniteMdp) -> str:
    """JSON text for an MDP. Plain nested lists; floats round-trip exactly
    (python float repr is shortest-exact, <= 17 significant digits)."""
    payload = {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "discount": mdp.discount,
        "transition": mdp.transition.tolist(),
        "reward": mdp.reward.tolist(),
        "cost": mdp.cost.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }
    return json.dumps(payload)


def mdp_from_json(text: str) -> FiniteMdp:
    payload = json.loads(text)
    mdp = FiniteMdp(
        transition=np.asarray(payload["transition"], dtype=np.float64),
        reward=np.asarray(payload["reward"], dtype=np.float64),
        cost=np.asarray(payload["cost"], dtype=np.float64),
        discount=float(payload["discount"]),
        initial_dist=np.asarray(payload["initial_dist"], dtype=np.float64),
    )
    if mdp.num_states != payload["num_states"] or mdp.num_actions != payload["num_actions"]:
        raise ValueError("declared table shape does not match table contents")
    return mdp


def table_to_json(kind: str, arrays: dict[str, np.ndarray]) -> str:
    """Shared JSON layout for dense per-(s, a) tables (q, policy, ratio)."""
    first = next(iter(arrays.values()))
    payload = {"kind": kind, "num_states": first.shape[0], "num_actions": first.shape[1]}
    for name, arr in arrays.items():
        payload[name] = np.asarray(arr, dtype=np.float64).tolist()
    return json.dumps(payload)


def table_from_json(text: str, kind: str, names: tuple[str, ...]) -> dict[str, np.ndarray]:
    payload = json.loads(text)
    if payload.get("kind") != kind:
        raise ValueError(f"expected a {kind!r} table, got {payload.get('kind')!r}")
    out = {}
    shape = (payload["num_states"], payload["num_actions"])
    for name in names:
        arr = np.asarray(payload[name], dtype=np.float64)
        if arr.shape != shape:
            raise ValueError(f"table {name!r} has shape {arr.shape}, declared {shape}")
        out[name] = arr
    return out
