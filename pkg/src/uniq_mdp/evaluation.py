"""Policy evaluation: sampled episode statistics and exact discounted values.

Sampled metrics are undiscounted per-episode sums; CVaR-10% is the mean of
the ceil(0.1 * n) highest-cost episodes, the standard tail risk readout.
Exact values come from the occupancy measure, so they carry no sampling
noise and serve as a cross-check on the rollout statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from uniq_mdp.data import rollout
from uniq_mdp.mdp import FiniteMdp, TabularPolicy, occupancy_of

__all__ = [
    "EvalReport",
    "evaluate",
    "cvar_upper",
    "exact_discounted_value",
    "compare_reports",
    "comparison_csv",
    "comparison_text",
]


def cvar_upper(values: np.ndarray, alpha: float = 0.1) -> float:
    """Mean of the worst (highest) ceil(alpha * n) values."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha!r}")
    v = np.sort(np.asarray(values, dtype=np.float64))[::-1]
    if v.size == 0:
        raise ValueError("cvar of an empty sample")
    k = math.ceil(alpha * v.size)
    return float(v[:k].mean())


def exact_discounted_value(mdp: FiniteMdp, policy: TabularPolicy, table: np.ndarray) -> float:
    """<rho_pi, table> / (1 - gamma): the exact expected discounted sum of
    the per-step table values under the policy."""
    occ = occupancy_of(mdp, policy)
    return float(np.sum(occ.rho * table) / (1.0 - mdp.discount))


@dataclass(frozen=True)
class EvalReport:
    mean_return: float
    std_return: float
    mean_cost: float
    std_cost: float
    cvar10_cost: float
    n_episodes: int
    exact_return: float
    exact_cost: float

    def __post_init__(self):
        if self.n_episodes < 20:
            raise ValueError(
                f"need at least 20 episodes for stable tail statistics, got {self.n_episodes}"
            )
        if self.cvar10_cost < self.mean_cost - 1e-9:
            raise ValueError("cvar of the worst tail cannot undercut the mean cost")

    def to_dict(self) -> dict:
        return {
            "mean_return": self.mean_return,
            "std_return": self.std_return,
            "mean_cost": self.mean_cost,
            "std_cost": self.std_cost,
            "cvar10_cost": self.cvar10_cost,
            "n_episodes": self.n_episodes,
            "exact_return": self.exact_return,
            "exact_cost": self.exact_cost,
        }


def evaluate(
    mdp: FiniteMdp,
    policy: TabularPolicy,
    n_episodes: int = 100,
    horizon: int = 60,
    seed: int = 0,
) -> EvalReport:
    trajs = rollout(mdp, policy, n_episodes, horizon, seed)
    rets = np.array([t.total_return for t in trajs])
    costs = np.array([t.total_cost for t in trajs])
    return EvalReport(
        mean_return=float(rets.mean()),
        std_return=float(rets.std()),
        mean_cost=float(costs.mean()),
        std_cost=float(costs.std()),
        cvar10_cost=cvar_upper(costs, 0.1),
        n_episodes=n_episodes,
        exact_return=exact_discounted_value(mdp, policy, mdp.reward),
        exact_cost=exact_discounted_value(mdp, policy, mdp.cost),
    )


_CSV_FIELDS = (
    "mean_return",
    "std_return",
    "mean_cost",
    "std_cost",
    "cvar10_cost",
    "n_episodes",
)


def compare_reports(reports: dict[str, EvalReport]) -> str:
    """Name of the lowest-mean-cost method; ties break lexicographically."""
    if not reports:
        raise ValueError("nothing to compare")
    return min(reports, key=lambda name: (reports[name].mean_cost, name))


def comparison_csv(reports: dict[str, EvalReport]) -> str:
    lines = ["method," + ",".join(_CSV_FIELDS)]
    for name in sorted(reports):
        rep = reports[name]
        vals = [repr(getattr(rep, f)) if f != "n_episodes" else str(rep.n_episodes) for f in _CSV_FIELDS]
        lines.append(f"{name}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def comparison_text(reports: dict[str, EvalReport]) -> str:
    best = compare_reports(reports)
    header = f"{'method':<12} {'return':>10} {'cost':>10} {'cvar10':>10}"
    lines = [header, "-" * len(header)]
    for name in sorted(reports):
        rep = reports[name]
        flag = " *" if name == best else ""
        lines.append(
            f"{name:<12} {rep.mean_return:>10.3f} {rep.mean_cost:>10.3f} "
            f"{rep.cvar10_cost:>10.3f}{flag}"
        )
    lines.append(f"* lowest mean cost: {best}")
    return "\n".join(lines) + "\n"
