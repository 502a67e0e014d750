"""Hazard gridworlds and soft-optimal demonstrator policies.

Cells are (x, y) with x in [0, width) and y in [0, height); state id is
y * width + x. Actions are 0=right, 1=up, 2=left, 3=down. A move off the
grid keeps the agent in place. With slip probability p the agent goes to
one of the two perpendicular neighbours (p/2 each) instead of the intended
one. Goal cells absorb: every action from a goal self-loops with zero
reward and zero cost. Reward and cost tables hold expected immediate
values, r(s, a) = goal_reward * P(next is a goal | s, a) and
c(s, a) = hazard_cost * P(next is a hazard | s, a), so a trajectory that
keeps re-entering hazard cells keeps paying.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uniq_mdp.mdp import FiniteMdp, TabularPolicy, soft_value_iteration, softmax_policy

__all__ = [
    "GridworldSpec",
    "ExpertPair",
    "build_gridworld",
    "synthesize_experts",
    "RIGHT",
    "UP",
    "LEFT",
    "DOWN",
]

RIGHT, UP, LEFT, DOWN = 0, 1, 2, 3
_MOVES = ((1, 0), (0, 1), (-1, 0), (0, -1))
# perpendicular action pairs for the slip model
_PERP = {RIGHT: (UP, DOWN), LEFT: (UP, DOWN), UP: (RIGHT, LEFT), DOWN: (RIGHT, LEFT)}

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridworldSpec:
    width: int
    height: int
    goal_cells: tuple[Cell, ...]
    goal_reward: float = 1.0
    hazard_cells: tuple[Cell, ...] = ()
    hazard_cost: float = 1.0
    slip_prob: float = 0.0
    discount: float = 0.95
    start_cells: tuple[Cell, ...] = ((0, 0),)
    n_random_hazards: int = 0
    layout_seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid must be at least 1x1")
        if not self.goal_cells:
            raise ValueError("need at least one goal cell")
        if not (0.0 <= self.slip_prob < 1.0):
            raise ValueError(f"slip_prob must be in [0, 1), got {self.slip_prob!r}")
        if not (0.0 <= self.discount < 1.0):
            raise ValueError(f"discount must be in [0, 1), got {self.discount!r}")
        if self.n_random_hazards < 0:
            raise ValueError("n_random_hazards must be >= 0")
        object.__setattr__(self, "goal_cells", tuple(tuple(c) for c in self.goal_cells))
        object.__setattr__(self, "hazard_cells", tuple(tuple(c) for c in self.hazard_cells))
        object.__setattr__(self, "start_cells", tuple(tuple(c) for c in self.start_cells))
        if not self.start_cells:
            raise ValueError("need at least one start cell")
        for name, cells in (("goal", self.goal_cells), ("hazard", self.hazard_cells), ("start", self.start_cells)):
            for c in cells:
                if not (0 <= c[0] < self.width and 0 <= c[1] < self.height):
                    raise ValueError(f"{name} cell {c} outside the {self.width}x{self.height} grid")
        goals = set(self.goal_cells)
        hazards = set(self.hazard_cells)
        starts = set(self.start_cells)
        if (
            len(goals) != len(self.goal_cells)
            or len(hazards) != len(self.hazard_cells)
            or len(starts) != len(self.start_cells)
        ):
            raise ValueError("duplicate goal, hazard, or start cells")
        if goals & hazards:
            raise ValueError(f"cells marked both goal and hazard: {sorted(goals & hazards)}")
        if starts & (goals | hazards):
            raise ValueError("goal or hazard overlaps a start cell")

    @property
    def num_states(self) -> int:
        return self.width * self.height

    def state_of(self, cell: Cell) -> int:
        return cell[1] * self.width + cell[0]

    def cell_of(self, state: int) -> Cell:
        return (state % self.width, state // self.width)


def _resolved_hazards(spec: GridworldSpec) -> set[Cell]:
    hazards = set(spec.hazard_cells)
    if spec.n_random_hazards:
        blocked = hazards | set(spec.goal_cells) | set(spec.start_cells)
        free = [
            (x, y)
            for y in range(spec.height)
            for x in range(spec.width)
            if (x, y) not in blocked
        ]
        if spec.n_random_hazards > len(free):
            raise ValueError(
                f"cannot place {spec.n_random_hazards} random hazards on "
                f"{len(free)} free cells"
            )
        rng = np.random.default_rng(spec.layout_seed)
        picks = rng.choice(len(free), size=spec.n_random_hazards, replace=False)
        hazards |= {free[i] for i in picks}
    return hazards


def build_gridworld(spec: GridworldSpec) -> FiniteMdp:
    """Deterministic: the same spec always produces the identical MDP."""
    S, A = spec.num_states, 4
    hazards = _resolved_hazards(spec)
    goal_states = {spec.state_of(c) for c in spec.goal_cells}
    hazard_states = {spec.state_of(c) for c in hazards}

    P = np.zeros((S, A, S))
    for s in range(S):
        if s in goal_states:
            P[s, :, s] = 1.0
            continue
        x, y = spec.cell_of(s)
        for a in range(A):
            outcomes = [(a, 1.0 - spec.slip_prob)]
            outcomes += [(p, spec.slip_prob / 2.0) for p in _PERP[a]]
            for move, prob in outcomes:
                dx, dy = _MOVES[move]
                nx, ny = x + dx, y + dy
                if not (0 <= nx < spec.width and 0 <= ny < spec.height):
                    nx, ny = x, y
                P[s, a, spec.state_of((nx, ny))] += prob

    goal_ind = np.zeros(S)
    goal_ind[list(goal_states)] = 1.0
    hazard_ind = np.zeros(S)
    hazard_ind[list(hazard_states)] = 1.0
    reward = spec.goal_reward * (P @ goal_ind)
    cost = spec.hazard_cost * (P @ hazard_ind)
    reward[list(goal_states), :] = 0.0
    cost[list(goal_states), :] = 0.0

    p0 = np.zeros(S)
    for c in spec.start_cells:
        p0[spec.state_of(c)] = 1.0 / len(spec.start_cells)
    return FiniteMdp(transition=P, reward=reward, cost=cost, discount=spec.discount, initial_dist=p0)


@dataclass(frozen=True)
class ExpertPair:
    """Soft-optimal demonstrators: one ignores the cost table, one trades it
    off against reward at rate lambda_cost."""

    unconstrained: TabularPolicy
    constrained: TabularPolicy
    lambda_cost: float
    temperature: float


def synthesize_experts(
    mdp: FiniteMdp,
    lambda_cost: float,
    temperature: float = 1.0,
    tol: float = 1e-12,
) -> ExpertPair:
    """Softmax policies of the soft-optimal Q for r and for r - lambda * c.

    Dividing the reward by the temperature before solving and taking the
    plain softmax afterwards is the standard way to get a temperature-tau
    Boltzmann policy out of a temperature-1 solver.
    """
    if lambda_cost < 0:
        raise ValueError("lambda_cost must be >= 0")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    q_free = soft_value_iteration(mdp, mdp.reward / temperature, tol=tol)
    shaped = (mdp.reward - lambda_cost * mdp.cost) / temperature
    q_con = soft_value_iteration(mdp, shaped, tol=tol)
    return ExpertPair(
        unconstrained=softmax_policy(q_free),
        constrained=softmax_policy(q_con),
        lambda_cost=float(lambda_cost),
        temperature=float(temperature),
    )
