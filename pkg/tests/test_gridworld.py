"""Gridworld construction and demonstrator synthesis."""

import numpy as np
import pytest

from uniq_mdp.evaluation import exact_discounted_value
from uniq_mdp.gridworld import (
    DOWN,
    LEFT,
    RIGHT,
    UP,
    GridworldSpec,
    build_gridworld,
    synthesize_experts,
)


def tiny(**kw):
    base = dict(width=4, height=3, goal_cells=((3, 0),), hazard_cells=((1, 0),))
    base.update(kw)
    return GridworldSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError, match="outside"):
        tiny(goal_cells=((4, 0),))
    with pytest.raises(ValueError, match="at least one goal"):
        tiny(goal_cells=())
    with pytest.raises(ValueError, match="duplicate"):
        tiny(hazard_cells=((1, 0), (1, 0)))
    with pytest.raises(ValueError, match="both goal and hazard"):
        tiny(hazard_cells=((3, 0),))
    with pytest.raises(ValueError, match="at least one start"):
        tiny(start_cells=())
    with pytest.raises(ValueError, match="overlaps a start"):
        tiny(start_cells=((1, 0),))
    with pytest.raises(ValueError, match="slip_prob"):
        tiny(slip_prob=1.0)


def test_state_indexing_roundtrip():
    spec = tiny()
    for s in range(spec.num_states):
        assert spec.state_of(spec.cell_of(s)) == s
    assert spec.state_of((2, 1)) == 1 * 4 + 2


def test_multi_start_initial_distribution():
    spec = tiny(start_cells=((0, 0), (0, 1), (0, 2)))
    mdp = build_gridworld(spec)
    p0 = mdp.initial_dist
    for c in spec.start_cells:
        assert p0[spec.state_of(c)] == pytest.approx(1.0 / 3.0)
    assert p0.sum() == pytest.approx(1.0)
    assert np.count_nonzero(p0) == 3


def test_deterministic_moves_and_bump():
    spec = tiny(slip_prob=0.0)
    mdp = build_gridworld(spec)
    s = spec.state_of((0, 0))
    assert mdp.transition[s, RIGHT, spec.state_of((1, 0))] == 1.0
    assert mdp.transition[s, UP, spec.state_of((0, 1))] == 1.0
    # moving off the grid stays put
    assert mdp.transition[s, LEFT, s] == 1.0
    assert mdp.transition[s, DOWN, s] == 1.0


def test_slip_goes_perpendicular():
    spec = tiny(slip_prob=0.2)
    mdp = build_gridworld(spec)
    s = spec.state_of((1, 1))
    row = mdp.transition[s, RIGHT]
    assert row[spec.state_of((2, 1))] == pytest.approx(0.8)
    assert row[spec.state_of((1, 2))] == pytest.approx(0.1)
    assert row[spec.state_of((1, 0))] == pytest.approx(0.1)
    np.testing.assert_allclose(mdp.transition.sum(axis=2), 1.0)


def test_goals_absorb_with_zero_reward():
    spec = tiny()
    mdp = build_gridworld(spec)
    g = spec.state_of((3, 0))
    for a in range(4):
        assert mdp.transition[g, a, g] == 1.0
    assert np.all(mdp.reward[g] == 0.0)
    assert np.all(mdp.cost[g] == 0.0)


def test_reward_and_cost_are_entry_probabilities():
    spec = tiny(goal_reward=5.0, hazard_cost=2.0, slip_prob=0.2)
    mdp = build_gridworld(spec)
    s = spec.state_of((2, 0))
    # intended RIGHT lands on the goal with prob 0.8
    assert mdp.reward[s, RIGHT] == pytest.approx(5.0 * 0.8)
    # intended LEFT lands on the hazard with prob 0.8
    assert mdp.cost[s, LEFT] == pytest.approx(2.0 * 0.8)


def test_random_hazards_are_seeded_and_avoid_special_cells():
    spec = tiny(n_random_hazards=5, layout_seed=3)
    a = build_gridworld(spec)
    b = build_gridworld(tiny(n_random_hazards=5, layout_seed=3))
    assert np.array_equal(a.cost, b.cost)
    c = build_gridworld(tiny(n_random_hazards=5, layout_seed=4))
    assert not np.array_equal(a.cost, c.cost)
    # moves are deterministic here, so a sure transition into a start or goal
    # cell must carry zero cost: random hazards never land on special cells
    for cell in spec.start_cells + spec.goal_cells:
        t = spec.state_of(cell)
        sure_entry = a.transition[:, :, t] == 1.0
        assert np.all(a.cost[sure_entry] == 0.0)


def test_too_many_random_hazards():
    with pytest.raises(ValueError, match="random hazards"):
        build_gridworld(tiny(n_random_hazards=100))


def test_expert_pair_orders_cost_and_sharpness():
    spec = GridworldSpec(
        width=6, height=5, goal_cells=((5, 2),), goal_reward=10.0,
        hazard_cells=tuple((2, y) for y in range(4)), slip_prob=0.0,
        discount=0.95, start_cells=((0, 1), (0, 2), (0, 3)),
    )
    mdp = build_gridworld(spec)
    ex = synthesize_experts(mdp, lambda_cost=8.0, temperature=0.05)
    cost_free = exact_discounted_value(mdp, ex.unconstrained, mdp.cost)
    cost_con = exact_discounted_value(mdp, ex.constrained, mdp.cost)
    assert cost_con < cost_free
    ret_free = exact_discounted_value(mdp, ex.unconstrained, mdp.reward)
    assert ret_free > 0
    # lower temperature concentrates the policy
    soft = synthesize_experts(mdp, lambda_cost=8.0, temperature=1.0)
    assert ex.unconstrained.probs.max(axis=1).mean() > soft.unconstrained.probs.max(axis=1).mean()


def test_expert_argument_validation(small_mdp):
    with pytest.raises(ValueError, match="lambda_cost"):
        synthesize_experts(small_mdp, lambda_cost=-1.0)
    with pytest.raises(ValueError, match="temperature"):
        synthesize_experts(small_mdp, lambda_cost=1.0, temperature=0.0)
