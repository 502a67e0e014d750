"""Brute-force numerical checks of the identities the trainer relies on.

Three families, exposed on the CLI as `verify --prop {1,2,3}`:

1. conjugate identity: for the quadratic penalty psi(t) = t^2, minimizing
       L(pi, r) = <rho_un, r> - <rho_pi, r> - H(pi) + sum psi(r)
   coordinatewise over the reward table lands exactly on
       -H(pi) - sum (rho_pi - rho_un)^2 / 4,
   i.e. the negative conjugate of the occupancy gap. The oracle minimizes
   numerically (its own quadratic formula, cross-checked per cell by golden
   section and a local grid) and differences against the closed form.

2. q-space reformulation: with r_q = Q - gamma * P V(Q) the table Q is the
   soft-optimal table for reward r_q, hence softmax(Q) globally minimizes
   pi -> L(pi, r_q), and the minimum value equals
       F(Q) = <rho_un, r_q> + sum psi(r_q) - (1 - gamma) <p0, V(Q)>.
   The oracle checks the value identity and that no perturbed policy dips
   below the softmax policy.

3. ratio closed form: the two-head discriminator optimum recovers
   tau = rho_un / rho_mix exactly, and reweighting mixture expectations by
   tau reproduces undesired expectations for arbitrary test functions.

Everything here recomputes its quantities from occupancy measures and the
definitions above; the only package code reused is the tabular MDP algebra
(and, in family 3, the closed-form ratio being verified).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from uniq_mdp.mdp import (
    FiniteMdp,
    TabularPolicy,
    occupancy_of,
    soft_value_of_q,
    softmax_policy,
)
from uniq_mdp.ratio import closed_form_optimum, tau_of

__all__ = [
    "entropy_of",
    "exact_L",
    "random_mdp",
    "random_policy",
    "check_conjugate_identity",
    "check_q_reformulation",
    "check_ratio_closed_form",
    "VerificationReport",
    "run_verification",
    "VERIFICATION_THRESHOLDS",
]


def entropy_of(mdp: FiniteMdp, policy: TabularPolicy) -> float:
    """Discounted causal entropy <rho_pi, -log pi>, with 0 log 0 = 0."""
    rho = occupancy_of(mdp, policy).rho
    p = policy.probs
    with np.errstate(divide="ignore"):
        logp = np.where(p > 0.0, np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return float(-np.sum(rho * logp))


def exact_L(
    mdp: FiniteMdp,
    policy: TabularPolicy,
    reward: np.ndarray,
    rho_un: np.ndarray,
    psi,
) -> float:
    """L(pi, r) = <rho_un, r> - <rho_pi, r> - H(pi) + sum_{s,a} psi(r)."""
    r = np.asarray(reward, dtype=np.float64)
    rho_pi = occupancy_of(mdp, policy).rho
    return float(
        np.sum(rho_un * r) - np.sum(rho_pi * r) - entropy_of(mdp, policy) + np.sum(psi(r))
    )


# ---------------------------------------------------------------------------
# random instances


def random_mdp(
    num_states: int, num_actions: int, gamma: float, rng: np.random.Generator
) -> FiniteMdp:
    """Dense random MDP; Dirichlet rows keep every transition possible."""
    P = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    reward = rng.normal(size=(num_states, num_actions))
    cost = np.abs(rng.normal(size=(num_states, num_actions)))
    p0 = rng.dirichlet(np.ones(num_states))
    return FiniteMdp(transition=P, reward=reward, cost=cost, discount=gamma, initial_dist=p0)


def random_policy(num_states: int, num_actions: int, rng: np.random.Generator) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(num_actions), size=num_states))


# ---------------------------------------------------------------------------
# family 1: conjugate identity


def _psi_quad(t):
    return t * t


def check_conjugate_identity(
    mdp: FiniteMdp,
    policy: TabularPolicy,
    rho_un: np.ndarray,
    grid_halfwidth: float = 2.0,
    grid_points: int = 2001,
) -> dict:
    """Numeric min over r of L(pi, r) vs the closed form, psi(t) = t^2.

    The coordinatewise minimizer r*(s,a) = (rho_pi - rho_un) / 2 comes from
    the oracle's own quadratic formula; golden-section search and a dense
    local grid confirm it per cell before it is trusted.
    """
    rho_pi = occupancy_of(mdp, policy).rho
    gap = rho_pi - rho_un
    r_star = gap / 2.0

    # independent per-cell minimization of h(r) = r*(rho_un-rho_pi) + r^2;
    # golden section is trusted to ~1e-8, the grid only to its spacing
    grid_tol = 2.0 * 0.01 / (grid_points - 1)
    worst_formula_err = 0.0
    for d, r_f in zip(gap.ravel(), r_star.ravel()):
        res = minimize_scalar(
            lambda r, dd=d: -r * dd + r * r,
            bounds=(-grid_halfwidth, grid_halfwidth),
            method="bounded",
            options={"xatol": 1e-12},
        )
        grid = np.linspace(r_f - 0.01, r_f + 0.01, grid_points)
        g_best = grid[np.argmin(-grid * d + grid * grid)]
        if abs(g_best - r_f) > grid_tol or abs(res.x - r_f) > 1e-7:
            raise AssertionError(
                f"quadratic minimizer formula disagrees with search: "
                f"formula {r_f!r}, golden {res.x!r}, grid {g_best!r}"
            )
        worst_formula_err = max(worst_formula_err, abs(res.x - r_f))

    numeric_min = exact_L(mdp, policy, r_star, rho_un, _psi_quad)
    analytic = -entropy_of(mdp, policy) - float(np.sum(gap * gap) / 4.0)
    return {
        "residual": abs(numeric_min - analytic),
        "minimizer_check": worst_formula_err,
        "numeric_min": numeric_min,
        "analytic_value": analytic,
    }


# ---------------------------------------------------------------------------
# family 2: q-space reformulation


def _psi_chi2(t):
    return t - t * t


def check_q_reformulation(
    mdp: FiniteMdp,
    q: np.ndarray,
    rho_un: np.ndarray,
    n_perturbations: int = 50,
    rng: np.random.Generator | None = None,
    tol: float = 1e-10,
) -> dict:
    """Value identity L(softmax(Q), r_q) = F(Q) plus a minimality sweep.

    Perturbations are convex mixtures of softmax(Q) with random policies;
    any one of them scoring below the softmax policy (beyond tol) counts as
    a violation.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    qa = np.asarray(q, dtype=np.float64)
    v = soft_value_of_q(qa)
    r_q = qa - mdp.discount * (mdp.transition @ v)
    pi_q = softmax_policy(qa)

    f_value = (
        float(np.sum(rho_un * r_q))
        + float(np.sum(_psi_chi2(r_q)))
        - (1.0 - mdp.discount) * float(mdp.initial_dist @ v)
    )
    l_at_opt = exact_L(mdp, pi_q, r_q, rho_un, _psi_chi2)
    residual = abs(l_at_opt - f_value)

    violations = 0
    worst_gap = np.inf
    for _ in range(n_perturbations):
        eps = rng.uniform(0.05, 0.5)
        other = random_policy(mdp.num_states, mdp.num_actions, rng)
        mixed = TabularPolicy((1.0 - eps) * pi_q.probs + eps * other.probs)
        gap = exact_L(mdp, mixed, r_q, rho_un, _psi_chi2) - l_at_opt
        worst_gap = min(worst_gap, gap)
        if gap < -tol:
            violations += 1
    return {
        "residual": residual,
        "violations": violations,
        "worst_gap": worst_gap,
        "f_value": f_value,
    }


# ---------------------------------------------------------------------------
# family 3: ratio closed form


def check_ratio_closed_form(rho_un: np.ndarray, rho_mix: np.ndarray, n_functions: int = 100, rng=None) -> dict:
    """Closed-form tau against direct division, plus the reweighting
    identity E_un[f] = E_mix[tau * f] on random test functions."""
    rng = np.random.default_rng(0) if rng is None else rng
    rho_un = np.asarray(rho_un, dtype=np.float64)
    rho_mix = np.asarray(rho_mix, dtype=np.float64)
    support = rho_mix > 0.0
    if np.any(rho_un[~support] > 0.0):
        raise ValueError("undesired occupancy leaves the mixture support; tau is undefined there")
    opt = closed_form_optimum(rho_un, rho_mix)
    head_sum_err = float(np.max(np.abs(opt.mu1 + opt.mu2 - 1.0)))
    tau = tau_of(opt, support).tau
    truth = np.zeros_like(rho_un)
    truth[support] = rho_un[support] / rho_mix[support]
    # tau is unbounded where the mixture is thin, so compare per cell
    # relative to its magnitude; otherwise roundoff scales with tau itself
    tau_err = float(np.max(np.abs(tau - truth) / np.maximum(1.0, np.abs(truth))))

    corr_err = 0.0
    for _ in range(n_functions):
        f = rng.normal(size=rho_un.shape)
        corr_err = max(corr_err, abs(float(np.sum(rho_un * f)) - float(np.sum(rho_mix * tau * f))))
    return {
        "residual": max(tau_err, head_sum_err),
        "tau_error": tau_err,
        "head_sum_error": head_sum_err,
        "correction_error": corr_err,
    }


# ---------------------------------------------------------------------------
# batch driver


VERIFICATION_THRESHOLDS = {1: 1e-6, 2: 1e-8, 3: 1e-12}


@dataclass(frozen=True)
class VerificationReport:
    prop: int
    n_trials: int
    max_residual: float
    violations: int
    passed: bool
    details: tuple[dict, ...]

    def summary(self) -> str:
        status = "ok" if self.passed else "FAILED"
        return (
            f"prop {self.prop}: {status} over {self.n_trials} instances, "
            f"max residual {self.max_residual:.3e}, violations {self.violations} "
            f"(threshold {VERIFICATION_THRESHOLDS[self.prop]:g})"
        )


def run_verification(prop: int, trials: int = 20, seed: int = 0) -> VerificationReport:
    """Run one check family over random instances; tight thresholds, no
    tolerance tuning per instance."""
    if prop not in (1, 2, 3):
        raise ValueError(f"prop must be 1, 2 or 3, got {prop!r}")
    rng = np.random.default_rng(seed)
    details = []
    max_residual = 0.0
    violations = 0
    for _ in range(trials):
        S = int(rng.integers(2, 7))
        A = int(rng.integers(2, 5))
        gamma = float(rng.uniform(0.5, 0.97))
        mdp = random_mdp(S, A, gamma, rng)
        rho_un = occupancy_of(mdp, random_policy(S, A, rng)).rho
        if prop == 1:
            out = check_conjugate_identity(mdp, random_policy(S, A, rng), rho_un)
            max_residual = max(max_residual, out["residual"])
        elif prop == 2:
            q = rng.normal(scale=1.0, size=(S, A))
            out = check_q_reformulation(mdp, q, rho_un, n_perturbations=50, rng=rng)
            max_residual = max(max_residual, out["residual"])
            violations += out["violations"]
        else:
            rho_mix = occupancy_of(mdp, random_policy(S, A, rng)).rho
            out = check_ratio_closed_form(rho_un, rho_mix, n_functions=20, rng=rng)
            max_residual = max(max_residual, out["residual"])
        details.append(out)
    passed = max_residual < VERIFICATION_THRESHOLDS[prop] and violations == 0
    return VerificationReport(
        prop=prop,
        n_trials=trials,
        max_residual=max_residual,
        violations=violations,
        passed=passed,
        details=tuple(details),
    )
