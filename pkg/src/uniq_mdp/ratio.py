"""Occupancy-ratio estimation with a two-head discriminator.

Head one scores membership in the undesired occupancy, head two in the
mixture. For weight tables w_un, w_mix the (concave) objective is

    g(mu1, mu2) = sum w_mix * (log mu2 + log(1 - mu1))
                + sum w_un  * (log mu1 + log(1 - mu2)),

maximized per (s, a) at mu1* = w_un / (w_un + w_mix), mu2* = 1 - mu1*, so
the ratio w_un / w_mix is recovered as tau = mu1* / mu2* without ever
dividing by a density estimate of the mixture alone.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from uniq_mdp import kernels
from uniq_mdp.data import TrajectoryDataset, empirical_occupancy
from uniq_mdp.mdp import table_from_json, table_to_json

__all__ = [
    "RatioTable",
    "ExactRatio",
    "RatioEstimate",
    "CoverageWarning",
    "g_objective",
    "g_gradient",
    "fit_ratio_weights",
    "fit_ratio",
    "closed_form_optimum",
    "tau_of",
    "coverage_violation_mass",
    "warn_on_coverage_gap",
]

_CLIP_EPS = 1e-6


class CoverageWarning(UserWarning):
    """Undesired mass sits on state-actions the mixture never visits."""


class RatioTable:
    """Sigmoid-parameterized discriminator heads over (s, a).

    mu1/mu2 are reported clipped to [clip_eps, 1 - clip_eps]; the clip only
    matters for cells pushed to a boundary by one-sided data. Mutated by
    fitting, frozen afterwards.
    """

    def __init__(self, logits1: np.ndarray, logits2: np.ndarray, clip_eps: float = _CLIP_EPS):
        l1 = np.asarray(logits1, dtype=np.float64)
        l2 = np.asarray(logits2, dtype=np.float64)
        if l1.shape != l2.shape or l1.ndim != 2:
            raise ValueError("logit tables must be two matching (S, A) arrays")
        if not (np.all(np.isfinite(l1)) and np.all(np.isfinite(l2))):
            raise ValueError("logits must be finite")
        if not (0.0 < clip_eps < 0.5):
            raise ValueError(f"clip_eps must be in (0, 0.5), got {clip_eps!r}")
        self.logits1 = l1
        self.logits2 = l2
        self.clip_eps = float(clip_eps)
        self.trace: np.ndarray | None = None

    @classmethod
    def zeros(cls, num_states: int, num_actions: int, clip_eps: float = _CLIP_EPS) -> "RatioTable":
        shape = (num_states, num_actions)
        return cls(np.zeros(shape), np.zeros(shape), clip_eps)

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits1.shape

    def _clipped(self, logits: np.ndarray) -> np.ndarray:
        mu = 1.0 / (1.0 + np.exp(-np.clip(logits, -500, 500)))
        return np.clip(mu, self.clip_eps, 1.0 - self.clip_eps)

    @property
    def mu1(self) -> np.ndarray:
        return self._clipped(self.logits1)

    @property
    def mu2(self) -> np.ndarray:
        return self._clipped(self.logits2)

    def freeze(self) -> "RatioTable":
        for arr in (self.logits1, self.logits2):
            arr.setflags(write=False)
        return self

    def to_json(self) -> str:
        return table_to_json("ratio", {"logits1": self.logits1, "logits2": self.logits2})

    @classmethod
    def from_json(cls, text: str) -> "RatioTable":
        tables = table_from_json(text, "ratio", ("logits1", "logits2"))
        return cls(tables["logits1"], tables["logits2"])


@dataclass(frozen=True)
class ExactRatio:
    """Closed-form discriminator heads, kept unclipped so the identities
    mu1 + mu2 = 1 and tau = w_un / w_mix hold exactly."""

    mu1: np.ndarray
    mu2: np.ndarray


@dataclass(frozen=True)
class RatioEstimate:
    """tau[s, a] = estimated d rho_un / d rho_mix, zero off the mixture
    support (those cells never enter a mixture expectation)."""

    tau: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        support = np.asarray(self.support, dtype=bool)
        if tau.shape != support.shape:
            raise ValueError("tau and support shapes differ")
        if not np.all(np.isfinite(tau)) or np.any(tau < 0):
            raise ValueError("tau must be finite and non-negative")
        if np.any(tau[~support] != 0.0):
            raise ValueError("tau must be exactly zero off the support")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "support", support)


def g_objective(ratio, w_un: np.ndarray, w_mix: np.ndarray) -> float:
    """Two-head objective at the given weight tables (works for RatioTable
    and ExactRatio; values at clipped boundaries stay finite)."""
    eps = getattr(ratio, "clip_eps", _CLIP_EPS)
    m1 = np.clip(ratio.mu1, eps, 1.0 - eps)
    m2 = np.clip(ratio.mu2, eps, 1.0 - eps)
    return float(
        np.sum(w_mix * (np.log(m2) + np.log1p(-m1)))
        + np.sum(w_un * (np.log(m1) + np.log1p(-m2)))
    )


def g_gradient(ratio: RatioTable, w_un: np.ndarray, w_mix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient with respect to the logits.

    Uses the unclipped sigmoids; identical to the finite-difference gradient
    of g_objective wherever the clip is inactive (|logits| < logit(1-eps)).
    """
    m1 = 1.0 / (1.0 + np.exp(-ratio.logits1))
    m2 = 1.0 / (1.0 + np.exp(-ratio.logits2))
    return w_un * (1.0 - m1) - w_mix * m1, w_mix * (1.0 - m2) - w_un * m2


def fit_ratio_weights(
    w_un: np.ndarray,
    w_mix: np.ndarray,
    steps: int = 50_000,
    lr: float = 1e-2,
    clip_eps: float = _CLIP_EPS,
    checkpoint_every: int = 100,
    backend=None,
) -> RatioTable:
    """Gradient ascent from zero logits on exact weight tables. The
    objective is concave, so the checkpoint trace is non-decreasing up to
    clip effects; the trace lands on the returned table's .trace."""
    w_un = np.asarray(w_un, dtype=np.float64)
    w_mix = np.asarray(w_mix, dtype=np.float64)
    if w_un.shape != w_mix.shape or w_un.ndim != 2:
        raise ValueError("weight tables must be two matching (S, A) arrays")
    if np.any(w_un < 0) or np.any(w_mix < 0):
        raise ValueError("weights must be non-negative")
    shape = w_un.shape
    l1, l2, trace = kernels.ratio_ascent(
        np.zeros(shape), np.zeros(shape), w_un, w_mix,
        steps=steps, lr=lr, clip_eps=clip_eps, checkpoint_every=checkpoint_every,
        backend=backend,
    )
    table = RatioTable(l1.reshape(shape), l2.reshape(shape), clip_eps)
    table.trace = trace
    return table.freeze()


def fit_ratio(
    dataset_un: TrajectoryDataset,
    dataset_mix: TrajectoryDataset,
    steps: int = 50_000,
    lr: float = 1e-2,
    weighting: str = "discounted",
    clip_eps: float = _CLIP_EPS,
    checkpoint_every: int = 100,
) -> RatioTable:
    """Fit the discriminator on empirical occupancies of the two datasets.

    Full-batch and deterministic: the tables below are fixed once the
    datasets are, so there is no sampling anywhere in the fit.
    """
    if (dataset_un.num_states, dataset_un.num_actions) != (dataset_mix.num_states, dataset_mix.num_actions):
        raise ValueError("datasets live in different state-action spaces")
    w_un = empirical_occupancy(dataset_un, weighting)
    w_mix = empirical_occupancy(dataset_mix, weighting)
    return fit_ratio_weights(
        w_un, w_mix, steps=steps, lr=lr, clip_eps=clip_eps, checkpoint_every=checkpoint_every
    )


def closed_form_optimum(w_un: np.ndarray, w_mix: np.ndarray) -> ExactRatio:
    """Per-cell maximizer of g: mu1* = w_un / (w_un + w_mix), mu2* = 1 - mu1*.

    Cells with no mass in either table get the neutral 1/2 (any value is a
    maximizer there; 1/2 is what a symmetric fit converges to)."""
    w_un = np.asarray(w_un, dtype=np.float64)
    w_mix = np.asarray(w_mix, dtype=np.float64)
    total = w_un + w_mix
    mu1 = np.where(total > 0.0, w_un / np.where(total > 0.0, total, 1.0), 0.5)
    return ExactRatio(mu1=mu1, mu2=1.0 - mu1)


def tau_of(ratio, support: np.ndarray) -> RatioEstimate:
    """Ratio estimate tau = mu1 / mu2 on the given mixture support mask."""
    support = np.asarray(support, dtype=bool)
    mu1 = np.asarray(ratio.mu1, dtype=np.float64)
    mu2 = np.asarray(ratio.mu2, dtype=np.float64)
    if np.any(mu2[support] <= 0.0):
        raise ValueError("mu2 vanishes on the support; cannot form the ratio")
    tau = np.zeros_like(mu1)
    tau[support] = mu1[support] / mu2[support]
    return RatioEstimate(tau=tau, support=support)


def coverage_violation_mass(w_un: np.ndarray, support: np.ndarray) -> float:
    """Undesired mass outside the mixture support. Positive mass means the
    mixture cannot represent part of the undesired behaviour; downstream
    corrections silently drop it, so callers warn."""
    w_un = np.asarray(w_un, dtype=np.float64)
    return float(w_un[~np.asarray(support, dtype=bool)].sum())


def warn_on_coverage_gap(w_un: np.ndarray, support: np.ndarray) -> float:
    mass = coverage_violation_mass(w_un, support)
    if mass > 0.0:
        warnings.warn(
            f"undesired occupancy places mass {mass:.3g} outside the mixture "
            "support; that mass is invisible to the mixture-based correction",
            CoverageWarning,
            stacklevel=2,
        )
    return mass
