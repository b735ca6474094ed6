"""Evaluation quantities: exact KLs, correlation, mode counts, count error."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import exact
from .mdp import EnumeratedMdp


class MetricsError(Exception):
    pass


class SupportMismatch(MetricsError):
    """The policy assigns zero mass where the target is positive."""


class DegenerateVariance(MetricsError):
    """Correlation is undefined for a constant sample."""


def kl_terminal(mdp: EnumeratedMdp, log_pi: np.ndarray, direction: str = "forward") -> float:
    """Exact KL between the terminal marginal mu_T and the normalized target.

    ``forward`` is KL(mu_T || p), ``reverse`` is KL(p || mu_T); zero terms
    follow the 0 * log(0/.) = 0 convention.
    """
    mu = exact.terminal_distribution(mdp, log_pi)[mdp.terminal]
    p = exact.target_distribution(mdp)[mdp.terminal]
    if direction == "forward":
        mask = mu > 0.0
        kl = float((mu[mask] * (np.log(mu[mask]) - np.log(p[mask]))).sum())
    elif direction == "reverse":
        mask = p > 0.0
        if (mu[mask] == 0.0).any():
            raise SupportMismatch("policy puts zero mass on a positive-target terminal")
        kl = float((p[mask] * (np.log(p[mask]) - np.log(mu[mask]))).sum())
    else:
        raise ValueError("direction must be 'forward' or 'reverse'")
    # rounding can push an exact zero a hair below it
    return 0.0 if -1e-9 < kl < 0.0 else kl


def l1_terminal(mdp: EnumeratedMdp, log_pi: np.ndarray) -> float:
    mu = exact.terminal_distribution(mdp, log_pi)[mdp.terminal]
    p = exact.target_distribution(mdp)[mdp.terminal]
    return float(np.abs(mu - p).sum())


def pearson_logprob(
    samples,
    policy_terminal_logprob: np.ndarray,
    log_target: np.ndarray,
) -> float:
    """Pearson r between exact policy log-probabilities and log targets,
    over a multiset of sampled terminal state ids."""
    idx = np.asarray(samples, dtype=np.int64)
    if len(np.unique(idx)) < 2:
        raise DegenerateVariance("need at least two distinct samples")
    x = np.asarray(policy_terminal_logprob, dtype=float)[idx]
    y = np.asarray(log_target, dtype=float)[idx]
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc * xc).sum() * (yc * yc).sum())
    if denom == 0.0:
        raise DegenerateVariance("zero variance in log-probabilities or targets")
    return float((xc * yc).sum() / denom)


def mode_count(visited_terminals, log_target: np.ndarray, thresholds) -> dict[float, int]:
    """Distinct visited terminals with target at or above each threshold."""
    distinct = set(int(t) for t in visited_terminals)
    out = {}
    for theta in thresholds:
        log_theta = np.log(theta)
        out[float(theta)] = sum(1 for t in distinct if log_target[t] >= log_theta)
    return out


def n_mse(l_hat: np.ndarray, l_exact: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Mean squared error between log path-count tables.

    Uniform over states unless ``weights`` (e.g. visit counts) are given.
    """
    d = np.asarray(l_hat, dtype=float) - np.asarray(l_exact, dtype=float)
    if weights is None:
        return float((d * d).mean())
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must have positive mass")
    return float((w * d * d).sum() / total)


@dataclass(frozen=True)
class EvalReport:
    kl_forward: float
    kl_reverse: float
    l1: float
    entropy: float
    max_entropy_bound: float
    pearson: float | None = None
    n_mse: float | None = None
    modes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        doc = {
            "kl_forward": self.kl_forward,
            "kl_reverse": self.kl_reverse,
            "l1": self.l1,
            "entropy": self.entropy,
            "max_entropy_bound": self.max_entropy_bound,
            "pearson": self.pearson,
            "n_mse": self.n_mse,
            "modes": {str(k): v for k, v in self.modes.items()},
        }
        return json.dumps(doc, indent=2)


def evaluate_policy(
    mdp: EnumeratedMdp,
    log_pi: np.ndarray,
    l_hat: np.ndarray | None = None,
    l_exact: np.ndarray | None = None,
    thresholds=(1.0,),
    visited=None,
    pearson_samples=None,
) -> EvalReport:
    """Assemble the standard report for one policy on an enumerable MDP."""
    if l_exact is None:
        l_exact = exact.count_paths(mdp)
    mu = exact.marginals(mdp, log_pi)
    pearson = None
    if pearson_samples is not None:
        with np.errstate(divide="ignore"):
            log_mu = np.where(mu > 0, np.log(np.where(mu > 0, mu, 1.0)), -np.inf)
        pearson = pearson_logprob(pearson_samples, log_mu, mdp.log_target)
    if visited is None:
        visited = [int(t) for t in mdp.terminal_ids]
    return EvalReport(
        kl_forward=kl_terminal(mdp, log_pi, "forward"),
        kl_reverse=kl_terminal(mdp, log_pi, "reverse"),
        l1=l1_terminal(mdp, log_pi),
        entropy=exact.flow_entropy(mdp, log_pi, mu),
        max_entropy_bound=exact.max_entropy_bound(mdp, l_exact),
        pearson=pearson,
        n_mse=None if l_hat is None else n_mse(l_hat, l_exact),
        modes=mode_count(visited, mdp.log_target, thresholds),
    )
