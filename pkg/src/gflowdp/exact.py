"""Exact dynamic-programming solvers on enumerated acyclic MDPs.

Everything here is a pure function of an ``EnumeratedMdp``: log path counts,
soft (logsumexp) Bellman values and their softmax policies, state flows and
the forward policy induced by a backward policy, marginals, partition
function, and the two entropy computations (flow-based and brute-force over
trajectories).

Policies are flat edge arrays: a forward policy is ``log_pi[E]`` normalized
within each state's out-edge segment, a backward policy is ``log_q[E]``
normalized within each state's in-edge segment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .mdp import EnumeratedMdp
from .numerics import NEG_INF, entropy_from_log_probs, logsumexp


class ExactError(Exception):
    pass


class NonFiniteTarget(ExactError):
    """A terminal state has a non-finite log target."""


class ZeroFlow(ExactError):
    """A non-terminal state has no path to a positive-target terminal."""


class TrajectoryBudgetExceeded(ExactError):
    """Brute-force enumeration hit its trajectory budget."""


def count_paths(mdp: EnumeratedMdp) -> np.ndarray:
    """Log number of distinct trajectories from the initial state(s).

    One topological pass: l(initial)=0 and l(s') = logsumexp over parents of
    l(s).  Equivalently, the zero-reward soft value function of the inverted
    MDP.  Multi-initial MDPs (inverted ones) are allowed; every initial-role
    state contributes count 1.
    """
    l = np.full(mdp.n_states, NEG_INF)
    for s0 in mdp.initials:
        l[s0] = 0.0
    for s in range(mdp.n_states):
        ids = mdp.in_edge_ids(s)
        if len(ids) == 0:
            continue
        incoming = logsumexp(l[mdp.edge_src[ids]])
        if s in mdp.initials:
            incoming = logsumexp([incoming, l[s]])
        l[s] = incoming
    return l


def soft_value_iteration(
    mdp: EnumeratedMdp,
    step_rewards: np.ndarray | None = None,
    terminal_rewards: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Solve the undiscounted soft Bellman equation in one backward pass.

    ``step_rewards`` is per edge (zeros if None), ``terminal_rewards`` per
    state (read at terminal states; zeros if None).  Returns per-state values
    V, per-edge values Q, and the softmax policy log_pi = Q - V.  Acyclicity
    makes the solution unique.
    """
    r_step = np.zeros(mdp.n_edges) if step_rewards is None else np.asarray(step_rewards, dtype=float)
    r_term = np.zeros(mdp.n_states) if terminal_rewards is None else np.asarray(terminal_rewards, dtype=float)

    v = np.zeros(mdp.n_states)
    q = np.zeros(mdp.n_edges)
    log_pi = np.zeros(mdp.n_edges)
    for s in range(mdp.n_states - 1, -1, -1):
        if mdp.terminal[s]:
            v[s] = r_term[s]
            continue
        sl = mdp.out_slice(s)
        q[sl] = r_step[sl] + v[mdp.edge_dst[sl]]
        v[s] = logsumexp(q[sl])
        log_pi[sl] = q[sl] - v[s]
    return v, q, log_pi


def gsql_rewards(mdp: EnumeratedMdp, l: np.ndarray) -> np.ndarray:
    """Terminal rewards log p~(t) - l(t) that make soft values sample the target."""
    if not np.isfinite(mdp.log_target[mdp.terminal]).all():
        raise NonFiniteTarget("every terminal state needs a finite log target")
    r_term = np.zeros(mdp.n_states)
    t = mdp.terminal
    r_term[t] = mdp.log_target[t] - l[t]
    return r_term


def gsql_solution(
    mdp: EnumeratedMdp, l: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Soft values, per-edge Q, and policy under zero step rewards and
    terminal reward log p~(t) - l(t)."""
    return soft_value_iteration(mdp, terminal_rewards=gsql_rewards(mdp, l))


def gsql_policy(mdp: EnumeratedMdp, l: np.ndarray) -> np.ndarray:
    """Forward policy whose terminal distribution is exactly p~/Z."""
    return gsql_solution(mdp, l)[2]


def log_partition(mdp: EnumeratedMdp, l: np.ndarray) -> tuple[float, float]:
    """(logsumexp of terminal log-targets, initial soft value).

    The two coincide: the initial-state value under the count-corrected
    terminal reward is the log partition function.
    """
    direct = logsumexp(mdp.log_target[mdp.terminal])
    v, _, _ = gsql_solution(mdp, l)
    return direct, float(v[mdp.initial])


def marginals(mdp: EnumeratedMdp, log_pi: np.ndarray) -> np.ndarray:
    """Probability of passing through each state under a forward policy."""
    mu = np.zeros(mdp.n_states)
    mu[mdp.initial] = 1.0
    pi = np.exp(log_pi)
    for s in range(mdp.n_states):
        ids = mdp.in_edge_ids(s)
        if len(ids):
            mu[s] += float((mu[mdp.edge_src[ids]] * pi[ids]).sum())
    return mu


def terminal_distribution(mdp: EnumeratedMdp, log_pi: np.ndarray) -> np.ndarray:
    """Marginal restricted to terminal states (zero elsewhere)."""
    mu = marginals(mdp, log_pi)
    out = np.zeros_like(mu)
    out[mdp.terminal] = mu[mdp.terminal]
    return out


def target_distribution(mdp: EnumeratedMdp) -> np.ndarray:
    """Normalized target p over states (zero off terminal states)."""
    p = np.zeros(mdp.n_states)
    t = mdp.terminal
    p[t] = np.exp(mdp.log_target[t] - logsumexp(mdp.log_target[t]))
    return p


def backward_maxent(mdp: EnumeratedMdp, l: np.ndarray) -> np.ndarray:
    """Backward policy log q(s,a|s') = l(s) - l(s').

    Normalization per parent set holds by the path-count recursion; this is
    the unique backward whose induced forward policy maximizes trajectory
    entropy, and it is uniform over the backward trajectories of each
    terminal state.
    """
    return l[mdp.edge_src] - l[mdp.edge_dst]


def backward_uniform(mdp: EnumeratedMdp) -> np.ndarray:
    """Backward policy uniform over each state's parent pairs."""
    log_q = np.zeros(mdp.n_edges)
    for s in range(mdp.n_states):
        ids = mdp.in_edge_ids(s)
        if len(ids):
            log_q[ids] = -np.log(len(ids))
    return log_q


def forward_from_backward(
    mdp: EnumeratedMdp, log_q: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """State flows and forward policy determined by (backward policy, target).

    Reverse pass: logF(t) = log target, logF(s) = logsumexp over children of
    log q + logF(child); then log pi = log q + logF(child) - logF(s), which
    satisfies detailed balance edge by edge.  States that only reach
    zero-target terminals get -inf flow; the policy renormalizes over
    finite-flow children and raises ZeroFlow if none remains.
    """
    if np.isnan(mdp.log_target[mdp.terminal]).any():
        raise NonFiniteTarget("terminal log targets must not be NaN")
    log_f = np.full(mdp.n_states, NEG_INF)
    log_pi = np.full(mdp.n_edges, NEG_INF)
    for s in range(mdp.n_states - 1, -1, -1):
        if mdp.terminal[s]:
            log_f[s] = mdp.log_target[s]
            continue
        sl = mdp.out_slice(s)
        terms = log_q[sl] + log_f[mdp.edge_dst[sl]]
        log_f[s] = logsumexp(terms)
        if log_f[s] == NEG_INF:
            raise ZeroFlow(f"state {s} has no path to a positive-target terminal")
        log_pi[sl] = terms - log_f[s]
    return log_f, log_pi


def flow_entropy(
    mdp: EnumeratedMdp, log_pi: np.ndarray, mu: np.ndarray | None = None
) -> float:
    """Expected per-state policy entropy weighted by marginals."""
    if mu is None:
        mu = marginals(mdp, log_pi)
    total = 0.0
    for s in range(mdp.n_states):
        if mdp.terminal[s] or mu[s] == 0.0:
            continue
        total += mu[s] * entropy_from_log_probs(log_pi[mdp.out_slice(s)])
    return float(total)


def iter_trajectories(
    mdp: EnumeratedMdp, budget: int = 1_000_000
) -> Iterator[list[int]]:
    """Yield every trajectory (as a list of edge ids) from the initial state."""
    count = 0
    stack: list[int] = []

    def walk(s: int) -> Iterator[list[int]]:
        nonlocal count
        if mdp.terminal[s]:
            count += 1
            if count > budget:
                raise TrajectoryBudgetExceeded(f"more than {budget} trajectories")
            yield list(stack)
            return
        for e in range(int(mdp.out_offset[s]), int(mdp.out_offset[s + 1])):
            stack.append(e)
            yield from walk(int(mdp.edge_dst[e]))
            stack.pop()

    yield from walk(mdp.initial)


def trajectory_entropy_bruteforce(
    mdp: EnumeratedMdp, log_pi: np.ndarray, budget: int = 1_000_000
) -> float:
    """Shannon entropy of the trajectory distribution by full enumeration."""
    total = 0.0
    for edges in iter_trajectories(mdp, budget):
        lp = float(log_pi[edges].sum()) if edges else 0.0
        p = np.exp(lp)
        if p > 0.0:
            total -= p * lp
    return total


def max_entropy_bound(mdp: EnumeratedMdp, l: np.ndarray) -> float:
    """Largest trajectory entropy attainable while sampling the target:
    H(p) + sum_t p(t) l(t)."""
    t = mdp.terminal
    log_p = mdp.log_target[t] - logsumexp(mdp.log_target[t])
    p = np.exp(log_p)
    return float(entropy_from_log_probs(log_p) + (p * l[t]).sum())


@dataclass(frozen=True)
class ExactTables:
    """All closed-form per-state quantities for one MDP.

    l: log path counts; V: soft values under the count-corrected terminal
    reward; mu: marginals of the induced policy; logF: state flows of the
    maximum-entropy flow solution; logZ: log partition function.
    """

    l: np.ndarray
    V: np.ndarray
    mu: np.ndarray
    logF: np.ndarray
    logZ: float

    def to_json(self) -> str:
        doc = {
            "logZ": float(self.logZ),
            "states": {
                str(s): {
                    "l": float(self.l[s]),
                    "V": float(self.V[s]),
                    "mu": float(self.mu[s]),
                    "logF": float(self.logF[s]),
                }
                for s in range(len(self.l))
            },
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExactTables":
        doc = json.loads(text)
        n = len(doc["states"])
        l = np.zeros(n)
        v = np.zeros(n)
        mu = np.zeros(n)
        log_f = np.zeros(n)
        for key, row in doc["states"].items():
            s = int(key)
            l[s] = row["l"]
            v[s] = row["V"]
            mu[s] = row["mu"]
            log_f[s] = row["logF"]
        return cls(l=l, V=v, mu=mu, logF=log_f, logZ=float(doc["logZ"]))


def exact_tables(mdp: EnumeratedMdp) -> ExactTables:
    """Solve every table at once for the maximum-entropy flow solution."""
    l = count_paths(mdp)
    v, _, log_pi = gsql_solution(mdp, l)
    mu = marginals(mdp, log_pi)
    log_f, _ = forward_from_backward(mdp, backward_maxent(mdp, l))
    log_z = logsumexp(mdp.log_target[mdp.terminal])
    return ExactTables(l=l, V=v, mu=mu, logF=log_f, logZ=float(log_z))
