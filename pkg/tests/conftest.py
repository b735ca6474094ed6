"""Shared fixtures and test-local brute-force oracles.

The oracles here deliberately avoid the library's DP code paths: path counts
come from exhaustive recursion with exact integers, probabilities from
explicit products over enumerated trajectories.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from gflowdp import envs, mdp
from gflowdp.numerics import logsumexp

# ---------------------------------------------------------------------------
# oracles


def oracle_path_counts(m: mdp.EnumeratedMdp) -> list[int]:
    """Count paths from the initial state by walking every one of them."""
    counts = [0] * m.n_states

    def walk(s: int) -> None:
        counts[s] += 1
        for _, c in m.children(s):
            walk(c)

    walk(m.initial)
    return counts


def oracle_trajectories(m: mdp.EnumeratedMdp):
    """All (states, edges) trajectories from the initial state, by recursion."""
    out = []

    def walk(s, states, edges):
        if m.terminal[s]:
            out.append((tuple(states), tuple(edges)))
            return
        for e in range(int(m.out_offset[s]), int(m.out_offset[s + 1])):
            walk(int(m.edge_dst[e]), states + [int(m.edge_dst[e])], edges + [e])

    walk(m.initial, [m.initial], [])
    return out


def oracle_trajectory_probs(m: mdp.EnumeratedMdp, log_pi: np.ndarray):
    """(states, edges, probability) per trajectory, probabilities by product."""
    out = []
    for states, edges in oracle_trajectories(m):
        p = 1.0
        for e in edges:
            p *= math.exp(log_pi[e])
        out.append((states, edges, p))
    return out


def oracle_terminal_probs(m: mdp.EnumeratedMdp, log_pi: np.ndarray) -> np.ndarray:
    probs = np.zeros(m.n_states)
    for states, _, p in oracle_trajectory_probs(m, log_pi):
        probs[states[-1]] += p
    return probs


def random_log_pi(m: mdp.EnumeratedMdp, rng: np.random.Generator) -> np.ndarray:
    """A random valid forward policy as a per-edge log-prob array."""
    out = np.zeros(m.n_edges)
    for s in range(m.n_states):
        sl = m.out_slice(s)
        if sl.stop > sl.start:
            logits = rng.normal(0.0, 1.0, sl.stop - sl.start)
            out[sl] = logits - logsumexp(logits)
    return out


# ---------------------------------------------------------------------------
# fixture MDPs


TWO_TERMINAL_TEXT = f"""
# two terminals with different path counts: n(3)=2, n(4)=1
initial 0
0 0 1
0 1 2
1 0 3
2 0 3
2 1 4
terminal 3 {math.log(0.7)!r}
terminal 4 {math.log(0.2)!r}
"""


@pytest.fixture(scope="session")
def fig_diamond() -> mdp.EnumeratedMdp:
    """The 4-state diamond with a cross edge and one terminal (3 paths)."""
    return mdp.enumerate_mdp(envs.SimpleDagEnv())


@pytest.fixture(scope="session")
def two_terminal() -> mdp.EnumeratedMdp:
    return mdp.enumerate_mdp(mdp.parse_dag_text(TWO_TERMINAL_TEXT))


@pytest.fixture(scope="session")
def grid33() -> mdp.EnumeratedMdp:
    return mdp.enumerate_mdp(envs.HypergridEnv(2, 3))


@pytest.fixture(scope="session")
def grid44() -> mdp.EnumeratedMdp:
    return mdp.enumerate_mdp(envs.HypergridEnv(2, 4))


@pytest.fixture(scope="session")
def chain() -> mdp.EnumeratedMdp:
    text = "initial 0\n0 0 1\n1 0 2\n2 0 3\nterminal 3 0.0\n"
    return mdp.enumerate_mdp(mdp.parse_dag_text(text))


@pytest.fixture(scope="session")
def single_state() -> mdp.EnumeratedMdp:
    return mdp.enumerate_mdp(mdp.parse_dag_text("initial 0\nterminal 0 0.5\n"))


@pytest.fixture(scope="session")
def tree_env_mdp() -> mdp.EnumeratedMdp:
    """Unlabeled trees up to 5 nodes; maxent backward is non-uniform here."""
    return mdp.enumerate_mdp(envs.TreeBuildEnv(1, 5))


@pytest.fixture(scope="session")
def bitvec3() -> mdp.EnumeratedMdp:
    return mdp.enumerate_mdp(envs.BitVectorEnv(3, ones_reward=0.4))


@pytest.fixture(scope="session")
def mdp_zoo(fig_diamond, two_terminal, grid33, grid44, chain, single_state, tree_env_mdp, bitvec3):
    """Small MDPs with varied structure, all cheap to enumerate exhaustively."""
    words_e = mdp.enumerate_mdp(envs.WordsEnv(2, 4, "append-either-side"))
    words_r = mdp.enumerate_mdp(envs.WordsEnv(2, 4, "append-right"))
    grid_d3 = mdp.enumerate_mdp(envs.HypergridEnv(3, 3))
    return [
        fig_diamond,
        two_terminal,
        grid33,
        grid44,
        grid_d3,
        chain,
        single_state,
        tree_env_mdp,
        bitvec3,
        words_e,
        words_r,
    ]


def find_state(m: mdp.EnumeratedMdp, encoding: bytes) -> int:
    return m.states.index(encoding)
