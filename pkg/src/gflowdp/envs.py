"""Concrete environments, with closed-form path counts where they exist.

Every env speaks the byte-encoded state protocol from ``gflowdp.mdp``.  The
closed forms (``words_n``, ``tree_n``, ``bitvec_n``, the multinomial corner
counts of the hypergrid) double as independent oracles for the generic
path-counting DP.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# four-state diamond with a cross edge: exactly three distinct trajectories


class SimpleDagEnv:
    """Fixed 4-state DAG {s0, s1, s2, sT} with edges s0->s1, s0->s2, s2->s1,
    s1->sT, s2->sT.  There are exactly three trajectories from s0 to sT."""

    _CHILDREN = {
        b"s0": (b"s1", b"s2"),
        b"s1": (b"sT",),
        b"s2": (b"s1", b"sT"),
        b"sT": (),
    }
    _PARENTS = {
        b"s0": (),
        b"s1": ((b"s0", 0), (b"s2", 0)),
        b"s2": ((b"s0", 1),),
        b"sT": ((b"s1", 0), (b"s2", 1)),
    }

    def __init__(self, target: float = 1.0):
        if target <= 0:
            raise ValueError("target must be positive")
        self._log_target = math.log(target)

    def initial_state(self) -> bytes:
        return b"s0"

    def n_actions(self, state: bytes) -> int:
        return len(self._CHILDREN[state])

    def step(self, state: bytes, action: int) -> bytes:
        return self._CHILDREN[state][action]

    def is_terminal(self, state: bytes) -> bool:
        return state == b"sT"

    def log_target(self, state: bytes) -> float:
        return self._log_target if state == b"sT" else NEG_INF

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        return list(self._PARENTS[state])


# ---------------------------------------------------------------------------
# hypergrid


def hypergrid_target(coords: Sequence[int], side: int) -> float:
    """Unnormalized target over lattice cells.

    With s_i the ratio of coordinate i to the maximum position side-1:
    0.1 + 0.5*prod(I[0.25 < |s_i-0.5|]) + 2*prod(I[0.3 < |s_i-0.5| < 0.4]).
    Indicator boundaries are strict.
    """
    s = np.asarray(coords, dtype=float) / (side - 1)
    d = np.abs(s - 0.5)
    first = float(np.all(d > 0.25))
    second = float(np.all((d > 0.3) & (d < 0.4)))
    return 0.1 + 0.5 * first + 2.0 * second


class HypergridEnv:
    """d-dimensional grid walk from the origin.

    Each action increments one coordinate that is below side-1; one extra
    stop action moves to a distinct terminal copy of the cell, where the
    target is defined.  State encoding: bytes([done, x_0, ..., x_{d-1}]).
    """

    def __init__(self, dims: int, side: int):
        if dims < 1:
            raise ValueError("dims must be >= 1")
        if not 2 <= side <= 255:
            raise ValueError("side must be in [2, 255]")
        self.dims = dims
        self.side = side

    def initial_state(self) -> bytes:
        return bytes(1 + self.dims)

    def _moves(self, coords: bytes) -> list[int]:
        return [i for i in range(self.dims) if coords[i] < self.side - 1]

    def n_actions(self, state: bytes) -> int:
        if state[0]:
            return 0
        return len(self._moves(state[1:])) + 1

    def step(self, state: bytes, action: int) -> bytes:
        coords = state[1:]
        moves = self._moves(coords)
        if action < len(moves):
            i = moves[action]
            out = bytearray(state)
            out[1 + i] += 1
            return bytes(out)
        if action == len(moves):
            return bytes([1]) + coords
        raise IndexError(f"action {action} out of range")

    def is_terminal(self, state: bytes) -> bool:
        return bool(state[0])

    def log_target(self, state: bytes) -> float:
        if not state[0]:
            return NEG_INF
        return math.log(hypergrid_target(list(state[1:]), self.side))

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        coords = state[1:]
        if state[0]:
            lattice = bytes([0]) + coords
            return [(lattice, len(self._moves(coords)))]
        out = []
        for i in range(self.dims):
            if coords[i] > 0:
                prev = bytearray(coords)
                prev[i] -= 1
                prev_moves = self._moves(bytes(prev))
                out.append((bytes([0]) + bytes(prev), prev_moves.index(i)))
        return out


# ---------------------------------------------------------------------------
# words


def words_n(length: int, mode: str) -> int:
    """Closed-form trajectory count per terminal word."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if mode == "append-right":
        return 1
    if mode == "append-either-side":
        return 2 ** (length - 1)
    raise ValueError(f"unknown mode {mode!r}")


class WordsEnv:
    """Builds words of a fixed length letter by letter.

    In ``append-right`` mode each word has a unique build order.  In
    ``append-either-side`` mode letters may be appended or prepended (from
    the empty word the two coincide, so only append actions exist there),
    giving 2**(N-1) build orders per word.  Letters are raw byte values
    0..alphabet_size-1; the target is uniform over terminal words.
    """

    MODES = ("append-right", "append-either-side")

    def __init__(self, alphabet_size: int, length: int, mode: str = "append-right"):
        if alphabet_size < 1 or alphabet_size > 255:
            raise ValueError("alphabet_size must be in [1, 255]")
        if length < 1:
            raise ValueError("length must be >= 1")
        if mode not in self.MODES:
            raise ValueError(f"mode must be one of {self.MODES}")
        self.alphabet_size = alphabet_size
        self.length = length
        self.mode = mode

    def initial_state(self) -> bytes:
        return b""

    def n_actions(self, state: bytes) -> int:
        if len(state) >= self.length:
            return 0
        if self.mode == "append-right" or len(state) == 0:
            return self.alphabet_size
        return 2 * self.alphabet_size

    def step(self, state: bytes, action: int) -> bytes:
        if action < self.alphabet_size:
            return state + bytes([action])
        return bytes([action - self.alphabet_size]) + state

    def is_terminal(self, state: bytes) -> bool:
        return len(state) == self.length

    def log_target(self, state: bytes) -> float:
        return 0.0 if self.is_terminal(state) else NEG_INF

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        if len(state) == 0:
            return []
        if len(state) == 1 or self.mode == "append-right":
            return [(state[:-1], state[-1])]
        return [
            (state[:-1], state[-1]),
            (state[1:], self.alphabet_size + state[0]),
        ]


# ---------------------------------------------------------------------------
# bit vectors


def bitvec_n(state: bytes) -> int:
    """k! trajectories for a state with k entries set (non-placeholder)."""
    k = sum(1 for b in state if b != ord("*"))
    return math.factorial(k)


class BitVectorEnv:
    """Fills a vector of placeholders with 0/1 values in any order.

    A state with k set entries has exactly k parents and k! build orders, so
    the maximum-entropy backward coincides with the uniform backward
    everywhere.  States are byte strings over ``*01``; the terminal target is
    exp(ones_reward * number_of_ones).
    """

    def __init__(self, length: int, ones_reward: float = 0.0):
        if length < 1:
            raise ValueError("length must be >= 1")
        self.length = length
        self.ones_reward = float(ones_reward)

    def initial_state(self) -> bytes:
        return b"*" * self.length

    def _unset(self, state: bytes) -> list[int]:
        return [i for i, b in enumerate(state) if b == ord("*")]

    def n_actions(self, state: bytes) -> int:
        return 2 * len(self._unset(state))

    def step(self, state: bytes, action: int) -> bytes:
        rank, value = divmod(action, 2)
        i = self._unset(state)[rank]
        out = bytearray(state)
        out[i] = ord("1") if value else ord("0")
        return bytes(out)

    def is_terminal(self, state: bytes) -> bool:
        return b"*" not in state

    def log_target(self, state: bytes) -> float:
        if not self.is_terminal(state):
            return NEG_INF
        return self.ones_reward * state.count(ord("1"))

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        out = []
        for i, b in enumerate(state):
            if b == ord("*"):
                continue
            prev = bytearray(state)
            prev[i] = ord("*")
            rank = self._unset(bytes(prev)).index(i)
            out.append((bytes(prev), 2 * rank + (1 if b == ord("1") else 0)))
        return out


# ---------------------------------------------------------------------------
# unrooted labeled trees


def tree_n(n_nodes: int, edges: Sequence[tuple[int, int]]) -> int:
    """Build orders of a fixed tree, one node attached at a time.

    Sums, over every choice of first node r, the number of orderings that
    respect the rooted-at-r ancestor structure:
    W_r[v] = (D_r[v]-1)! / prod_c D_r[c]! * prod_c W_r[c] with subtree sizes
    D_r.  Exact for trees whose nodes are pairwise distinguishable.
    """
    if n_nodes < 1:
        raise ValueError("tree must have at least one node")
    adj: list[list[int]] = [[] for _ in range(n_nodes)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)

    def rooted(v: int, parent: int) -> tuple[int, int]:
        size, ways = 1, 1
        denom = 1
        for c in adj[v]:
            if c == parent:
                continue
            cs, cw = rooted(c, v)
            size += cs
            ways *= cw
            denom *= math.factorial(cs)
        return size, math.factorial(size - 1) // denom * ways

    return sum(rooted(r, -1)[1] for r in range(n_nodes))


def _tree_centers(adj: list[list[int]]) -> list[int]:
    n = len(adj)
    if n <= 2:
        return list(range(n))
    deg = [len(a) for a in adj]
    layer = [v for v in range(n) if deg[v] == 1]
    remaining = n
    while remaining > 2:
        remaining -= len(layer)
        nxt = []
        for v in layer:
            deg[v] = 0
            for u in adj[v]:
                if deg[u] > 1:
                    deg[u] -= 1
                    if deg[u] == 1:
                        nxt.append(u)
        layer = nxt
    return layer


def _rooted_canonical(labels: Sequence[int], adj: list[list[int]], root: int) -> bytes:
    def rec(v: int, parent: int) -> bytes:
        subs = sorted(rec(c, v) for c in adj[v] if c != parent)
        return b"(" + str(labels[v]).encode() + b"".join(subs) + b")"

    return rec(root, -1)


def canonical_tree(labels: Sequence[int], adj: list[list[int]]) -> bytes:
    """Canonical byte encoding; equal iff the labeled trees are isomorphic.

    Roots at the tree center(s) found by iterative leaf stripping and
    serializes with children ordered by their own canonical form.
    """
    if not labels:
        return b""
    return min(_rooted_canonical(labels, adj, c) for c in _tree_centers(adj))


def parse_tree(state: bytes) -> tuple[list[int], list[list[int]]]:
    """Parse a canonical tree encoding; node ids follow preorder position."""
    labels: list[int] = []
    adj: list[list[int]] = []
    pos = 0

    def parse_node(parent: int) -> None:
        nonlocal pos
        if state[pos : pos + 1] != b"(":
            raise ValueError(f"bad tree encoding at byte {pos}")
        pos += 1
        start = pos
        while state[pos : pos + 1] not in (b"(", b")"):
            pos += 1
        label = int(state[start:pos])
        idx = len(labels)
        labels.append(label)
        adj.append([])
        if parent >= 0:
            adj[parent].append(idx)
            adj[idx].append(parent)
        while state[pos : pos + 1] == b"(":
            parse_node(idx)
        pos += 1  # consume ")"

    if state == b"":
        return [], []
    parse_node(-1)
    if pos != len(state):
        raise ValueError("trailing bytes in tree encoding")
    return labels, adj


def tree_n_from_state(state: bytes) -> int:
    labels, adj = parse_tree(state)
    edges = [(u, v) for u in range(len(adj)) for v in adj[u] if u < v]
    return tree_n(len(labels), edges)


class TreeBuildEnv:
    """Grows an unrooted labeled tree one node at a time.

    Actions attach a new node with one of ``n_labels`` labels to an existing
    node (addressed by its preorder position in the canonical encoding);
    isomorphic labeled trees are merged into one canonical state.  Terminal
    once ``max_nodes`` nodes are placed; the target is uniform.
    """

    def __init__(self, n_labels: int, max_nodes: int):
        if n_labels < 1:
            raise ValueError("n_labels must be >= 1")
        if max_nodes < 1:
            raise ValueError("max_nodes must be >= 1")
        self.n_labels = n_labels
        self.max_nodes = max_nodes

    def initial_state(self) -> bytes:
        return b""

    @staticmethod
    def _size(state: bytes) -> int:
        return state.count(ord("("))

    def n_actions(self, state: bytes) -> int:
        k = self._size(state)
        if k >= self.max_nodes:
            return 0
        if k == 0:
            return self.n_labels
        return k * self.n_labels

    def step(self, state: bytes, action: int) -> bytes:
        if state == b"":
            return canonical_tree([action], [[]])
        labels, adj = parse_tree(state)
        node, label = divmod(action, self.n_labels)
        new = len(labels)
        labels.append(label)
        adj.append([node])
        adj[node].append(new)
        return canonical_tree(labels, adj)

    def is_terminal(self, state: bytes) -> bool:
        return self._size(state) == self.max_nodes

    def log_target(self, state: bytes) -> float:
        return 0.0 if self.is_terminal(state) else NEG_INF

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        k = self._size(state)
        if k == 0:
            return []
        labels, adj = parse_tree(state)
        if k == 1:
            return [(b"", labels[0])]
        found: set[tuple[bytes, int]] = set()
        for v in range(k):
            if len(adj[v]) != 1:
                continue
            keep = [u for u in range(k) if u != v]
            remap = {u: i for i, u in enumerate(keep)}
            plabels = [labels[u] for u in keep]
            padj: list[list[int]] = [[] for _ in keep]
            for u in keep:
                for w in adj[u]:
                    if w != v:
                        padj[remap[u]].append(remap[w])
            parent = canonical_tree(plabels, padj)
            # automorphic attach points of the parent are distinct actions;
            # probe them all and keep those that replay to this state
            for node in range(k - 1):
                action = node * self.n_labels + labels[v]
                if self.step(parent, action) == state:
                    found.add((parent, action))
        return sorted(found)


# ---------------------------------------------------------------------------
# CLI factory


def make_env(name: str, params: dict):
    """Build an env from a config-style name and parameter dict."""
    if name == "simple-dag":
        return SimpleDagEnv(target=float(params.get("target", 1.0)))
    if name == "hypergrid":
        return HypergridEnv(dims=int(params["dims"]), side=int(params["side"]))
    if name == "words":
        return WordsEnv(
            alphabet_size=int(params.get("alphabet", 2)),
            length=int(params["length"]),
            mode=params.get("mode", "append-right"),
        )
    if name == "bitvector":
        return BitVectorEnv(
            length=int(params["length"]),
            ones_reward=float(params.get("ones_reward", 0.0)),
        )
    if name == "tree":
        return TreeBuildEnv(
            n_labels=int(params.get("labels", 1)),
            max_nodes=int(params["max_nodes"]),
        )
    raise ValueError(f"unknown env {name!r}")
