"""Acyclic deterministic MDP core: enumeration, inversion, validation.

Environments expose states as opaque byte encodings behind the ``Env``
protocol.  ``enumerate_mdp`` walks the reachable graph, assigns dense
topological indices, and freezes the DAG into flat edge tables
(``EnumeratedMdp``) that every solver in this package consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Protocol, Sequence

import numpy as np

DEFAULT_MAX_STATES = 1_000_000


class MdpError(Exception):
    """Base class for structural MDP errors."""


class CycleDetected(MdpError):
    """A state was re-encountered on the current DFS path."""


class StateBudgetExceeded(MdpError):
    """Enumeration discovered more reachable states than allowed."""


class ParentMismatch(MdpError):
    """An env's parents() disagrees with its step() function."""


class MultipleInitials(MdpError):
    """A single-initial consumer was handed a multi-initial MDP."""


class DagFormatError(MdpError):
    """Malformed plain-text DAG spec."""


class Env(Protocol):
    """Contract for acyclic deterministic environments.

    States are canonical byte strings; two states are the same iff their
    encodings are byte-equal.  Actions are dense local indices
    ``0..n_actions(s)-1``.  ``step`` must be deterministic and acyclic,
    ``log_target`` must be finite exactly on terminal states, and
    ``parents(step(s, a))`` must contain ``(s, a)`` for every legal pair.
    """

    def initial_state(self) -> bytes: ...

    def n_actions(self, state: bytes) -> int: ...

    def step(self, state: bytes, action: int) -> bytes: ...

    def is_terminal(self, state: bytes) -> bool: ...

    def log_target(self, state: bytes) -> float: ...

    def parents(self, state: bytes) -> Sequence[tuple[bytes, int]]: ...


@dataclass(frozen=True)
class EnumeratedMdp:
    """A reachable acyclic MDP frozen into topologically indexed edge tables.

    Edges are sorted by ``(src, action)``; ``out_offset`` gives the CSR slice
    of each state's out-edges.  ``in_edges`` lists the same edge ids grouped
    by destination (sorted by ``(src, action)`` within each group) with CSR
    offsets ``in_offset``; ``parent_slot[e]`` is the rank of edge ``e`` inside
    its destination's group, i.e. the backward-action index.
    """

    states: tuple[bytes, ...]
    initials: tuple[int, ...]
    terminal: np.ndarray  # bool [S]
    log_target: np.ndarray  # float [S], -inf off terminal states
    edge_src: np.ndarray  # int [E]
    edge_action: np.ndarray  # int [E]
    edge_dst: np.ndarray  # int [E]
    out_offset: np.ndarray  # int [S+1]
    in_edges: np.ndarray  # int [E]
    in_offset: np.ndarray  # int [S+1]
    parent_slot: np.ndarray  # int [E]

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    @property
    def multi_initial(self) -> bool:
        return len(self.initials) > 1

    @property
    def initial(self) -> int:
        if self.multi_initial:
            raise MultipleInitials(
                f"{len(self.initials)} initial states; this consumer needs one"
            )
        return self.initials[0]

    @property
    def terminal_ids(self) -> np.ndarray:
        return np.flatnonzero(self.terminal)

    def out_slice(self, s: int) -> slice:
        return slice(int(self.out_offset[s]), int(self.out_offset[s + 1]))

    def in_slice(self, s: int) -> slice:
        return slice(int(self.in_offset[s]), int(self.in_offset[s + 1]))

    def out_edge_ids(self, s: int) -> np.ndarray:
        return np.arange(self.out_offset[s], self.out_offset[s + 1])

    def in_edge_ids(self, s: int) -> np.ndarray:
        return self.in_edges[self.in_slice(s)]

    def children(self, s: int) -> list[tuple[int, int]]:
        """(action, child) pairs in action order."""
        sl = self.out_slice(s)
        return list(zip(self.edge_action[sl].tolist(), self.edge_dst[sl].tolist()))

    def parents_of(self, s: int) -> list[tuple[int, int]]:
        """(parent, action) pairs in (parent, action) order."""
        ids = self.in_edge_ids(s)
        return list(zip(self.edge_src[ids].tolist(), self.edge_action[ids].tolist()))

    def edge_set(self) -> set[tuple[int, int]]:
        """Edges as (src, dst) index pairs, ignoring action labels."""
        return set(zip(self.edge_src.tolist(), self.edge_dst.tolist()))

    def with_log_target(self, log_target: np.ndarray) -> "EnumeratedMdp":
        log_target = np.asarray(log_target, dtype=float)
        if log_target.shape != (self.n_states,):
            raise ValueError("log_target shape mismatch")
        return replace(self, log_target=log_target)


@dataclass(frozen=True)
class Trajectory:
    """A complete path from the initial state to a terminal state.

    ``states`` has length T+1, ``actions``/``edges``/``log_behavior`` length T.
    ``log_behavior`` records the behavior policy's per-step log-probabilities
    (the sampling distribution, exploration included).
    """

    states: np.ndarray
    actions: np.ndarray
    edges: np.ndarray
    log_behavior: np.ndarray

    @property
    def start(self) -> int:
        return int(self.states[0])

    @property
    def end(self) -> int:
        return int(self.states[-1])

    def __len__(self) -> int:
        return len(self.actions)

    def steps(self) -> Iterator[tuple[int, int, int]]:
        for t in range(len(self.actions)):
            yield int(self.states[t]), int(self.actions[t]), int(self.states[t + 1])


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    failure: str | None = None


def _freeze(
    states: list[bytes],
    initials: Sequence[int],
    terminal: Sequence[bool],
    log_target: Sequence[float],
    edges: Sequence[tuple[int, int, int]],
) -> EnumeratedMdp:
    """Build the CSR tables from an edge list; edges are (src, action, dst)."""
    n = len(states)
    order = sorted(range(len(edges)), key=lambda i: (edges[i][0], edges[i][1]))
    src = np.array([edges[i][0] for i in order], dtype=np.int64)
    act = np.array([edges[i][1] for i in order], dtype=np.int64)
    dst = np.array([edges[i][2] for i in order], dtype=np.int64)

    out_offset = np.zeros(n + 1, dtype=np.int64)
    np.add.at(out_offset, src + 1, 1)
    out_offset = np.cumsum(out_offset)

    by_dst = sorted(range(len(src)), key=lambda e: (int(dst[e]), int(src[e]), int(act[e])))
    in_edges = np.array(by_dst, dtype=np.int64)
    in_offset = np.zeros(n + 1, dtype=np.int64)
    np.add.at(in_offset, dst + 1, 1)
    in_offset = np.cumsum(in_offset)

    parent_slot = np.zeros(len(src), dtype=np.int64)
    for s in range(n):
        seg = in_edges[in_offset[s] : in_offset[s + 1]]
        parent_slot[seg] = np.arange(len(seg))

    return EnumeratedMdp(
        states=tuple(states),
        initials=tuple(initials),
        terminal=np.asarray(terminal, dtype=bool),
        log_target=np.asarray(log_target, dtype=float),
        edge_src=src,
        edge_action=act,
        edge_dst=dst,
        out_offset=out_offset,
        in_edges=in_edges,
        in_offset=in_offset,
        parent_slot=parent_slot,
    )


def enumerate_mdp(env: Env, max_states: int = DEFAULT_MAX_STATES) -> EnumeratedMdp:
    """Enumerate the reachable states of ``env`` in topological order.

    Indices come from reversed DFS postorder with children visited in
    action-index order, so the initial state gets index 0 and every edge
    goes from a lower to a higher index.  Deterministic for a deterministic
    env.

    Raises CycleDetected, StateBudgetExceeded, or ParentMismatch.
    """
    root = env.initial_state()
    index_of: dict[bytes, int] = {root: 0}
    states: list[bytes] = [root]
    kids: list[list[int] | None] = [None]

    def resolve(sid: int) -> list[int]:
        st = states[sid]
        n_act = 0 if env.is_terminal(st) else env.n_actions(st)
        out = []
        for a in range(n_act):
            child = env.step(st, a)
            cid = index_of.get(child)
            if cid is None:
                if len(states) >= max_states:
                    raise StateBudgetExceeded(
                        f"more than {max_states} reachable states"
                    )
                cid = len(states)
                index_of[child] = cid
                states.append(child)
                kids.append(None)
            out.append(cid)
        return out

    postorder: list[int] = []
    done: set[int] = set()
    on_path: set[int] = {0}
    stack: list[list[int]] = [[0, 0]]  # (discovery id, next child position)
    while stack:
        sid, pos = stack[-1]
        if kids[sid] is None:
            kids[sid] = resolve(sid)
        children = kids[sid]
        if pos < len(children):
            stack[-1][1] = pos + 1
            c = children[pos]
            if c in on_path:
                raise CycleDetected(
                    f"state {states[c]!r} reached again along the current path"
                )
            if c not in done:
                on_path.add(c)
                stack.append([c, 0])
        else:
            stack.pop()
            on_path.discard(sid)
            done.add(sid)
            postorder.append(sid)

    order = postorder[::-1]  # reverse postorder = topological, root first
    rank = {d: i for i, d in enumerate(order)}
    n = len(order)

    new_states = [states[d] for d in order]
    terminal = [env.is_terminal(s) for s in new_states]
    log_target = [
        float(env.log_target(s)) if term else float("-inf")
        for s, term in zip(new_states, terminal)
    ]
    edges = []
    for d in order:
        s = rank[d]
        for a, c in enumerate(kids[d]):
            edges.append((s, a, rank[c]))

    mdp = _freeze(new_states, (0,), terminal, log_target, edges)

    # cross-check env.parents against discovered edges
    discovered: dict[int, set[tuple[bytes, int]]] = {s: set() for s in range(n)}
    for s, a, c in edges:
        discovered[c].add((new_states[s], a))
    for c in range(n):
        declared = set()
        for p_state, p_action in env.parents(new_states[c]):
            declared.add((bytes(p_state), int(p_action)))
            if env.step(p_state, p_action) != new_states[c]:
                raise ParentMismatch(
                    f"parents({new_states[c]!r}) lists ({p_state!r}, {p_action}) "
                    "which does not replay to it"
                )
        missing = discovered[c] - declared
        if missing:
            raise ParentMismatch(
                f"parents({new_states[c]!r}) is missing the pairs {sorted(missing)}"
            )
    return mdp


def invert(mdp: EnumeratedMdp) -> EnumeratedMdp:
    """Reverse every edge: initial roles and terminal roles swap.

    Actions of the inverted MDP at a state are its original parent pairs in
    parent-list order, and the transition undoes the original action.
    Indices are reassigned in reverse topological order.  The inverted MDP
    has one initial-role state per original terminal; single-initial
    consumers reject it via ``EnumeratedMdp.initial``.  The terminal-role
    states (the original initials) get log-target 0.
    """
    n = mdp.n_states

    def rho(i: int) -> int:
        return n - 1 - i

    states = [mdp.states[rho(i)] for i in range(n)]
    edges = []
    for e in range(mdp.n_edges):
        edges.append(
            (rho(int(mdp.edge_dst[e])), int(mdp.parent_slot[e]), rho(int(mdp.edge_src[e])))
        )
    initials = tuple(sorted(rho(int(t)) for t in mdp.terminal_ids))
    terminal = np.zeros(n, dtype=bool)
    for s0 in mdp.initials:
        terminal[rho(int(s0))] = True
    log_target = np.full(n, float("-inf"))
    log_target[terminal] = 0.0
    return _freeze(states, initials, terminal, log_target, edges)


def validate(mdp: EnumeratedMdp) -> ValidationReport:
    """Check all EnumeratedMdp invariants; report the first violation."""
    n, m = mdp.n_states, mdp.n_edges

    def fail(msg: str) -> ValidationReport:
        return ValidationReport(ok=False, failure=msg)

    if len(set(mdp.states)) != n:
        return fail("duplicate state encodings")
    if not mdp.initials or len(set(mdp.initials)) != len(mdp.initials):
        return fail("initial states must be nonempty and distinct")

    if len(mdp.out_offset) != n + 1 or mdp.out_offset[0] != 0 or mdp.out_offset[-1] != m:
        return fail("malformed out_offset")
    if len(mdp.in_offset) != n + 1 or mdp.in_offset[0] != 0 or mdp.in_offset[-1] != m:
        return fail("malformed in_offset")

    for e in range(m):
        if not (0 <= mdp.edge_src[e] < n and 0 <= mdp.edge_dst[e] < n):
            return fail(f"edge {e} references an unknown state")
        if mdp.edge_src[e] >= mdp.edge_dst[e]:
            return fail(
                f"acyclicity: edge {int(mdp.edge_src[e])} -> {int(mdp.edge_dst[e])} "
                "violates topological index order"
            )

    for s in range(n):
        sl = mdp.out_slice(s)
        if (mdp.edge_src[sl] != s).any():
            return fail(f"out_offset slice of state {s} contains foreign edges")
        acts = mdp.edge_action[sl]
        if list(acts) != list(range(len(acts))):
            return fail(f"state {s} action ids are not dense 0..k-1")
        if mdp.terminal[s] and len(acts) > 0:
            return fail(f"terminal state {s} has children")
        if not mdp.terminal[s] and len(acts) == 0:
            return fail(f"non-terminal state {s} has no children")

    if sorted(mdp.in_edges.tolist()) != list(range(m)):
        return fail("in_edges is not a permutation of edge ids (parent/child duality)")
    for s in range(n):
        ids = mdp.in_edge_ids(s)
        if (mdp.edge_dst[ids] != s).any():
            return fail(f"in_offset slice of state {s} contains foreign edges")
        if (mdp.parent_slot[ids] != np.arange(len(ids))).any():
            return fail(f"parent_slot ranks of state {s} are wrong")

    for s in range(n):
        if mdp.terminal[s] and not np.isfinite(mdp.log_target[s]):
            return fail(f"terminal state {s} has non-finite log_target")
        if not mdp.terminal[s] and mdp.log_target[s] != float("-inf"):
            return fail(f"non-terminal state {s} has a finite log_target")

    seen = np.zeros(n, dtype=bool)
    frontier = list(mdp.initials)
    for s in frontier:
        seen[s] = True
    while frontier:
        s = frontier.pop()
        for _, c in mdp.children(s):
            if not seen[c]:
                seen[c] = True
                frontier.append(c)
    if not seen.all():
        return fail(f"state {int(np.flatnonzero(~seen)[0])} unreachable from initials")

    return ValidationReport(ok=True)


class ExplicitDagEnv:
    """Env over explicitly listed integer states, as read from DAG spec text."""

    def __init__(
        self,
        initial: int,
        edges: Sequence[tuple[int, int, int]],
        terminals: dict[int, float],
    ):
        self._initial = initial
        self._children: dict[int, dict[int, int]] = {}
        self._parents: dict[int, list[tuple[int, int]]] = {}
        nodes = {initial} | set(terminals)
        for p, a, c in edges:
            nodes.update((p, c))
            self._children.setdefault(p, {})
            if a in self._children[p]:
                raise DagFormatError(f"duplicate action {a} at state {p}")
            self._children[p][a] = c
            self._parents.setdefault(c, []).append((p, a))
        for p, acts in self._children.items():
            if sorted(acts) != list(range(len(acts))):
                raise DagFormatError(f"state {p} action ids are not dense 0..k-1")
        self._terminals = dict(terminals)
        for t in self._terminals:
            if t in self._children:
                raise DagFormatError(f"terminal state {t} has outgoing edges")
        for s in nodes:
            if s not in self._terminals and s not in self._children:
                raise DagFormatError(f"state {s} is neither terminal nor has edges")
        self._nodes = nodes

    @staticmethod
    def _encode(s: int) -> bytes:
        return str(s).encode()

    @staticmethod
    def _decode(b: bytes) -> int:
        return int(b.decode())

    def initial_state(self) -> bytes:
        return self._encode(self._initial)

    def n_actions(self, state: bytes) -> int:
        return len(self._children.get(self._decode(state), {}))

    def step(self, state: bytes, action: int) -> bytes:
        return self._encode(self._children[self._decode(state)][action])

    def is_terminal(self, state: bytes) -> bool:
        return self._decode(state) in self._terminals

    def log_target(self, state: bytes) -> float:
        return self._terminals.get(self._decode(state), float("-inf"))

    def parents(self, state: bytes) -> list[tuple[bytes, int]]:
        return [
            (self._encode(p), a)
            for p, a in sorted(self._parents.get(self._decode(state), []))
        ]


def parse_dag_text(text: str) -> ExplicitDagEnv:
    """Parse the plain-text DAG spec format.

    One line per edge ``parent_id action_id child_id``, one line per terminal
    ``terminal id log_target``, one line ``initial id``.  Whitespace
    separated; ``#`` starts a comment.
    """
    initial: int | None = None
    edges: list[tuple[int, int, int]] = []
    terminals: dict[int, float] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "initial":
                if initial is not None:
                    raise DagFormatError(f"line {lineno}: duplicate initial line")
                if len(parts) != 2:
                    raise DagFormatError(f"line {lineno}: expected 'initial id'")
                initial = int(parts[1])
            elif parts[0] == "terminal":
                if len(parts) != 3:
                    raise DagFormatError(
                        f"line {lineno}: expected 'terminal id log_target'"
                    )
                terminals[int(parts[1])] = float(parts[2])
            else:
                if len(parts) != 3:
                    raise DagFormatError(
                        f"line {lineno}: expected 'parent action child'"
                    )
                edges.append((int(parts[0]), int(parts[1]), int(parts[2])))
        except ValueError as exc:
            raise DagFormatError(f"line {lineno}: {exc}") from exc
    if initial is None:
        raise DagFormatError("missing 'initial' line")
    if not terminals:
        raise DagFormatError("missing 'terminal' lines")
    return ExplicitDagEnv(initial, edges, terminals)


def dump_dag_text(mdp: EnumeratedMdp) -> str:
    """Serialize an EnumeratedMdp to the plain-text DAG spec format."""
    lines = ["# gflowdp DAG spec", f"initial {mdp.initial}"]
    for e in range(mdp.n_edges):
        lines.append(
            f"{int(mdp.edge_src[e])} {int(mdp.edge_action[e])} {int(mdp.edge_dst[e])}"
        )
    for t in mdp.terminal_ids:
        lines.append(f"terminal {int(t)} {float(mdp.log_target[t])!r}")
    return "\n".join(lines) + "\n"
