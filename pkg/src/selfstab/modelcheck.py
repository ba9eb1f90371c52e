"""Exhaustive explicit-state verification on tiny graphs.

Every configuration is a legal start, so the whole configuration space is
explored: states are packed integers (mixed-radix, node states in id order
then registers in lexicographic directed-pair order), the successor relation
enumerates *every* scheduler choice (all nonempty per-node rule picks), and
self-stabilization holds exactly when the transition graph is acyclic and
every sink is a legitimate matching.  The longest weighted path to a sink is
then the worst-case move count any scheduler can force.
"""

from __future__ import annotations

import itertools
from array import array
from dataclasses import dataclass, field

from .graph import Graph
from .protocol import (
    Action,
    Configuration,
    NodeState,
    PField,
    RegisterValue,
    Rule,
    RuleKind,
)
from . import verifier

_IDLE = int(PField.IDLE)
_YOU = int(PField.YOU)
_OTHER = int(PField.OTHER)

DEFAULT_STATE_CAP = 10**7


class StateSpaceTooLargeError(ValueError):
    def __init__(self, projected: int, cap: int):
        super().__init__(f"projected state count {projected} exceeds cap {cap}")
        self.projected = projected
        self.cap = cap


class CyclicSystemError(RuntimeError):
    """Longest-path queries are undefined on a cyclic transition system."""


class TransitionSystem:
    """Bijective packed-integer encoding of the configuration space plus the
    full adversarial successor function.

    With ``canonicalize_null_m`` set, m is fixed to 0 whenever p is None.
    This quotient is exact: no guard or effect ever reads m while p is None
    (Increase/Reset require p != None and an idle pointer writes (Idle, 0)
    registers), and Seduction/Marriage overwrite m with 0.
    """

    def __init__(self, g: Graph, canonicalize_null_m: bool = True,
                 cap: int = DEFAULT_STATE_CAP):
        self.graph = g
        self.canonical = canonicalize_null_m
        ids = list(g.nodes)
        self._ids = ids
        idx = {u: i for i, u in enumerate(ids)}
        self._nbrs = [tuple(idx[v] for v in g.adj[u]) for u in ids]
        # neighbor -> 1-based slot within a node's sorted neighbor list
        self._slot = [
            {j: k + 1 for k, j in enumerate(nbrs)} for nbrs in self._nbrs
        ]
        pairs = [(idx[u], idx[v]) for u, v in g.directed_pairs()]
        self._pairs = pairs
        self._pair_index = {pair: k for k, pair in enumerate(pairs)}

        n = len(ids)
        radixes = []
        for i in range(n):
            deg = len(self._nbrs[i])
            radixes.append(1 + 3 * deg if canonicalize_null_m else 3 * (1 + deg))
        radixes.extend([9] * len(pairs))
        self._radixes = radixes
        weights = []
        w = 1
        for r in radixes:
            weights.append(w)
            w *= r
        self._weights = weights
        self.size = w
        if self.size > cap:
            raise StateSpaceTooLargeError(self.size, cap)
        self._n = n

    # -- digit packing -----------------------------------------------------

    def _node_digit(self, i: int, p_slot: int, m: int) -> int:
        if self.canonical:
            return 0 if p_slot == 0 else 1 + (p_slot - 1) * 3 + m
        return p_slot * 3 + m

    def _decode_node_digit(self, i: int, d: int) -> tuple[int, int]:
        """Returns (neighbor index or -1, m)."""
        if self.canonical:
            if d == 0:
                return -1, 0
            slot, m = divmod(d - 1, 3)
            return self._nbrs[i][slot], m
        slot, m = divmod(d, 3)
        return (-1 if slot == 0 else self._nbrs[i][slot - 1]), m

    def _digits(self, code: int) -> list[int]:
        out = []
        for r in self._radixes:
            code, d = divmod(code, r)
            out.append(d)
        return out

    # -- configuration conversion -------------------------------------------

    def encode(self, c: Configuration) -> int:
        """Pack a configuration; with canonicalization on, (p=None, m) maps
        to its m=0 representative."""
        ids = self._ids
        idx = {u: i for i, u in enumerate(ids)}
        code = 0
        for i, u in enumerate(ids):
            p, m = c.states[u]
            slot = 0 if p is None else self._slot[i][idx[p]]
            if slot == 0 and self.canonical:
                m = 0
            code += self._node_digit(i, slot, m) * self._weights[i]
        base = self._n
        for k, (iu, iv) in enumerate(self._pairs):
            pf, mf = c.registers[(ids[iu], ids[iv])]
            code += (pf * 3 + mf) * self._weights[base + k]
        return code

    def decode(self, code: int) -> Configuration:
        ids = self._ids
        digits = self._digits(code)
        states = {}
        for i, u in enumerate(ids):
            pi, m = self._decode_node_digit(i, digits[i])
            states[u] = NodeState(None if pi < 0 else ids[pi], m)
        registers = {}
        for k, (iu, iv) in enumerate(self._pairs):
            pf, mf = divmod(digits[self._n + k], 3)
            registers[(ids[iu], ids[iv])] = RegisterValue(PField(pf), mf)
        return Configuration(states, registers, self.graph.adj)

    def __iter__(self):
        for code in range(self.size):
            yield self.decode(code)

    def __len__(self) -> int:
        return self.size

    # -- successor function ---------------------------------------------------

    def _action_deltas(self, digits: list[int]):
        """Per eligible node, the list of (Rule, packed-code delta) choices.

        Mirrors the guard evaluation of :func:`protocol.enabled_rules` on the
        packed representation; agreement between the two is cross-checked by
        the test suite on random states.
        """
        n = self._n
        nbrs = self._nbrs
        ids = self._ids
        weights = self._weights
        pair_index = self._pair_index
        base = n
        out = []
        reg = digits  # register digit for pair slot k is digits[base + k]
        for i in range(n):
            p, m = self._decode_node_digit(i, digits[i])
            acts: list[tuple[Rule, int]] = []
            my_digit = digits[i]
            my_w = weights[i]
            if p < 0:
                for j in nbrs[i]:
                    out_k = base + pair_index[(i, j)]
                    if reg[out_k] != _IDLE * 3 + 0:
                        acts.append(
                            (Rule(RuleKind.WRITE, ids[j]), (0 - reg[out_k]) * weights[out_k])
                        )
                        continue
                    in_k = base + pair_index[(j, i)]
                    if i < j:
                        if reg[in_k] == _IDLE * 3 + 0:
                            d = self._node_digit(i, self._slot[i][j], 0)
                            acts.append((Rule(RuleKind.SEDUCTION, ids[j]), (d - my_digit) * my_w))
                    elif reg[in_k] == _YOU * 3 + 0:
                        d = self._node_digit(i, self._slot[i][j], 0)
                        acts.append((Rule(RuleKind.MARRIAGE, ids[j]), (d - my_digit) * my_w))
            else:
                for j in nbrs[i]:
                    expect = (_YOU if j == p else _OTHER) * 3 + m
                    out_k = base + pair_index[(i, j)]
                    if reg[out_k] != expect:
                        acts.append(
                            (Rule(RuleKind.WRITE, ids[j]), (expect - reg[out_k]) * weights[out_k])
                        )
                out_k = base + pair_index[(i, p)]
                if reg[out_k] == _YOU * 3 + m:
                    rin = reg[base + pair_index[(p, i)]]
                    rin_pf, rin_mf = divmod(rin, 3)
                    if rin_pf == _YOU and (
                        (m == 0 and ((i < p and rin_mf == 1) or (i > p and rin_mf == 0)))
                        or (m == 1 and ((i < p and rin_mf == 1) or (i > p and rin_mf == 2)))
                    ):
                        d = self._node_digit(i, self._slot[i][p], m + 1)
                        acts.append((Rule(RuleKind.INCREASE), (d - my_digit) * my_w))
                    if _pr_abandonment_packed(i, p, m, rin_pf, rin_mf) or _pr_reset_packed(
                        i, p, m, rin_pf, rin_mf
                    ):
                        acts.append((Rule(RuleKind.RESET), (0 if self.canonical else 0) - my_digit * 1 and (self._node_digit(i, 0, 0) - my_digit) * my_w or (self._node_digit(i, 0, 0) - my_digit) * my_w))
            if acts:
                out.append((i, acts))
        return out

    def enabled_actions(self, code: int) -> dict[int, list[Rule]]:
        """Enabled rules per node id (for cross-checks and inspection)."""
        per_node = self._action_deltas(self._digits(code))
        return {self._ids[i]: sorted(r for r, _ in acts) for i, acts in per_node}

    def successors(self, code: int) -> list[tuple[int, int]]:
        """All (successor code, move count) pairs, one per scheduler choice:
        the nonempty per-node rule picks, at most one per node."""
        per_node = self._action_deltas(self._digits(code))
        return _combine_deltas(code, [acts for _, acts in per_node])

    def successor_action_sets(self, code: int):
        """(action set, successor code) pairs; the action sets are exactly
        the scheduler choices at ``code``."""
        per_node = self._action_deltas(self._digits(code))
        options = [
            [None] + [(Action(self._ids[i], r), d) for r, d in acts]
            for i, acts in per_node
        ]
        result = []
        for combo in itertools.product(*options):
            chosen = [x for x in combo if x is not None]
            if chosen:
                result.append(
                    (frozenset(a for a, _ in chosen), code + sum(d for _, d in chosen))
                )
        return result


def _combine_deltas(code: int, delta_lists) -> list[tuple[int, int]]:
    result = []
    options = [[None] + [d for _, d in acts] for acts in delta_lists]
    for combo in itertools.product(*options):
        total = 0
        count = 0
        for d in combo:
            if d is not None:
                total += d
                count += 1
        if count:
            result.append((code + total, count))
    return result


def _pr_abandonment_packed(i, p, m, rin_pf, rin_mf) -> bool:
    if rin_pf != _YOU and (i > p or m != 0):
        return True
    return rin_pf == _OTHER and rin_mf == 2 and i < p


def _pr_reset_packed(i, p, m, rin_pf, rin_mf) -> bool:
    if rin_pf != _YOU:
        return False
    return (
        (m == 0 and rin_mf == 2)
        or (m == 2 and rin_mf == 0)
        or (m == 0 and rin_mf == 1 and i > p)
        or (m == 1 and rin_mf == 0 and i < p)
        or (m == 1 and rin_mf == 2 and i < p)
        or (m == 2 and rin_mf == 1 and i > p)
    )


def enumerate_states(g: Graph, canonicalize_null_m: bool = False,
                     cap: int = DEFAULT_STATE_CAP) -> TransitionSystem:
    """The full configuration space for ``g`` as a sized iterable of
    configurations (see :class:`TransitionSystem`)."""
    return TransitionSystem(g, canonicalize_null_m, cap)


@dataclass
class CheckReport:
    """Outcome of exhaustive verification.  ``has_cycle`` False together with
    ``all_sinks_legitimate`` True is exactly verified self-stabilization for
    the graph; ``max_moves_to_stability`` is then the worst move count any
    scheduler can force from any configuration."""

    state_count: int
    transition_count: int
    has_cycle: bool
    all_sinks_legitimate: bool
    max_moves_to_stability: int | None
    sink_count: int
    canonicalized: bool
    witness: dict | None = field(default=None, repr=False)

    @property
    def verified(self) -> bool:
        return not self.has_cycle and self.all_sinks_legitimate

    def to_json_obj(self) -> dict:
        return {
            "state_count": self.state_count,
            "transition_count": self.transition_count,
            "has_cycle": self.has_cycle,
            "all_sinks_legitimate": self.all_sinks_legitimate,
            "max_moves_to_stability": self.max_moves_to_stability,
            "sink_count": self.sink_count,
            "canonicalized": self.canonicalized,
            "verified": self.verified,
            "witness": self.witness,
        }


def verify(g: Graph, canonicalize: bool = True, cap: int = DEFAULT_STATE_CAP) -> CheckReport:
    """Build the full transition relation, detect cycles via strongly
    connected components, classify every sink, and compute the longest
    weighted path to stability (the DP is only run on an acyclic system)."""
    ts = TransitionSystem(g, canonicalize, cap)
    size = ts.size

    offsets = array("q", [0]) * (size + 1)
    targets = array("q")
    weights = array("i")
    sinks: list[int] = []
    self_loop: int | None = None
    edge_count = 0
    succ = ts.successors
    for code in range(size):
        pairs = succ(code)
        if not pairs:
            sinks.append(code)
        for tgt, w in pairs:
            if tgt == code:
                self_loop = code  # cannot happen: every action changes state
            targets.append(tgt)
            weights.append(w)
            edge_count += 1
        offsets[code + 1] = edge_count

    witness = None
    if self_loop is not None:
        has_cycle = True
        witness = {
            "kind": "cycle",
            "configurations": [ts.decode(self_loop).to_json_obj()] * 2,
        }
    else:
        emit_order, bad_scc = _tarjan(offsets, targets, size)
        has_cycle = bad_scc is not None
        if has_cycle:
            cycle = _extract_cycle(offsets, targets, bad_scc)
            witness = {
                "kind": "cycle",
                "configurations": [ts.decode(c).to_json_obj() for c in cycle],
            }

    all_sinks_legit = True
    for code in sinks:
        conf = ts.decode(code)
        if not verifier.is_stable(conf):
            raise RuntimeError(
                f"internal inconsistency: packed guards found sink {code} but "
                "the reference guards disagree"
            )
        if not (
            verifier.is_legitimate(g, conf) and verifier.check_stable_registers(g, conf)
        ):
            all_sinks_legit = False
            if witness is None:
                witness = {"kind": "bad_sink", "configurations": [conf.to_json_obj()]}

    max_moves = None
    if not has_cycle:
        dist = array("q", [0]) * size
        for v in emit_order:
            best = 0
            for e in range(offsets[v], offsets[v + 1]):
                cand = weights[e] + dist[targets[e]]
                if cand > best:
                    best = cand
            dist[v] = best
        max_moves = max(dist) if size else 0

    return CheckReport(
        state_count=size,
        transition_count=edge_count,
        has_cycle=has_cycle,
        all_sinks_legitimate=all_sinks_legit,
        max_moves_to_stability=max_moves,
        sink_count=len(sinks),
        canonicalized=canonicalize,
        witness=witness,
    )


def longest_move_path(g: Graph, canonicalize: bool = True,
                      cap: int = DEFAULT_STATE_CAP) -> int:
    """Exact worst-case move count an adversarial scheduler can force on
    ``g``, from the worst possible starting configuration."""
    report = verify(g, canonicalize, cap)
    if report.has_cycle:
        raise CyclicSystemError("transition system has a cycle; longest path undefined")
    return report.max_moves_to_stability


def _tarjan(offsets, targets, size):
    """Iterative Tarjan SCC over the CSR graph.

    Returns (emission order, None) when all SCCs are singletons; the order
    lists each state after all states reachable from it (reverse topological
    order, ready for longest-path DP).  Returns (None, members) for the first
    SCC with two or more states.
    """
    UNVISITED = -1
    index = array("q", [UNVISITED]) * size
    low = array("q", [0]) * size
    onstack = bytearray(size)
    scc_stack: list[int] = []
    emit = array("q")
    counter = 0
    for root in range(size):
        if index[root] != UNVISITED:
            continue
        index[root] = low[root] = counter
        counter += 1
        scc_stack.append(root)
        onstack[root] = 1
        work = [(root, offsets[root])]
        while work:
            v, ptr = work[-1]
            if ptr < offsets[v + 1]:
                work[-1] = (v, ptr + 1)
                w = targets[ptr]
                if index[w] == UNVISITED:
                    index[w] = low[w] = counter
                    counter += 1
                    scc_stack.append(w)
                    onstack[w] = 1
                    work.append((w, offsets[w]))
                elif onstack[w] and index[w] < low[v]:
                    low[v] = index[w]
            else:
                work.pop()
                if work:
                    u = work[-1][0]
                    if low[v] < low[u]:
                        low[u] = low[v]
                if low[v] == index[v]:
                    members = []
                    while True:
                        w = scc_stack.pop()
                        onstack[w] = 0
                        members.append(w)
                        if w == v:
                            break
                    if len(members) > 1:
                        return None, members
                    emit.append(v)
    return emit, None


def _extract_cycle(offsets, targets, members) -> list[int]:
    """A concrete cycle inside a non-trivial SCC, as a state list with the
    first state repeated at the end."""
    member_set = set(members)
    start = members[0]
    parent = {start: None}
    stack = [start]
    while stack:
        v = stack.pop()
        for e in range(offsets[v], offsets[v + 1]):
            w = targets[e]
            if w not in member_set:
                continue
            if w == start:
                cycle = [start]
                node = v
                while node is not None:
                    cycle.append(node)
                    node = parent[node]
                cycle.reverse()
                cycle.append(cycle[0]) if cycle[0] != start else None
                # cycle currently: start ... v start? normalize below
                path = [start]
                node = v
                rev = []
                while node is not None and node != start:
                    rev.append(node)
                    node = parent[node]
                path.extend(reversed(rev))
                path.append(start)
                return path
            if w not in parent:
                parent[w] = v
                stack.append(w)
    # Every state in a non-trivial SCC lies on a cycle through some member;
    # falling through means the SCC bookkeeping is broken.
    raise RuntimeError("failed to extract a cycle from a non-trivial SCC")
