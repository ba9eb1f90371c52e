"""Guarded-rule matching protocol over per-link single-writer registers.

Each node owns a pointer ``p`` (a neighbor id or None) and a progress counter
``m`` in {0, 1, 2}, plus one register per outgoing link that it alone writes
and only the link's other endpoint reads.  A rule either reads neighbor
registers and updates local variables, or writes one own register, never
both, so every atomic action touches exactly one node-owned cell.

The five rules:

* ``Write(a)``     -- refresh the own register toward ``a`` from (p, m).
* ``Seduction(a)`` -- a single lower-id node proposes to an idle neighbor.
* ``Marriage(a)``  -- a single higher-id node accepts a standing proposal.
* ``Increase``     -- advance the marriage lock counter by one.
* ``Reset``        -- abandon a doomed or inconsistent marriage attempt.

All operations here are pure functions from configurations to values or new
configurations; nothing is shared or mutated, so independent executions may
evaluate them concurrently.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from enum import IntEnum
from typing import Iterable, Iterator, NamedTuple


class ProtocolError(ValueError):
    """Invalid configuration data or misuse of a protocol operation."""


class DisabledActionError(ProtocolError):
    """An action was applied whose guard does not hold."""


class PField(IntEnum):
    """Pointer field of a register: what the writer's pointer says about the reader."""

    IDLE = 0   # writer points to nobody
    YOU = 1    # writer points to the reader
    OTHER = 2  # writer points to a third node


PFIELD_NAMES = {PField.IDLE: "Idle", PField.YOU: "You", PField.OTHER: "Other"}
PFIELD_BY_NAME = {name: pf for pf, name in PFIELD_NAMES.items()}


class RegisterValue(NamedTuple):
    pf: int  # PField
    mf: int  # 0 | 1 | 2


IDLE_REGISTER = RegisterValue(PField.IDLE, 0)

REGISTER_DOMAIN: tuple[RegisterValue, ...] = tuple(
    RegisterValue(pf, mf) for pf in (PField.IDLE, PField.YOU, PField.OTHER) for mf in (0, 1, 2)
)


class NodeState(NamedTuple):
    p: int | None  # neighbor id or None
    m: int         # 0 | 1 | 2


class RuleKind(IntEnum):
    WRITE = 0
    SEDUCTION = 1
    MARRIAGE = 2
    INCREASE = 3
    RESET = 4


RULE_NAMES = {
    RuleKind.WRITE: "Write",
    RuleKind.SEDUCTION: "Seduction",
    RuleKind.MARRIAGE: "Marriage",
    RuleKind.INCREASE: "Increase",
    RuleKind.RESET: "Reset",
}
RULE_BY_NAME = {name: kind for kind, name in RULE_NAMES.items()}


class Rule(NamedTuple):
    """One guarded rule instance; ``arg`` is the link target for Write,
    Seduction and Marriage, and None for Increase and Reset."""

    kind: RuleKind
    arg: int | None = None

    def __str__(self) -> str:
        name = RULE_NAMES[self.kind]
        return f"{name}({self.arg})" if self.arg is not None else name


class Action(NamedTuple):
    node: int
    rule: Rule

    def __str__(self) -> str:
        return f"{self.node}:{self.rule}"


def write(a: int) -> Rule:
    return Rule(RuleKind.WRITE, a)


def seduction(a: int) -> Rule:
    return Rule(RuleKind.SEDUCTION, a)


def marriage(a: int) -> Rule:
    return Rule(RuleKind.MARRIAGE, a)


INCREASE = Rule(RuleKind.INCREASE)
RESET = Rule(RuleKind.RESET)


def _adjacency_from_registers(registers) -> dict[int, tuple[int, ...]]:
    adj: dict[int, list[int]] = {}
    for (u, v) in registers:
        adj.setdefault(u, []).append(v)
        adj.setdefault(v, [])
    return {u: tuple(sorted(vs)) for u, vs in sorted(adj.items())}


class Configuration:
    """A total assignment of node states and register values.

    ``states`` maps node id to :class:`NodeState`; ``registers`` maps each
    ordered adjacent pair (u, v) to the :class:`RegisterValue` that u wrote
    for v.  Treated as immutable; derive new configurations via
    :func:`apply_step`.  Equality is field-wise over states and registers.
    """

    __slots__ = ("states", "registers", "adj")

    def __init__(self, states, registers, adj=None):
        self.states: dict[int, NodeState] = states
        self.registers: dict[tuple[int, int], RegisterValue] = registers
        self.adj: dict[int, tuple[int, ...]] = (
            adj if adj is not None else _adjacency_from_registers(registers)
        )

    @classmethod
    def build(cls, graph, states, registers) -> Configuration:
        """Construct and validate a configuration for ``graph``."""
        try:
            conf = cls(
                {u: NodeState(*states[u]) for u in graph.nodes},
                {pair: RegisterValue(*registers[pair]) for pair in graph.directed_pairs()},
                graph.adj,
            )
        except KeyError as exc:
            raise ProtocolError(f"missing state or register for {exc.args[0]!r}") from None
        conf.validate(graph)
        return conf

    def validate(self, graph=None) -> None:
        """Check the configuration invariants, optionally against a graph."""
        adj = graph.adj if graph is not None else self.adj
        if set(self.states) != set(adj):
            raise ProtocolError("node states do not cover exactly the graph's nodes")
        expected_pairs = {(u, v) for u in adj for v in adj[u]}
        if set(self.registers) != expected_pairs:
            raise ProtocolError("registers do not cover exactly the ordered adjacent pairs")
        for u, (p, m) in self.states.items():
            if p is not None and p not in adj[u]:
                raise ProtocolError(f"node {u} points to non-neighbor {p}")
            if m not in (0, 1, 2):
                raise ProtocolError(f"node {u} has m={m} outside {{0,1,2}}")
        for pair, (pf, mf) in self.registers.items():
            if pf not in (0, 1, 2) or mf not in (0, 1, 2):
                raise ProtocolError(f"register {pair} holds invalid value ({pf},{mf})")

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adj[u]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        return self.states == other.states and self.registers == other.registers

    def __ne__(self, other) -> bool:
        eq = self.__eq__(other)
        return NotImplemented if eq is NotImplemented else not eq

    def key(self) -> tuple:
        """Canonical hashable form (for sets and memo tables)."""
        return (
            tuple((u, self.states[u]) for u in sorted(self.states)),
            tuple(sorted(self.registers.items())),
        )

    def __hash__(self) -> int:
        return hash(self.key())

    def __repr__(self) -> str:
        parts = [f"{u}:({st.p},{st.m})" for u, st in sorted(self.states.items())]
        regs = [
            f"{u}->{v}:({PFIELD_NAMES[PField(rv.pf)]},{rv.mf})"
            for (u, v), rv in sorted(self.registers.items())
        ]
        return f"Configuration({', '.join(parts)} | {', '.join(regs)})"

    # -- serialization ----------------------------------------------------

    def to_json_obj(self) -> dict:
        return {
            "nodes": {
                str(u): {"p": st.p, "m": st.m} for u, st in sorted(self.states.items())
            },
            "registers": {
                f"{u}->{v}": {"p": PFIELD_NAMES[PField(rv.pf)], "m": rv.mf}
                for (u, v), rv in sorted(self.registers.items())
            },
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> Configuration:
        try:
            states = {
                int(u): NodeState(st["p"], st["m"]) for u, st in obj["nodes"].items()
            }
            registers = {}
            for key, rv in obj["registers"].items():
                u, v = key.split("->")
                registers[(int(u), int(v))] = RegisterValue(
                    PFIELD_BY_NAME[rv["p"]], rv["m"]
                )
        except (KeyError, ValueError, TypeError) as exc:
            raise ProtocolError(f"malformed configuration JSON: {exc}") from None
        conf = cls(states, registers)
        conf.validate()
        return conf

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> Configuration:
        return cls.from_json_obj(json.loads(text))

    # -- canonical packed encoding ----------------------------------------

    def canonical_bytes(self) -> bytes:
        """Packed byte encoding: per node (id order) the pointer slot as two
        little-endian bytes (0 = None, k = k-th sorted neighbor + 1) plus the
        m byte; then per directed pair (lexicographic) one byte pf*3+mf."""
        out = bytearray()
        for u in sorted(self.states):
            p, m = self.states[u]
            slot = 0 if p is None else self.adj[u].index(p) + 1
            out += bytes((slot & 0xFF, (slot >> 8) & 0xFF, m))
        for pair in sorted(self.registers):
            pf, mf = self.registers[pair]
            out.append(pf * 3 + mf)
        return bytes(out)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()[:16]


# -- predicates and guards -------------------------------------------------


def correct_register_value(c: Configuration, u: int, a: int) -> RegisterValue:
    """The value node u's register toward neighbor a should hold given (p, m)."""
    if (u, a) not in c.registers:
        raise ProtocolError(f"{a} is not a neighbor of {u}")
    p, m = c.states[u]
    if p is None:
        return IDLE_REGISTER
    if p == a:
        return RegisterValue(PField.YOU, m)
    return RegisterValue(PField.OTHER, m)


def pr_abandonment(c: Configuration, u: int) -> bool:
    """True when u's marriage attempt is doomed and should be dropped: the
    pointed-to neighbor's register does not answer You (and u is either the
    higher-id side or already mid-lock), or it shows a locked marriage with a
    third node while u is the proposing side."""
    p, m = c.states[u]
    if p is None:
        return False
    reg = c.registers[(p, u)]
    if reg.pf != PField.YOU and (u > p or m != 0):
        return True
    return reg == RegisterValue(PField.OTHER, 2) and u < p


def pr_reset(c: Configuration, u: int) -> bool:
    """True when u and its partner disagree about the lock progress in a way
    the stepwise locking order can never produce (bad initialization)."""
    p, m = c.states[u]
    if p is None:
        return False
    reg = c.registers[(p, u)]
    if reg.pf != PField.YOU:
        return False
    rm = reg.mf
    return (
        (m == 0 and rm == 2)
        or (m == 2 and rm == 0)
        or (m == 0 and rm == 1 and u > p)
        or (m == 1 and rm == 0 and u < p)
        or (m == 1 and rm == 2 and u < p)
        or (m == 2 and rm == 1 and u > p)
    )


def enabled_rules(c: Configuration, u: int) -> frozenset[Rule]:
    """All rules whose guard holds for node u in configuration c."""
    rules: list[Rule] = []
    p, m = c.states[u]
    regs = c.registers
    if p is None:
        # With an idle pointer the correct own value is (Idle, 0) everywhere;
        # a stale own register blocks Seduction/Marriage on that link.
        for a in c.adj[u]:
            if regs[(u, a)] != IDLE_REGISTER:
                rules.append(Rule(RuleKind.WRITE, a))
                continue
            rau = regs[(a, u)]
            if u < a:
                if rau == IDLE_REGISTER:
                    rules.append(Rule(RuleKind.SEDUCTION, a))
            elif rau == RegisterValue(PField.YOU, 0):
                rules.append(Rule(RuleKind.MARRIAGE, a))
    else:
        for a in c.adj[u]:
            expected = RegisterValue(PField.YOU, m) if a == p else RegisterValue(PField.OTHER, m)
            if regs[(u, a)] != expected:
                rules.append(Rule(RuleKind.WRITE, a))
        # Increase/Reset act only once the own register toward the partner
        # is up to date, so they are mutually exclusive with Write(p).
        if regs[(u, p)] == RegisterValue(PField.YOU, m):
            rin = regs[(p, u)]
            if rin.pf == PField.YOU and (
                (m == 0 and ((u < p and rin.mf == 1) or (u > p and rin.mf == 0)))
                or (m == 1 and ((u < p and rin.mf == 1) or (u > p and rin.mf == 2)))
            ):
                rules.append(INCREASE)
            if pr_abandonment(c, u) or pr_reset(c, u):
                rules.append(RESET)
    return frozenset(rules)


def is_enabled(c: Configuration, action: Action) -> bool:
    return action.rule in enabled_rules(c, action.node)


def apply_step(c: Configuration, actions: Iterable[Action]) -> Configuration:
    """Apply a nonempty action set (at most one action per node) concurrently.

    Every effect is computed from ``c`` — the configuration the guards were
    evaluated in — and each action writes only its own node's variables or
    one own register, so the result is independent of application order.
    """
    actions = list(actions)
    if not actions:
        raise ProtocolError("empty action set")
    seen: set[int] = set()
    for act in actions:
        if act.node in seen:
            raise ProtocolError(f"two actions for node {act.node}")
        seen.add(act.node)
        if not is_enabled(c, act):
            raise DisabledActionError(f"action {act} is not enabled")

    states = dict(c.states)
    registers = dict(c.registers)
    for node, (kind, arg) in actions:
        if kind == RuleKind.WRITE:
            registers[(node, arg)] = correct_register_value(c, node, arg)
        elif kind in (RuleKind.SEDUCTION, RuleKind.MARRIAGE):
            states[node] = NodeState(arg, 0)
        elif kind == RuleKind.INCREASE:
            p, m = c.states[node]
            states[node] = NodeState(p, m + 1)
        else:  # RESET
            states[node] = NodeState(None, 0)
    return Configuration(states, registers, c.adj)


def rule_to_json_obj(rule: Rule) -> dict:
    return {"rule": RULE_NAMES[rule.kind], "arg": rule.arg}


def rule_from_json_obj(obj: dict) -> Rule:
    try:
        kind = RULE_BY_NAME[obj["rule"]]
    except KeyError:
        raise ProtocolError(f"unknown rule {obj.get('rule')!r}") from None
    arg = obj.get("arg")
    if kind in (RuleKind.INCREASE, RuleKind.RESET):
        if arg is not None:
            raise ProtocolError(f"{RULE_NAMES[kind]} takes no link argument")
        return Rule(kind)
    if arg is None:
        raise ProtocolError(f"{RULE_NAMES[kind]} needs a link argument")
    return Rule(kind, int(arg))


def action_to_json_obj(action: Action) -> dict:
    obj = rule_to_json_obj(action.rule)
    return {"node": action.node, **obj}


def action_from_json_obj(obj: dict) -> Action:
    return Action(int(obj["node"]), rule_from_json_obj(obj))


def actions_sorted(actions: Iterable[Action]) -> list[Action]:
    """Deterministic ordering of an action set (by node id)."""
    return sorted(actions, key=lambda a: a.node)


def iter_action_sets(
    per_node: dict[int, Iterable[Rule]]
) -> Iterator[frozenset[Action]]:
    """All nonempty ways to pick at most one enabled rule per node.

    This enumerates exactly the step choices available to an adversarial
    distributed scheduler in one configuration.
    """
    nodes = sorted(u for u, rules in per_node.items() if rules)
    option_lists = [
        [None] + [Action(u, r) for r in sorted(per_node[u])] for u in nodes
    ]
    for combo in itertools.product(*option_lists):
        chosen = [a for a in combo if a is not None]
        if chosen:
            yield frozenset(chosen)
