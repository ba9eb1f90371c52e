"""Execution driver: initial configurations, the step loop, move accounting,
trace recording, replay, and benchmark sweeps.

A *move* is one executed rule instance; a step executes a scheduler-chosen
set of moves.  Runs are reproducible bit-for-bit from (graph, initial
configuration, scheduler spec): all randomness flows through seeded
generators and every serialization is canonical.
"""

from __future__ import annotations

import concurrent.futures
import csv
import hashlib
import json
import random
from dataclasses import dataclass, field

from .daemon import DaemonSpec, select
from .graph import Graph, max_degree
from .protocol import (
    Action,
    Configuration,
    DisabledActionError,
    NodeState,
    PField,
    ProtocolError,
    REGISTER_DOMAIN,
    RegisterValue,
    Rule,
    RuleKind,
    RULE_NAMES,
    action_from_json_obj,
    action_to_json_obj,
    actions_sorted,
    apply_step,
    correct_register_value,
    enabled_rules,
)


class TraceFormatError(ValueError):
    """Malformed or internally inconsistent trace JSONL."""


# -- initial configurations --------------------------------------------------


@dataclass(frozen=True)
class InitSpec:
    """How to produce an initial configuration.

    kind: "allnull" (every pointer None, all registers idle), "legit" (a
    deterministic greedy maximal matching, fully locked and stable),
    "random" (uniform arbitrary initialization, seeded), or "explicit".
    """

    kind: str
    seed: int = 0
    config: Configuration | None = None

    def __post_init__(self):
        if self.kind not in ("allnull", "legit", "random", "explicit"):
            raise ValueError(f"unknown init kind {self.kind!r}")
        if self.kind == "explicit" and self.config is None:
            raise ValueError("explicit init needs a configuration")

    def to_json_obj(self) -> dict:
        return {"kind": self.kind, "seed": self.seed}


def all_null_configuration(g: Graph) -> Configuration:
    """Every p = None, m = 0, every register idle.  Not necessarily stable:
    idle neighbors enable Seduction immediately."""
    states = {u: NodeState(None, 0) for u in g.nodes}
    regs = {pair: RegisterValue(PField.IDLE, 0) for pair in g.directed_pairs()}
    return Configuration(states, regs, g.adj)


def legitimate_configuration(g: Graph) -> Configuration:
    """A stable legitimate configuration: greedy maximal matching over sorted
    edges, matched pairs fully locked at m = 2, all registers consistent."""
    partner: dict[int, int] = {}
    for u, v in g.edges():
        if u not in partner and v not in partner:
            partner[u] = v
            partner[v] = u
    states = {
        u: NodeState(partner[u], 2) if u in partner else NodeState(None, 0)
        for u in g.nodes
    }
    regs = {}
    for u, v in g.directed_pairs():
        p, m = states[u]
        if p is None:
            regs[(u, v)] = RegisterValue(PField.IDLE, 0)
        elif p == v:
            regs[(u, v)] = RegisterValue(PField.YOU, m)
        else:
            regs[(u, v)] = RegisterValue(PField.OTHER, m)
    return Configuration(states, regs, g.adj)


def random_configuration(g: Graph, seed: int) -> Configuration:
    """Uniform arbitrary initialization: per node, p uniform over neighbors
    plus None and m uniform over {0,1,2}; per register, uniform over the nine
    register values.  Deterministic per seed."""
    rng = random.Random(seed)
    states = {}
    for u in g.nodes:
        nbrs = g.adj[u]
        k = rng.randrange(len(nbrs) + 1)
        p = None if k == 0 else nbrs[k - 1]
        states[u] = NodeState(p, rng.randrange(3))
    regs = {
        pair: REGISTER_DOMAIN[rng.randrange(9)] for pair in g.directed_pairs()
    }
    return Configuration(states, regs, g.adj)


def initial_configuration(g: Graph, init: InitSpec) -> Configuration:
    if init.kind == "allnull":
        return all_null_configuration(g)
    if init.kind == "legit":
        return legitimate_configuration(g)
    if init.kind == "random":
        return random_configuration(g, init.seed)
    conf = init.config
    conf.validate(g)
    return conf


def default_move_budget(g: Graph) -> int:
    """200 * n * max_degree^3 + 1000: generous slack over the proven
    worst-case move order so exhausting it signals a bug, not tuning."""
    return 200 * len(g.nodes) * max_degree(g) ** 3 + 1000


# -- traces ------------------------------------------------------------------


@dataclass
class Trace:
    """One recorded execution.

    ``steps`` holds (action set, resulting-configuration digest) per step;
    ``configs``, when recorded, holds the full configuration sequence
    [initial, after step 1, ...] (length len(steps) + 1).
    """

    graph: Graph
    initial: Configuration
    steps: list[tuple[frozenset[Action], str]]
    outcome: str  # "stable" | "budget"
    final: Configuration
    moves_by_rule: dict[str, int]
    moves_by_node: dict[int, int]
    daemon: DaemonSpec | None = None
    init_spec: InitSpec | None = None
    configs: list[Configuration] | None = field(default=None, repr=False)

    @property
    def total_moves(self) -> int:
        return sum(self.moves_by_rule.values())

    @property
    def stabilized(self) -> bool:
        return self.outcome == "stable"


# -- packed incremental state (digest support) -------------------------------


class _PackedState:
    """Mutable packed byte image of a configuration, kept in step with the
    dict representation so per-step digests cost one hash of a small buffer.
    Layout matches Configuration.canonical_bytes."""

    __slots__ = ("buf", "node_off", "slot_of", "pair_off")

    def __init__(self, g: Graph, c: Configuration):
        nodes = g.nodes
        self.node_off = {u: 3 * i for i, u in enumerate(nodes)}
        self.slot_of = {
            u: {v: k + 1 for k, v in enumerate(g.adj[u])} for u in nodes
        }
        pairs = g.directed_pairs()
        base = 3 * len(nodes)
        self.pair_off = {pair: base + i for i, pair in enumerate(pairs)}
        buf = bytearray(base + len(pairs))
        for u in nodes:
            p, m = c.states[u]
            slot = 0 if p is None else self.slot_of[u][p]
            off = self.node_off[u]
            buf[off] = slot & 0xFF
            buf[off + 1] = (slot >> 8) & 0xFF
            buf[off + 2] = m
        for pair, (pf, mf) in c.registers.items():
            buf[self.pair_off[pair]] = pf * 3 + mf
        self.buf = buf

    def set_node(self, u: int, p: int | None, m: int) -> None:
        slot = 0 if p is None else self.slot_of[u][p]
        off = self.node_off[u]
        self.buf[off] = slot & 0xFF
        self.buf[off + 1] = (slot >> 8) & 0xFF
        self.buf[off + 2] = m

    def set_register(self, pair: tuple[int, int], value: RegisterValue) -> None:
        self.buf[self.pair_off[pair]] = value.pf * 3 + value.mf

    def digest(self) -> str:
        return hashlib.sha256(bytes(self.buf)).hexdigest()[:16]


# -- the step loop -----------------------------------------------------------


def run(
    g: Graph,
    init: Configuration,
    spec: DaemonSpec,
    move_budget: int | None = None,
    record_configs: bool = False,
    init_spec: InitSpec | None = None,
) -> Trace:
    """Drive select/apply until no rule is enabled anywhere (outcome
    "stable") or the cumulative move count exceeds ``move_budget``
    ("budget")."""
    if move_budget is None:
        move_budget = default_move_budget(g)
    if move_budget < 1:
        raise ValueError(f"move budget must be >= 1, got {move_budget}")
    init.validate(g)

    rng = random.Random(spec.seed)
    states = dict(init.states)
    registers = dict(init.registers)
    work = Configuration(states, registers, g.adj)
    packed = _PackedState(g, init)

    enabled = {u: enabled_rules(work, u) for u in g.nodes}
    steps: list[tuple[frozenset[Action], str]] = []
    configs = [init] if record_configs else None
    moves_by_rule = {name: 0 for name in RULE_NAMES.values()}
    moves_by_node = {u: 0 for u in g.nodes}
    total = 0
    outcome = "stable"

    while any(enabled.values()):
        actions = select(work, spec, rng, enabled)
        # Effects read only the acting node's own pre-step cells, and each
        # node acts at most once, so in-place application is exact.
        affected = set()
        for node, (kind, arg) in actions:
            affected.add(node)
            if kind == RuleKind.WRITE:
                value = correct_register_value(work, node, arg)
                registers[(node, arg)] = value
                packed.set_register((node, arg), value)
                affected.add(arg)
            elif kind in (RuleKind.SEDUCTION, RuleKind.MARRIAGE):
                states[node] = NodeState(arg, 0)
                packed.set_node(node, arg, 0)
            elif kind == RuleKind.INCREASE:
                p, m = states[node]
                states[node] = NodeState(p, m + 1)
                packed.set_node(node, p, m + 1)
            else:  # RESET
                states[node] = NodeState(None, 0)
                packed.set_node(node, None, 0)
            moves_by_rule[RULE_NAMES[kind]] += 1
            moves_by_node[node] += 1
            total += 1
        for u in affected:
            enabled[u] = enabled_rules(work, u)
        steps.append((actions, packed.digest()))
        if record_configs:
            configs.append(Configuration(dict(states), dict(registers), g.adj))
        if total > move_budget:
            outcome = "budget"
            break

    final = Configuration(dict(states), dict(registers), g.adj)
    return Trace(
        graph=g,
        initial=init,
        steps=steps,
        outcome=outcome,
        final=final,
        moves_by_rule=moves_by_rule,
        moves_by_node=moves_by_node,
        daemon=spec,
        init_spec=init_spec,
        configs=configs,
    )


def replay(g: Graph, init: Configuration, action_sets) -> list[Configuration]:
    """Apply a scripted sequence of action sets, validating enabledness at
    every step; returns the full configuration sequence starting at ``init``.
    Raises DisabledActionError naming the offending step."""
    init.validate(g)
    configs = [init]
    current = init
    for i, actions in enumerate(action_sets):
        try:
            current = apply_step(current, actions)
        except ProtocolError as exc:
            raise DisabledActionError(f"step {i}: {exc}") from None
        configs.append(current)
    return configs


# -- trace JSONL ---------------------------------------------------------------


def graph_to_json_obj(g: Graph) -> dict:
    return {"nodes": list(g.nodes), "edges": [list(e) for e in g.edges()]}


def graph_from_json_obj(obj: dict) -> Graph:
    return Graph.from_edges(
        ((int(u), int(v)) for u, v in obj["edges"]),
        extra_nodes=[int(u) for u in obj["nodes"]],
    )


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_trace_jsonl(trace: Trace, fh) -> None:
    """Serialize a trace: metadata line, one line per step, final line."""
    meta = {
        "graph": graph_to_json_obj(trace.graph),
        "daemon": trace.daemon.to_json_obj() if trace.daemon else None,
        "init": trace.init_spec.to_json_obj() if trace.init_spec else None,
        "seed": trace.init_spec.seed if trace.init_spec else None,
        "initial": trace.initial.to_json_obj(),
    }
    fh.write(_dump(meta) + "\n")
    for i, (actions, digest) in enumerate(trace.steps, start=1):
        fh.write(
            _dump(
                {
                    "step": i,
                    "actions": [action_to_json_obj(a) for a in actions_sorted(actions)],
                    "hash": digest,
                }
            )
            + "\n"
        )
    fh.write(
        _dump(
            {
                "outcome": trace.outcome,
                "moves": trace.total_moves,
                "final": trace.final.to_json_obj(),
            }
        )
        + "\n"
    )


def load_trace_jsonl(fh) -> Trace:
    """Parse and re-validate a trace: replays every step, checking action
    enabledness and per-step digests, and reconstructs full configurations.
    The returned trace always carries ``configs``."""
    lines = [line for line in (raw.strip() for raw in fh) if line]
    if len(lines) < 2:
        raise TraceFormatError("trace needs at least a metadata and a final line")
    try:
        meta = json.loads(lines[0])
        g = graph_from_json_obj(meta["graph"])
        initial = Configuration.from_json_obj(meta["initial"])
        daemon = DaemonSpec.from_json_obj(meta["daemon"]) if meta.get("daemon") else None
        final_obj = json.loads(lines[-1])
        declared_final = Configuration.from_json_obj(final_obj["final"])
        outcome = final_obj["outcome"]
        declared_moves = int(final_obj["moves"])
    except (KeyError, ValueError, TypeError) as exc:
        raise TraceFormatError(f"malformed trace: {exc}") from None
    if outcome not in ("stable", "budget"):
        raise TraceFormatError(f"unknown outcome {outcome!r}")

    initial.validate(g)
    steps: list[tuple[frozenset[Action], str]] = []
    configs = [initial]
    current = initial
    moves_by_rule = {name: 0 for name in RULE_NAMES.values()}
    moves_by_node = {u: 0 for u in g.nodes}
    for idx, line in enumerate(lines[1:-1], start=1):
        try:
            obj = json.loads(line)
            actions = frozenset(action_from_json_obj(a) for a in obj["actions"])
            digest = obj["hash"]
        except (KeyError, ValueError, TypeError) as exc:
            raise TraceFormatError(f"step {idx}: malformed line ({exc})") from None
        try:
            current = apply_step(current, actions)
        except ProtocolError as exc:
            raise TraceFormatError(f"step {idx}: {exc}") from None
        if current.digest() != digest:
            raise TraceFormatError(f"step {idx}: configuration digest mismatch")
        for act in actions:
            moves_by_rule[RULE_NAMES[act.rule.kind]] += 1
            moves_by_node[act.node] += 1
        steps.append((actions, digest))
        configs.append(current)

    if current != declared_final:
        raise TraceFormatError("final configuration does not match the replayed steps")
    total = sum(moves_by_rule.values())
    if total != declared_moves:
        raise TraceFormatError(f"declared {declared_moves} moves but steps hold {total}")
    return Trace(
        graph=g,
        initial=initial,
        steps=steps,
        outcome=outcome,
        final=current,
        moves_by_rule=moves_by_rule,
        moves_by_node=moves_by_node,
        daemon=daemon,
        init_spec=None,
        configs=configs,
    )


# -- sweeps --------------------------------------------------------------------


SWEEP_COLUMNS = [
    "graph",
    "daemon",
    "seed",
    "n",
    "max_degree",
    "moves",
    "write_moves",
    "seduction_moves",
    "marriage_moves",
    "increase_moves",
    "reset_moves",
    "stabilized",
    "ratio",
]
SWEEP_CHECK_COLUMNS = SWEEP_COLUMNS + [
    "legitimate",
    "stable_registers",
    "monitor_violations",
]


def _sweep_task(task) -> dict:
    name, g, seed, spec, budget, check = task
    init = random_configuration(g, seed)
    trace = run(g, init, spec.with_seed(seed), move_budget=budget,
                record_configs=check, init_spec=InitSpec("random", seed))
    delta = max_degree(g)
    denom = len(g.nodes) * delta ** 3
    row = {
        "graph": name,
        "daemon": spec.kind.value,
        "seed": seed,
        "n": len(g.nodes),
        "max_degree": delta,
        "moves": trace.total_moves,
        "write_moves": trace.moves_by_rule["Write"],
        "seduction_moves": trace.moves_by_rule["Seduction"],
        "marriage_moves": trace.moves_by_rule["Marriage"],
        "increase_moves": trace.moves_by_rule["Increase"],
        "reset_moves": trace.moves_by_rule["Reset"],
        "stabilized": trace.stabilized,
        "ratio": (trace.total_moves / denom) if denom else 0.0,
    }
    if check:
        from . import verifier  # local import keeps layering one-way

        row["legitimate"] = trace.stabilized and verifier.is_legitimate(g, trace.final)
        row["stable_registers"] = trace.stabilized and verifier.check_stable_registers(
            g, trace.final
        )
        closure = verifier.check_closure(trace)
        inter = verifier.check_interleavings(trace)
        row["monitor_violations"] = sum(
            1 for r in closure.results + inter.results if not r.passed
        )
    return row


def sweep(
    graphs,
    inits_per_graph: int,
    spec: DaemonSpec,
    budget_rule=None,
    seed_base: int = 0,
    workers: int = 1,
    check: bool = False,
) -> list[dict]:
    """Run ``inits_per_graph`` seeded random-initialization executions per
    graph and return one row per run.

    ``graphs`` is a list of (name, Graph).  Per-run scheduler seed equals the
    initialization seed.  ``check`` adds legitimacy, register, and trace
    monitor columns (used by the acceptance suite).
    """
    budget_of = budget_rule or default_move_budget
    tasks = [
        (name, g, seed_base + i, spec, budget_of(g), check)
        for name, g in graphs
        for i in range(inits_per_graph)
    ]
    if workers <= 1 or len(tasks) <= 1:
        return [_sweep_task(t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        chunk = max(1, len(tasks) // (workers * 8))
        return list(pool.map(_sweep_task, tasks, chunksize=chunk))


def write_sweep_csv(rows, fh, check: bool = False) -> None:
    columns = SWEEP_CHECK_COLUMNS if check else SWEEP_COLUMNS
    writer = csv.DictWriter(fh, fieldnames=columns)
    writer.writeheader()
    for row in rows:
        out = dict(row)
        out["stabilized"] = str(bool(row["stabilized"])).lower()
        out["ratio"] = f"{row['ratio']:.6f}"
        for key in ("legitimate", "stable_registers"):
            if key in out:
                out[key] = str(bool(out[key])).lower()
        writer.writerow(out)
