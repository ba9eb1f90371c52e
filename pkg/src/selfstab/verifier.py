"""Correctness checks: stability, maximal-matching legitimacy, matched-edge
state classification, closed-region monitoring, and trace-level interleaving
monitors.

The monitors test conclusions of the convergence analysis on concrete
traces.  A monitor failure is an implementation bug signal, not a refutation
of the analysis; reports carry the first offending step so the failing trace
window can be inspected.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .graph import Graph, max_degree
from .protocol import (
    Action,
    Configuration,
    PField,
    ProtocolError,
    RegisterValue,
    Rule,
    RuleKind,
    enabled_rules,
    correct_register_value,
)


# -- stability and legitimacy -------------------------------------------------


def is_stable(c: Configuration) -> bool:
    """No node has any enabled rule."""
    return all(not enabled_rules(c, u) for u in c.states)


def matched_pairs(c: Configuration) -> set[tuple[int, int]]:
    """All mutually pointing adjacent pairs, as sorted (u, v) tuples."""
    pairs = set()
    for u, (p, _) in c.states.items():
        if p is not None and u < p and c.states[p].p == u:
            pairs.add((u, p))
    return pairs


def is_legitimate(g: Graph, c: Configuration) -> bool:
    """Every non-null pointer is mutual, and no idle node has an idle
    neighbor; equivalently, the mutual pairs form a maximal matching."""
    for u in g.nodes:
        p = c.states[u].p
        if p is None:
            if any(c.states[v].p is None for v in g.adj[u]):
                return False
        elif c.states[p].p != u:
            return False
    return True


def check_stable_registers(g: Graph, c: Configuration) -> bool:
    """In a stable configuration every register matches its correct value
    (otherwise a Write would be enabled).  Errors if ``c`` is not stable."""
    if not is_stable(c):
        raise ProtocolError("check_stable_registers requires a stable configuration")
    return all(
        c.registers[(u, v)] == correct_register_value(c, u, v)
        for (u, v) in c.registers
    )


# -- matched-edge state classification -----------------------------------------


class EdgeStateKind(Enum):
    UPDATED_CORRECT = "updated"
    TO_UPDATE_CORRECT = "toUpdate"
    MATCHED_INCORRECT = "matchedIncorrect"
    NOT_MATCHED = "notMatched"


@dataclass(frozen=True)
class EdgeState:
    """Classification of an edge (s, t), s < t.  ``alpha``/``beta`` are the
    endpoint m-values when the endpoints are mutually matched."""

    kind: EdgeStateKind
    alpha: int | None = None
    beta: int | None = None

    @property
    def is_correct(self) -> bool:
        return self.kind in (EdgeStateKind.UPDATED_CORRECT, EdgeStateKind.TO_UPDATE_CORRECT)


UPDATED_PAIRS = {(0, 0), (0, 1), (1, 1), (2, 1), (2, 2)}
TO_UPDATE_LAG_HIGH = {(0, 1), (2, 2)}  # higher-id side's register lags by one
TO_UPDATE_LAG_LOW = {(1, 1), (2, 1)}   # lower-id side's register lags by one


def classify_edge(c: Configuration, s: int, t: int) -> EdgeState:
    """Classify edge (s, t).  The s < t orientation is a contract, not
    auto-sorted: the correct-state region is asymmetric in the id order and
    silent sorting would mask orientation bugs."""
    if s >= t:
        raise ProtocolError(f"classify_edge requires s < t, got ({s}, {t})")
    if (s, t) not in c.registers:
        raise ProtocolError(f"({s}, {t}) is not an edge")
    if c.states[s].p != t or c.states[t].p != s:
        return EdgeState(EdgeStateKind.NOT_MATCHED)
    alpha, beta = c.states[s].m, c.states[t].m
    rst, rts = c.registers[(s, t)], c.registers[(t, s)]
    you = PField.YOU
    if (alpha, beta) in UPDATED_PAIRS and rst == (you, alpha) and rts == (you, beta):
        return EdgeState(EdgeStateKind.UPDATED_CORRECT, alpha, beta)
    if (alpha, beta) in TO_UPDATE_LAG_HIGH and rst == (you, alpha) and rts == (you, beta - 1):
        return EdgeState(EdgeStateKind.TO_UPDATE_CORRECT, alpha, beta)
    if (alpha, beta) in TO_UPDATE_LAG_LOW and rst == (you, alpha - 1) and rts == (you, beta):
        return EdgeState(EdgeStateKind.TO_UPDATE_CORRECT, alpha, beta)
    return EdgeState(EdgeStateKind.MATCHED_INCORRECT, alpha, beta)


# Closed-region transition table: for each correct state, the single relevant
# rule an endpoint may fire and the exact successor.  Quadruples are
# (m_s, m_t, r_st.m, r_ts.m); registers keep pf = You throughout.
_U = EdgeStateKind.UPDATED_CORRECT
_T = EdgeStateKind.TO_UPDATE_CORRECT
# key: (kind, alpha, beta) -> (acting side: "s"|"t", rule kind,
#                              successor quadruple, successor (kind, a, b))
CLOSURE_TABLE = {
    (_U, 0, 0): ("t", RuleKind.INCREASE, (0, 1, 0, 0), (_T, 0, 1)),
    (_U, 0, 1): ("s", RuleKind.INCREASE, (1, 1, 0, 1), (_T, 1, 1)),
    (_U, 1, 1): ("s", RuleKind.INCREASE, (2, 1, 1, 1), (_T, 2, 1)),
    (_U, 2, 1): ("t", RuleKind.INCREASE, (2, 2, 2, 1), (_T, 2, 2)),
    (_U, 2, 2): None,
    (_T, 0, 1): ("t", RuleKind.WRITE, (0, 1, 0, 1), (_U, 0, 1)),
    (_T, 1, 1): ("s", RuleKind.WRITE, (1, 1, 1, 1), (_U, 1, 1)),
    (_T, 2, 1): ("s", RuleKind.WRITE, (2, 1, 2, 1), (_U, 2, 1)),
    (_T, 2, 2): ("t", RuleKind.WRITE, (2, 2, 2, 2), (_U, 2, 2)),
}


def _edge_quadruple(c: Configuration, s: int, t: int) -> tuple[int, int, int, int]:
    return (c.states[s].m, c.states[t].m, c.registers[(s, t)].mf, c.registers[(t, s)].mf)


# -- monitor reports ------------------------------------------------------------


@dataclass
class MonitorResult:
    monitor: str
    passed: bool
    step: int | None = None
    node: int | None = None
    detail: str = ""

    def to_json_obj(self) -> dict:
        return {
            "monitor": self.monitor,
            "pass": self.passed,
            "step": self.step,
            "node": self.node,
            "detail": self.detail,
        }


@dataclass
class MonitorReport:
    results: list[MonitorResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json_obj(self) -> dict:
        return {
            "pass": self.passed,
            "monitors": [r.to_json_obj() for r in self.results],
        }

    def first_failure(self) -> MonitorResult | None:
        return next((r for r in self.results if not r.passed), None)


# -- closure monitor -------------------------------------------------------------


def check_closure(trace) -> MonitorReport:
    """Once an edge is in a correct state it stays correct forever, its
    endpoints never fire Seduction/Marriage/Reset, and every change follows
    the closed-region transition table exactly.

    ``trace`` must carry per-step configurations (run with
    ``record_configs=True`` or load from JSONL).
    """
    if trace.configs is None:
        raise ValueError("closure check needs a trace recorded with per-step configurations")
    g: Graph = trace.graph
    configs: list[Configuration] = trace.configs
    edges = g.edges()
    classes = {e: classify_edge(configs[0], *e) for e in edges}
    incident = {u: [e for e in edges if u in e] for u in g.nodes}

    for i, (actions, _) in enumerate(trace.steps):
        before = configs[i]
        after = configs[i + 1]
        affected: set[tuple[int, int]] = set()
        for node, rule in actions:
            if rule.kind == RuleKind.WRITE:
                e = (min(node, rule.arg), max(node, rule.arg))
                affected.add(e)
            else:
                affected.update(incident[node])
                if rule.kind != RuleKind.INCREASE:
                    # Seduction/Marriage/Reset by an endpoint of a correct edge
                    for e in incident[node]:
                        if classes[e].is_correct:
                            return _fail_report(
                                "closure", i, node,
                                f"edge {e} is correct but {node} fired "
                                f"{rule} at step {i}",
                            )
        for e in affected:
            old = classes[e]
            new = classify_edge(after, *e)
            if old.is_correct:
                if not new.is_correct:
                    return _fail_report(
                        "closure", i, None,
                        f"edge {e} left the correct region at step {i}: "
                        f"{old.kind.value}({old.alpha},{old.beta}) -> "
                        f"{new.kind.value}",
                    )
                violation = _check_table_row(e, old, new, before, after, actions, i)
                if violation is not None:
                    return violation
            classes[e] = new
    return MonitorReport([MonitorResult("closure", True)])


def _check_table_row(edge, old, new, before, after, actions, step) -> MonitorReport | None:
    s, t = edge
    row = CLOSURE_TABLE[(old.kind, old.alpha, old.beta)]
    relevant = []
    for node, rule in actions:
        if node == s and (rule == Rule(RuleKind.WRITE, t) or rule.kind == RuleKind.INCREASE):
            relevant.append(("s", rule.kind))
        elif node == t and (rule == Rule(RuleKind.WRITE, s) or rule.kind == RuleKind.INCREASE):
            relevant.append(("t", rule.kind))
    if not relevant:
        if _edge_quadruple(after, s, t) != _edge_quadruple(before, s, t):
            return _fail_report(
                "closure", step, None,
                f"edge {edge} changed at step {step} without a relevant rule",
            )
        return None
    if row is None or len(relevant) > 1 or relevant[0] != (row[0], row[1]):
        return _fail_report(
            "closure", step, None,
            f"edge {edge} in {old.kind.value}({old.alpha},{old.beta}) saw "
            f"relevant rules {relevant} at step {step}; table allows "
            f"{row[:2] if row else 'none'}",
        )
    _, _, succ_quad, (succ_kind, sa, sb) = row
    if _edge_quadruple(after, s, t) != succ_quad or (new.kind, new.alpha, new.beta) != (
        succ_kind,
        sa,
        sb,
    ):
        return _fail_report(
            "closure", step, None,
            f"edge {edge} did not follow the table row at step {step}: "
            f"got {_edge_quadruple(after, s, t)} / {new.kind.value}",
        )
    return None


def _fail_report(monitor, step, node, detail) -> MonitorReport:
    return MonitorReport([MonitorResult(monitor, False, step=step, node=node, detail=detail)])


# -- interleaving monitors ---------------------------------------------------------


def check_interleavings(trace) -> MonitorReport:
    """Four monitors over the action sequence:

    * M1 -- between two Marriage(s) moves by t there is a Seduction(t) by s;
    * M2 -- between consecutive Resets by a node there is exactly one
      Seduction/Marriage by that node;
    * M3 -- within any three consecutive Increases by a node there is a Reset
      by that node strictly inside the spanning interval;
    * M4 -- per ordered adjacent pair (s, t) with s < t, the number of
      Seduction(t) moves by s is at most 2*max_degree + 3.
    """
    steps = [actions for actions, _ in trace.steps]
    by_node: dict[int, list[tuple[int, Rule]]] = {}
    marriage_steps: dict[tuple[int, int], list[int]] = {}
    seduction_steps: dict[tuple[int, int], list[int]] = {}
    for i, actions in enumerate(steps):
        for node, rule in actions:
            by_node.setdefault(node, []).append((i, rule))
            if rule.kind == RuleKind.MARRIAGE:
                marriage_steps.setdefault((node, rule.arg), []).append(i)
            elif rule.kind == RuleKind.SEDUCTION:
                seduction_steps.setdefault((node, rule.arg), []).append(i)

    results = [
        _monitor_m1(marriage_steps, seduction_steps),
        _monitor_m2(by_node),
        _monitor_m3(by_node),
        _monitor_m4(seduction_steps, max_degree(trace.graph)),
    ]
    return MonitorReport(results)


def _monitor_m1(marriage_steps, seduction_steps) -> MonitorResult:
    for (t, s), msteps in sorted(marriage_steps.items()):
        sed = seduction_steps.get((s, t), [])
        for i, j in zip(msteps, msteps[1:]):
            if not any(i < k < j for k in sed):
                return MonitorResult(
                    "M1", False, step=j, node=t,
                    detail=f"node {t} married {s} at steps {i} and {j} with no "
                    f"Seduction({t}) by {s} in between",
                )
    return MonitorResult("M1", True)


def _monitor_m2(by_node) -> MonitorResult:
    for u, moves in sorted(by_node.items()):
        resets = [i for i, r in moves if r.kind == RuleKind.RESET]
        sm = [i for i, r in moves if r.kind in (RuleKind.SEDUCTION, RuleKind.MARRIAGE)]
        for i, j in zip(resets, resets[1:]):
            count = sum(1 for k in sm if i < k < j)
            if count != 1:
                reading = (
                    "violates the at-least-once reading too"
                    if count == 0
                    else "at-least-once reading still holds"
                )
                return MonitorResult(
                    "M2", False, step=j, node=u,
                    detail=f"node {u} reset at steps {i} and {j} with {count} "
                    f"Seduction/Marriage moves in between (expected exactly 1; "
                    f"{reading})",
                )
    return MonitorResult("M2", True)


def _monitor_m3(by_node) -> MonitorResult:
    for u, moves in sorted(by_node.items()):
        incs = [i for i, r in moves if r.kind == RuleKind.INCREASE]
        resets = [i for i, r in moves if r.kind == RuleKind.RESET]
        for a, b, c in zip(incs, incs[1:], incs[2:]):
            if not any(a < k < c for k in resets):
                return MonitorResult(
                    "M3", False, step=c, node=u,
                    detail=f"node {u} fired three Increases at steps "
                    f"({a},{b},{c}) with no Reset strictly inside",
                )
    return MonitorResult("M3", True)


def _monitor_m4(seduction_steps, delta: int) -> MonitorResult:
    bound = 2 * delta + 3
    for (s, t), steps in sorted(seduction_steps.items()):
        if len(steps) > bound:
            return MonitorResult(
                "M4", False, step=steps[bound], node=s,
                detail=f"node {s} seduced {t} {len(steps)} times, above the "
                f"2*Delta+3 = {bound} bound",
            )
    return MonitorResult("M4", True)


# -- eligibility exclusivity (fuzz target) --------------------------------------


def exclusivity_violations(c: Configuration) -> list[str]:
    """Mutual-exclusion facts about eligibility, checkable on any
    configuration:

    * a node with p = None is never eligible for Increase or Reset, and per
      neighbor for at most one of Write/Marriage/Seduction toward it;
    * a node with p != None is never eligible for Marriage or Seduction, for
      at most one of {Write(p), Increase, Reset}, and toward any other
      neighbor only for Write.
    """
    problems = []
    for u, (p, _) in c.states.items():
        rules = enabled_rules(c, u)
        kinds = {r.kind for r in rules}
        if p is None:
            if RuleKind.INCREASE in kinds or RuleKind.RESET in kinds:
                problems.append(f"node {u} (p=None) eligible for Increase/Reset")
            for v in c.adj[u]:
                per_link = [
                    r for r in rules
                    if r.arg == v and r.kind in (RuleKind.WRITE, RuleKind.MARRIAGE, RuleKind.SEDUCTION)
                ]
                if len(per_link) > 1:
                    problems.append(
                        f"node {u} (p=None) eligible for {len(per_link)} rules "
                        f"toward {v}: {sorted(map(str, per_link))}"
                    )
        else:
            if RuleKind.MARRIAGE in kinds or RuleKind.SEDUCTION in kinds:
                problems.append(f"node {u} (p={p}) eligible for Marriage/Seduction")
            focus = [
                r for r in rules
                if r == Rule(RuleKind.WRITE, p) or r.kind in (RuleKind.INCREASE, RuleKind.RESET)
            ]
            if len(focus) > 1:
                problems.append(
                    f"node {u} (p={p}) eligible for {sorted(map(str, focus))} together"
                )
            for r in rules:
                if r.arg is not None and r.arg != p and r.kind != RuleKind.WRITE:
                    problems.append(f"node {u} (p={p}) eligible for {r} toward {r.arg}")
    return problems
