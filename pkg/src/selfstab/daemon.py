"""Scheduler family standing in for the adversarial distributed daemon.

At every step a scheduler picks a nonempty set of enabled actions, at most
one per node.  The true adversary is a quantifier over all such choices; at
simulation scale we approximate it with a seeded randomized family plus a
greedy adversarial heuristic, and leave exhaustive coverage of every choice
to the model checker on tiny graphs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping

from .protocol import (
    Action,
    Configuration,
    Rule,
    RuleKind,
    RULE_BY_NAME,
    RULE_NAMES,
    enabled_rules,
)


class DaemonError(ValueError):
    """Bad scheduler specification or misuse (e.g. selecting on a stable config)."""


class StableConfigurationError(DaemonError):
    """select() was called on a configuration with no enabled rule anywhere."""


class DaemonKind(str, Enum):
    ADVERSARIAL_RANDOM = "adv-random"
    SEQUENTIAL = "sequential"
    SYNCHRONOUS = "synchronous"
    GREEDY_ADVERSARY = "greedy"


class TieBreak(str, Enum):
    FIXED_PRIORITY = "fixed"
    UNIFORM_RANDOM = "uniform"


# Fixed-priority rule order (ties within a kind broken by lowest link target),
# stated explicitly so sequential/synchronous runs are exactly predictable.
FIXED_PRIORITY = (
    RuleKind.RESET,
    RuleKind.INCREASE,
    RuleKind.MARRIAGE,
    RuleKind.SEDUCTION,
    RuleKind.WRITE,
)
_FIXED_RANK = {kind: i for i, kind in enumerate(FIXED_PRIORITY)}

# Default greedy priority: maximize Resets and Seductions, the rules the
# convergence bounds hinge on.
DEFAULT_GREEDY_PRIORITY = (
    RuleKind.RESET,
    RuleKind.SEDUCTION,
    RuleKind.MARRIAGE,
    RuleKind.INCREASE,
    RuleKind.WRITE,
)


@dataclass(frozen=True)
class DaemonSpec:
    """Fully determines a scheduler: kind, seed, inclusion probability q
    (adv-random only), tie-break, and rule priority (greedy only)."""

    kind: DaemonKind
    seed: int = 0
    q: float = 0.5
    tie_break: TieBreak = TieBreak.FIXED_PRIORITY
    priority: tuple[RuleKind, ...] = DEFAULT_GREEDY_PRIORITY

    def __post_init__(self):
        object.__setattr__(self, "kind", DaemonKind(self.kind))
        object.__setattr__(self, "tie_break", TieBreak(self.tie_break))
        object.__setattr__(self, "priority", tuple(self.priority))
        if not 0.0 < self.q <= 1.0:
            raise DaemonError(f"inclusion probability must satisfy 0 < q <= 1, got {self.q}")
        if sorted(self.priority) != sorted(RuleKind):
            raise DaemonError("priority must be a permutation of the five rule kinds")

    def with_seed(self, seed: int) -> DaemonSpec:
        return replace(self, seed=seed)

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind.value,
            "seed": self.seed,
            "q": self.q,
            "tie_break": self.tie_break.value,
            "priority": [RULE_NAMES[k] for k in self.priority],
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> DaemonSpec:
        try:
            priority = tuple(RULE_BY_NAME[name] for name in obj.get("priority", []))
        except KeyError as exc:
            raise DaemonError(f"unknown rule in priority list: {exc.args[0]!r}") from None
        return cls(
            kind=DaemonKind(obj["kind"]),
            seed=int(obj.get("seed", 0)),
            q=float(obj.get("q", 0.5)),
            tie_break=TieBreak(obj.get("tie_break", "fixed")),
            priority=priority or DEFAULT_GREEDY_PRIORITY,
        )


# A selection outcome is a nonempty frozenset of enabled actions with at most
# one action per node; select() validates this on every call.
SelectionOutcome = frozenset


def _fixed_key(rule: Rule):
    return (_FIXED_RANK[rule.kind], rule.arg if rule.arg is not None else -1)


def _pick_rule(rules: Iterable[Rule], tie_break: TieBreak, rng: random.Random) -> Rule:
    ordered = sorted(rules, key=_fixed_key)
    if tie_break is TieBreak.UNIFORM_RANDOM:
        return ordered[rng.randrange(len(ordered))]
    return ordered[0]


def _greedy_rule(rules: Iterable[Rule], priority, tie_break: TieBreak, rng: random.Random) -> Rule:
    rank = {kind: i for i, kind in enumerate(priority)}
    best_kind = min(rules, key=lambda r: rank[r.kind]).kind
    candidates = sorted(r for r in rules if r.kind == best_kind)
    if tie_break is TieBreak.UNIFORM_RANDOM:
        return candidates[rng.randrange(len(candidates))]
    return candidates[0]


def _validate_outcome(actions, enabled) -> None:
    if not actions:
        raise DaemonError("scheduler produced an empty action set")
    nodes = [a.node for a in actions]
    if len(set(nodes)) != len(nodes):
        raise DaemonError("scheduler selected two actions for one node")
    for act in actions:
        if act.rule not in enabled[act.node]:
            raise DaemonError(f"scheduler selected disabled action {act}")


def select(
    c: Configuration,
    spec: DaemonSpec,
    rng: random.Random,
    enabled: Mapping[int, frozenset[Rule]] | None = None,
) -> frozenset[Action]:
    """One scheduling decision on configuration ``c``.

    ``rng`` is the per-execution generator owned by the caller; passing the
    same seeded generator and inputs reproduces the same outcome.  ``enabled``
    may carry precomputed per-node rule sets to avoid re-evaluating guards.
    """
    if enabled is None:
        enabled = {u: enabled_rules(c, u) for u in c.states}
    eligible = sorted(u for u in enabled if enabled[u])
    if not eligible:
        raise StableConfigurationError("no node has an enabled rule")

    kind = spec.kind
    actions: list[Action]
    if kind is DaemonKind.SEQUENTIAL:
        if spec.tie_break is TieBreak.UNIFORM_RANDOM:
            node = eligible[rng.randrange(len(eligible))]
        else:
            node = eligible[0]
        actions = [Action(node, _pick_rule(enabled[node], spec.tie_break, rng))]
    elif kind is DaemonKind.SYNCHRONOUS:
        actions = [
            Action(u, _pick_rule(enabled[u], spec.tie_break, rng)) for u in eligible
        ]
    elif kind is DaemonKind.GREEDY_ADVERSARY:
        actions = [
            Action(u, _greedy_rule(enabled[u], spec.priority, spec.tie_break, rng))
            for u in eligible
        ]
    else:  # ADVERSARIAL_RANDOM
        included = [u for u in eligible if rng.random() < spec.q]
        if not included:
            # The schedule must be nonempty: force one eligible node in.
            included = [eligible[rng.randrange(len(eligible))]]
        actions = [
            Action(u, _pick_rule(enabled[u], spec.tie_break, rng)) for u in included
        ]

    outcome = frozenset(actions)
    _validate_outcome(outcome, enabled)
    return outcome
