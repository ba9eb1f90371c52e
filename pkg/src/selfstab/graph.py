"""Undirected simple graphs: construction, generators, and edge-list I/O.

Node identifiers are distinct nonnegative integers.  The identifier order is
the total order the protocol guards use for ``u < v`` comparisons, so no
separate rank map exists.  Graphs are immutable after construction and safe
to share between concurrent executions.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field


class GraphFormatError(ValueError):
    """Malformed edge-list input: bad tokens, negative ids, or a self-loop."""


class InvalidGraphError(ValueError):
    """Graph construction arguments violate a precondition (e.g. size < 2)."""


@dataclass(frozen=True)
class Graph:
    """Immutable undirected simple graph.

    ``nodes`` is sorted ascending; ``adj`` maps every node to its sorted
    neighbor tuple.  Adjacency is symmetric, loop-free, and deduplicated by
    construction.
    """

    nodes: tuple[int, ...]
    adj: dict[int, tuple[int, ...]] = field(compare=True)

    @classmethod
    def from_edges(cls, edges, extra_nodes=()) -> Graph:
        """Build a graph from an iterable of (u, v) pairs.

        Edges are symmetrized and deduplicated; the node set is the union of
        all endpoints plus ``extra_nodes`` (which may be isolated).
        """
        adj: dict[int, set[int]] = {}
        for u in extra_nodes:
            _check_id(u)
            adj.setdefault(u, set())
        for u, v in edges:
            _check_id(u)
            _check_id(v)
            if u == v:
                raise GraphFormatError(f"self-loop on node {u}")
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
        nodes = tuple(sorted(adj))
        return cls(nodes, {u: tuple(sorted(adj[u])) for u in nodes})

    def neighbors(self, u: int) -> tuple[int, ...]:
        return self.adj[u]

    def degree(self, u: int) -> int:
        return len(self.adj[u])

    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as sorted (u, v) pairs with u < v."""
        return [(u, v) for u in self.nodes for v in self.adj[u] if u < v]

    def directed_pairs(self) -> list[tuple[int, int]]:
        """All ordered adjacent pairs, in lexicographic order."""
        return [(u, v) for u in self.nodes for v in self.adj[u]]

    def num_edges(self) -> int:
        return sum(len(self.adj[u]) for u in self.nodes) // 2

    def __contains__(self, u: int) -> bool:
        return u in self.adj


def _check_id(u) -> None:
    if not isinstance(u, int) or isinstance(u, bool) or u < 0:
        raise GraphFormatError(f"node id must be a nonnegative integer, got {u!r}")


def max_degree(g: Graph) -> int:
    """Maximum degree over all nodes; 0 for a graph with no edges."""
    return max((len(g.adj[u]) for u in g.nodes), default=0)


def from_edge_list(text: str) -> Graph:
    """Parse edge-list text: one edge per line ``u v``, ``#`` comments ignored.

    A line with a single id declares an isolated node, so that graphs with
    isolated nodes survive a to_edge_list/from_edge_list round trip.
    """
    edges = []
    singles = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        try:
            ids = [int(t) for t in tokens]
        except ValueError:
            raise GraphFormatError(f"line {lineno}: non-integer token in {line!r}") from None
        if len(ids) == 1:
            singles.append(ids[0])
        elif len(ids) == 2:
            if ids[0] == ids[1]:
                raise GraphFormatError(f"line {lineno}: self-loop on node {ids[0]}")
            edges.append((ids[0], ids[1]))
        else:
            raise GraphFormatError(f"line {lineno}: expected 'u v', got {line!r}")
    return Graph.from_edges(edges, extra_nodes=singles)


def to_edge_list(g: Graph) -> str:
    """Serialize to the edge-list format accepted by :func:`from_edge_list`."""
    lines = [f"{u} {v}" for u, v in g.edges()]
    lines.extend(str(u) for u in g.nodes if not g.adj[u])
    return "\n".join(lines) + ("\n" if lines else "")


def path(n: int) -> Graph:
    if n < 2:
        raise InvalidGraphError(f"path graph needs n >= 2, got {n}")
    return Graph.from_edges((i, i + 1) for i in range(n - 1))


def cycle(n: int) -> Graph:
    """Cycle on n nodes; cycle(2) degenerates to the single edge K2."""
    if n < 2:
        raise InvalidGraphError(f"cycle graph needs n >= 2, got {n}")
    return Graph.from_edges((i, (i + 1) % n) for i in range(n))


def complete(n: int) -> Graph:
    if n < 2:
        raise InvalidGraphError(f"complete graph needs n >= 2, got {n}")
    return Graph.from_edges((i, j) for i in range(n) for j in range(i + 1, n))


def star(n: int) -> Graph:
    """Star on n nodes: center 0 joined to leaves 1..n-1."""
    if n < 2:
        raise InvalidGraphError(f"star graph needs n >= 2, got {n}")
    return Graph.from_edges((0, i) for i in range(1, n))


def gnp(n: int, p: float, seed: int, no_isolated: bool = False) -> Graph:
    """Erdos-Renyi G(n, p), deterministic per seed.

    With ``no_isolated`` set, resamples (derived seeds) until no node is
    isolated, and reports failure after 1000 attempts.
    """
    if n < 2:
        raise InvalidGraphError(f"gnp graph needs n >= 2, got {n}")
    if not 0.0 <= p <= 1.0:
        raise InvalidGraphError(f"gnp probability must be in [0, 1], got {p}")
    attempts = 1000 if no_isolated else 1
    for attempt in range(attempts):
        rng = random.Random((seed, attempt) if no_isolated else seed)
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = Graph.from_edges(edges, extra_nodes=range(n))
        if not no_isolated or all(g.adj[u] for u in g.nodes):
            return g
    raise InvalidGraphError(
        f"gnp({n}, {p}) kept producing isolated nodes after {attempts} attempts"
    )


def generate(kind: str, n: int, p: float | None = None, seed: int | None = None,
             no_isolated: bool = False) -> Graph:
    """Dispatch to a named generator: path, cycle, complete, star, or gnp."""
    if kind == "path":
        return path(n)
    if kind == "cycle":
        return cycle(n)
    if kind == "complete":
        return complete(n)
    if kind == "star":
        return star(n)
    if kind == "gnp":
        if p is None:
            raise InvalidGraphError("gnp requires an edge probability")
        return gnp(n, p, 0 if seed is None else seed, no_isolated=no_isolated)
    raise InvalidGraphError(f"unknown graph kind {kind!r}")


_SPEC_RE = re.compile(r"^\s*([a-z]+)\s*\(\s*([^()]*)\s*\)\s*$")


def parse_graph_spec(spec: str) -> Graph:
    """Parse a compact generator spec like ``path(5)`` or ``gnp(20,0.3,7)``."""
    m = _SPEC_RE.match(spec)
    if not m:
        raise InvalidGraphError(f"bad graph spec {spec!r}")
    kind, argstr = m.group(1), m.group(2)
    args = [a.strip() for a in argstr.split(",")] if argstr.strip() else []
    try:
        if kind == "gnp":
            if len(args) not in (2, 3):
                raise InvalidGraphError(f"gnp spec needs (n, p[, seed]): {spec!r}")
            n, p = int(args[0]), float(args[1])
            seed = int(args[2]) if len(args) == 3 else 0
            return gnp(n, p, seed)
        if len(args) != 1:
            raise InvalidGraphError(f"{kind} spec needs a single size: {spec!r}")
        return generate(kind, int(args[0]))
    except ValueError as exc:
        raise InvalidGraphError(f"bad graph spec {spec!r}: {exc}") from None
