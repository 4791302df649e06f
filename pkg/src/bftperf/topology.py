"""Clique, Folded-Clos and Dragonfly switch graphs with ROMM routing.

Hop distances count switches, not links: a path between validators on
the same edge switch has length 1, and the clique has no switches at all.
"""

from collections import deque
from dataclasses import dataclass, field

CLIQUE = "clique"
FOLDED_CLOS = "folded_clos"
DRAGONFLY = "dragonfly"

KINDS = (CLIQUE, FOLDED_CLOS, DRAGONFLY)

_ALIASES = {
    "clique": CLIQUE,
    "c": CLIQUE,
    "folded_clos": FOLDED_CLOS,
    "foldedclos": FOLDED_CLOS,
    "folded-clos": FOLDED_CLOS,
    "fc": FOLDED_CLOS,
    "f": FOLDED_CLOS,
    "dragonfly": DRAGONFLY,
    "df": DRAGONFLY,
    "d": DRAGONFLY,
}


class TopologyError(ValueError):
    pass


def canonical_kind(kind):
    try:
        return _ALIASES[str(kind).lower()]
    except KeyError:
        raise TopologyError(f"unknown topology kind {kind!r}") from None


@dataclass(frozen=True)
class Switch:
    id: int
    level: int = 1   # Folded-Clos level (1 = edge); always 1 for Dragonfly
    group: int = 0   # Dragonfly group, or Folded-Clos pod/plane index
    index: int = 0   # position inside the group
    edge: bool = True


@dataclass
class TopologyGraph:
    kind: str
    params: tuple
    switches: list = field(default_factory=list)
    adjacency: list = field(default_factory=list)  # sorted neighbour lists

    @property
    def num_switches(self):
        return len(self.switches)

    @property
    def edge_switches(self):
        return [s.id for s in self.switches if s.edge]

    @property
    def links(self):
        return [(a, b) for a, nbrs in enumerate(self.adjacency) for b in nbrs if a < b]

    def degree(self, s):
        return len(self.adjacency[s])

    def distances(self):
        """All-pairs BFS distance in links (cached)."""
        cached = getattr(self, "_dist", None)
        if cached is None:
            cached = [_bfs(self.adjacency, s) for s in range(self.num_switches)]
            self._dist = cached
        return cached

    def to_adjacency_text(self):
        """One undirected edge per line, ``a b``; used in experiment logs."""
        head = f"# {self.kind} {' '.join(str(p) for p in self.params)}\n"
        return head + "".join(f"{a} {b}\n" for a, b in self.links)


def _bfs(adjacency, src):
    dist = [-1] * len(adjacency)
    dist[src] = 0
    todo = deque([src])
    while todo:
        u = todo.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                todo.append(v)
    return dist


def _link(adj, a, b):
    if a == b or b in adj[a]:
        raise TopologyError(f"bad link {a}-{b}")
    adj[a].add(b)
    adj[b].add(a)


def build_folded_clos(nu_e, nu_12):
    """3-level Folded-Clos with ``nu_e`` switches per level.

    Level 1 is split into ``nu_e/nu_12`` pods of ``nu_12`` switches, each
    pod fully connected to the matching pod of level 2. The level-2 switch
    at position i of every pod belongs to plane i and links to all
    ``nu_e/nu_12`` level-3 switches of that plane.
    """
    if nu_e < 1 or nu_12 < 1:
        raise TopologyError("Folded-Clos parameters must be >= 1")
    if nu_e % nu_12:
        raise TopologyError(f"nu_12={nu_12} must divide nu_e={nu_e}")
    pods = nu_e // nu_12
    switches = []
    for level in (1, 2, 3):
        for i in range(nu_e):
            sid = (level - 1) * nu_e + i
            if level < 3:
                grp, idx = divmod(i, nu_12)
            else:
                grp, idx = divmod(i, pods)
            switches.append(Switch(sid, level, grp, idx, edge=(level == 1)))
    adj = [set() for _ in range(3 * nu_e)]
    for pod in range(pods):
        for a in range(nu_12):
            for b in range(nu_12):
                _link(adj, pod * nu_12 + a, nu_e + pod * nu_12 + b)
    for pod in range(pods):
        for plane in range(nu_12):
            l2 = nu_e + pod * nu_12 + plane
            for j in range(pods):
                _link(adj, l2, 2 * nu_e + plane * pods + j)
    return TopologyGraph(FOLDED_CLOS, (nu_e, nu_12), switches, [sorted(a) for a in adj])


def dragonfly_peer(nu_d, group, index):
    """Switch at the far end of the inter-group link of (group, index)."""
    nu_g = nu_d + 1
    return (group + index + 1) % nu_g, nu_d - 1 - index


def build_dragonfly(nu_d):
    """``nu_d + 1`` groups of ``nu_d`` fully meshed switches.

    Switch j of group g links to switch ``nu_d-1-j`` of group
    ``(g+j+1) mod (nu_d+1)``, giving one link per group pair.
    """
    if nu_d < 2:
        raise TopologyError("Dragonfly needs nu_d >= 2")
    nu_g = nu_d + 1
    switches = [Switch(g * nu_d + j, 1, g, j, True) for g in range(nu_g) for j in range(nu_d)]
    adj = [set() for _ in range(nu_g * nu_d)]
    for g in range(nu_g):
        for a in range(nu_d):
            for b in range(a + 1, nu_d):
                _link(adj, g * nu_d + a, g * nu_d + b)
    for g in range(nu_g):
        for j in range(nu_d):
            h, k = dragonfly_peer(nu_d, g, j)
            a, b = g * nu_d + j, h * nu_d + k
            if a < b:
                _link(adj, a, b)
    return TopologyGraph(DRAGONFLY, (nu_d,), switches, [sorted(a) for a in adj])


def build_topology(kind, params=()):
    kind = canonical_kind(kind)
    params = tuple(int(p) for p in (params or ()))
    if kind == CLIQUE:
        return TopologyGraph(CLIQUE, ())
    if kind == FOLDED_CLOS:
        if len(params) != 2:
            raise TopologyError("Folded-Clos takes (nu_e, nu_12)")
        return build_folded_clos(*params)
    if len(params) != 1:
        raise TopologyError("Dragonfly takes (nu_d,)")
    return build_dragonfly(*params)


@dataclass(frozen=True)
class Placement:
    edge_of: tuple   # validator -> edge switch id; empty for the clique
    counts: dict     # edge switch id -> number of validators

    @property
    def k_max(self):
        return max(self.counts.values()) if self.counts else 1

    @property
    def k_min(self):
        return min(self.counts.values()) if self.counts else 1


def place_validators(graph, n):
    """Round-robin over edge switches, so per-switch counts differ by at most 1."""
    if n < 1:
        raise TopologyError("need at least one validator")
    if graph.kind == CLIQUE:
        return Placement((), {})
    edges = graph.edge_switches
    edge_of = tuple(edges[v % len(edges)] for v in range(n))
    counts = {e: 0 for e in edges}
    for e in edge_of:
        counts[e] += 1
    return Placement(edge_of, counts)


def next_hop_candidates(graph, current, dest):
    """Neighbours of ``current`` lying on a minimal path to ``dest``."""
    dist = graph.distances()
    d = dist[current][dest]
    if d < 0:
        raise TopologyError(f"switch {dest} unreachable from {current}")
    if d == 0:
        return []
    return [v for v in graph.adjacency[current] if dist[v][dest] == d - 1]


def next_hop(graph, current, dest, rng):
    """ROMM step: uniform choice over minimal-path neighbours.

    Returns None when ``current == dest`` (deliver to the attached validator).
    """
    cands = next_hop_candidates(graph, current, dest)
    if not cands:
        return None
    if len(cands) == 1:
        return cands[0]
    return cands[rng.randbelow(len(cands))]


def routing_table(graph):
    """Flattened candidate table: ``offsets[cur*S+dst]`` indexes ``hops``."""
    S = graph.num_switches
    offsets = [0] * (S * S + 1)
    hops = []
    for cur in range(S):
        for dst in range(S):
            hops.extend(next_hop_candidates(graph, cur, dst))
            offsets[cur * S + dst + 1] = len(hops)
    return offsets, hops


def switch_hops(graph, a, b):
    """Switches on a minimal path between edge switches a and b, inclusive."""
    return graph.distances()[a][b] + 1


def average_hop_distance(graph, placement):
    """Mean switch count over unordered validator pairs."""
    if graph.kind == CLIQUE:
        return 0.0
    edge_of = placement.edge_of
    n = len(edge_of)
    if n < 2:
        raise TopologyError("average hop distance needs n >= 2")
    dist = graph.distances()
    total = 0
    for i in range(n):
        row = dist[edge_of[i]]
        for j in range(i + 1, n):
            total += row[edge_of[j]] + 1
    return total / (n * (n - 1) / 2)


def num_edge_switches(kind, params):
    kind = canonical_kind(kind)
    if kind == CLIQUE:
        return 0
    if kind == FOLDED_CLOS:
        return int(params[0])
    nu_d = int(params[0])
    return nu_d * (nu_d + 1)


def num_switches(kind, params):
    kind = canonical_kind(kind)
    if kind == FOLDED_CLOS:
        return 3 * int(params[0])
    return num_edge_switches(kind, params)
