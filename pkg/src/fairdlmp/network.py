"""Radial feeder representation, topology operators, and feeder file I/O.

Nodes are indexed 0..N with 0 the substation. Lines share the index of
their receiving-end node, so line k is (parent(k), k) for k = 1..N.
Internal arrays are 0-based over lines/non-substation nodes: entry i
refers to node/line i+1.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np


class FeederError(ValueError):
    """Raised for structurally invalid feeder descriptions."""


@dataclass(frozen=True)
class RadialNetwork:
    """Validated radial feeder with per-unit line data and aggregator placements.

    Immutable after construction; safe to share across threads.
    """

    base_mva: float
    base_kv: float
    v0: float                    # substation voltage magnitude, pu
    delta0: float                # substation voltage angle, rad
    parent: np.ndarray           # parent[i] = parent node id of node i+1
    r: np.ndarray                # line resistance, pu (line i+1)
    x: np.ndarray                # line reactance, pu
    p_limit: np.ndarray          # real flow limit per line, pu
    q_limit: np.ndarray          # reactive flow limit per line, pu
    epsilon: float               # max voltage deviation from v0, pu
    aggregator_nodes: np.ndarray  # node ids carrying aggregators, ascending
    aggregator_labels: tuple[str, ...]

    def __post_init__(self):
        for name in ("parent", "r", "x", "p_limit", "q_limit", "aggregator_nodes"):
            object.__setattr__(self, name, np.asarray(getattr(self, name)))
        n = self.node_count
        if n < 1:
            raise FeederError("feeder has no lines")
        if not (len(self.r) == len(self.x) == len(self.p_limit) == len(self.q_limit) == n):
            raise FeederError("line array length mismatch")
        bad = (self.r <= 0) & (self.x <= 0)
        if bad.any():
            raise FeederError(f"nonpositive impedance pair on line(s) {np.flatnonzero(bad) + 1}")
        if (self.r < 0).any() or (self.x < 0).any():
            raise FeederError("negative line impedance")
        if self.epsilon <= 0:
            raise FeederError("epsilon must be > 0")
        if (self.p_limit <= 0).any() or (self.q_limit <= 0).any():
            raise FeederError("flow limits must be > 0")
        if self.v0 <= 0:
            raise FeederError("substation voltage must be > 0")
        # topological order: every parent id must precede its child
        for i, u in enumerate(self.parent):
            k = i + 1
            if not (0 <= u < k):
                raise FeederError(f"node {k} has parent {u}; expected topological order")
        aggs = self.aggregator_nodes
        if len(aggs) != len(self.aggregator_labels):
            raise FeederError("aggregator label/node count mismatch")
        if len(aggs) == 0:
            raise FeederError("feeder declares no aggregators")
        if len(set(aggs.tolist())) != len(aggs):
            raise FeederError("duplicate aggregator node")
        if (aggs < 1).any() or (aggs > n).any():
            raise FeederError("unknown aggregator node")

    @property
    def node_count(self) -> int:
        """Number of non-substation nodes (= number of lines)."""
        return len(self.parent)

    def parent_of(self, k: int) -> int:
        return int(self.parent[k - 1])


@dataclass(frozen=True)
class TopologyOperators:
    """Derived topological operators of a radial feeder.

    downstream[k] / upstream[k] are node-id sets for node k (1-based keys;
    the substation is excluded from both). T is the N x N downstream
    indicator: T[k-1, l-1] = 1 iff l is strictly downstream of k. The
    parent-difference operator maps node values v (over 1..N) to
    [v_parent(k) - v_k]_k; rows whose parent is the substation carry the
    substation value in the affine offset instead, marked by root_mask.
    """

    downstream: dict[int, frozenset[int]]
    upstream: dict[int, frozenset[int]]
    T: np.ndarray
    parent_difference: np.ndarray
    root_mask: np.ndarray  # bool, line k has parent == substation

    @property
    def node_count(self) -> int:
        return self.T.shape[0]


def build_topology(net: RadialNetwork) -> TopologyOperators:
    """Derive downstream/upstream sets, the tree matrix, and the parent-difference operator."""
    n = net.node_count
    children: dict[int, list[int]] = {k: [] for k in range(0, n + 1)}
    for k in range(1, n + 1):
        children[net.parent_of(k)].append(k)

    downstream: dict[int, frozenset[int]] = {}
    # topological order guarantees children have larger ids, so a reverse
    # sweep sees every subtree before its root
    acc: dict[int, set[int]] = {k: set() for k in range(1, n + 1)}
    for k in range(n, 0, -1):
        for c in children[k]:
            acc[k].add(c)
            acc[k] |= acc[c]
        downstream[k] = frozenset(acc[k])

    upstream: dict[int, frozenset[int]] = {}
    for k in range(1, n + 1):
        path = []
        u = net.parent_of(k)
        while u != 0:
            path.append(u)
            u = net.parent_of(u)
        upstream[k] = frozenset(path)

    T = np.zeros((n, n))
    for k in range(1, n + 1):
        for l in downstream[k]:
            T[k - 1, l - 1] = 1.0

    F = -np.eye(n)
    root_mask = np.zeros(n, dtype=bool)
    for k in range(1, n + 1):
        u = net.parent_of(k)
        if u == 0:
            root_mask[k - 1] = True
        else:
            F[k - 1, u - 1] = 1.0

    return TopologyOperators(downstream=downstream, upstream=upstream, T=T,
                             parent_difference=F, root_mask=root_mask)


# ---------------------------------------------------------------------------
# feeder file parsing
#
# Self-describing sectioned text format:
#   [base]        mva = .., kv = .., v0_pu = .., delta0_rad = ..
#   [nodes]       one node id per row (excluding the substation, id 0)
#   [lines]       from to r_pu x_pu p_limit_pu q_limit_pu
#   [aggregators] label node
#   [limits]      epsilon_pu = ..
# '#' starts a comment. Node ids are re-indexed to a breadth-first
# topological order (substation = 0) at parse time.
# ---------------------------------------------------------------------------

_SECTIONS = ("base", "nodes", "lines", "aggregators", "limits")


def _split_sections(text: str) -> dict[str, list[str]]:
    sections: dict[str, list[str]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip().lower()
            if current not in _SECTIONS:
                raise FeederError(f"unknown section [{current}]")
            sections.setdefault(current, [])
            continue
        if current is None:
            raise FeederError(f"content before first section: {line!r}")
        sections[current].append(line)
    for required in _SECTIONS:
        if required not in sections:
            raise FeederError(f"missing section [{required}]")
    return sections


def _kv_pairs(rows: list[str], section: str) -> dict[str, float]:
    out = {}
    for row in rows:
        if "=" not in row:
            raise FeederError(f"expected 'key = value' in [{section}]: {row!r}")
        key, val = row.split("=", 1)
        out[key.strip().lower()] = float(val)
    return out


def parse_feeder(path_or_text: str | os.PathLike) -> RadialNetwork:
    """Parse a feeder description file (or literal text) into a RadialNetwork.

    Raises FeederError on cycles, disconnected nodes, duplicate lines,
    nonpositive impedance pairs, or unknown aggregator nodes.
    """
    text = path_or_text if isinstance(path_or_text, str) and "[" in path_or_text and "\n" in path_or_text \
        else open(path_or_text, "r", encoding="utf-8").read()
    sections = _split_sections(text)

    base = _kv_pairs(sections["base"], "base")
    limits = _kv_pairs(sections["limits"], "limits")
    v0 = base.get("v0_pu", 1.0)
    delta0 = base.get("delta0_rad", 0.0)

    declared_nodes = []
    for row in sections["nodes"]:
        declared_nodes.extend(int(tok) for tok in row.split())
    if len(set(declared_nodes)) != len(declared_nodes):
        raise FeederError("duplicate node declaration")
    node_set = set(declared_nodes)
    if 0 in node_set:
        raise FeederError("node 0 is reserved for the substation")

    edges = {}
    adjacency: dict[int, list[int]] = {0: []}
    for nid in declared_nodes:
        adjacency[nid] = []
    for row in sections["lines"]:
        toks = row.split()
        if len(toks) != 6:
            raise FeederError(f"line row needs 6 fields: {row!r}")
        f, t = int(toks[0]), int(toks[1])
        r, x, pl, ql = (float(v) for v in toks[2:])
        for nid in (f, t):
            if nid != 0 and nid not in node_set:
                raise FeederError(f"line references undeclared node {nid}")
        key = (min(f, t), max(f, t))
        if key in edges:
            raise FeederError(f"duplicate line between {f} and {t}")
        edges[key] = (r, x, pl, ql)
        adjacency[f].append(t)
        adjacency[t].append(f)

    if len(edges) != len(declared_nodes):
        # a tree on 1 + N nodes has exactly N edges
        kind = "cycle detected" if len(edges) > len(declared_nodes) else "disconnected node"
        raise FeederError(f"{kind}: {len(declared_nodes)} nodes, {len(edges)} lines")

    # breadth-first re-indexing from the substation; detects cycles and
    # unreachable nodes even when the edge count happens to match
    order = []
    seen = {0}
    queue = [0]
    parent_orig: dict[int, int] = {}
    while queue:
        u = queue.pop(0)
        for v in sorted(adjacency[u]):
            if v in seen:
                if parent_orig.get(u) != v:
                    raise FeederError(f"cycle detected through nodes {u} and {v}")
                continue
            seen.add(v)
            parent_orig[v] = u
            order.append(v)
            queue.append(v)
    missing = node_set - seen
    if missing:
        raise FeederError(f"disconnected node(s): {sorted(missing)}")

    # keep the declared labeling when it is already topological (ids 1..N,
    # every parent id below its child); otherwise re-index in BFS order
    already_topological = (set(order) == set(range(1, len(order) + 1))
                           and all(parent_orig[nid] < nid for nid in order))
    new_id = {0: 0}
    if already_topological:
        for nid in order:
            new_id[nid] = nid
    else:
        for i, nid in enumerate(order, start=1):
            new_id[nid] = i

    n = len(order)
    parent = np.zeros(n, dtype=int)
    r = np.zeros(n)
    x = np.zeros(n)
    pl = np.zeros(n)
    ql = np.zeros(n)
    for nid in order:
        k = new_id[nid]
        u = parent_orig[nid]
        parent[k - 1] = new_id[u]
        key = (min(u, nid), max(u, nid))
        r[k - 1], x[k - 1], pl[k - 1], ql[k - 1] = edges[key]

    agg_rows = []
    for row in sections["aggregators"]:
        toks = row.split()
        if len(toks) != 2:
            raise FeederError(f"aggregator row needs 'label node': {row!r}")
        label, nid = toks[0], int(toks[1])
        if nid not in node_set:
            raise FeederError(f"unknown aggregator node {nid}")
        agg_rows.append((new_id[nid], label))
    agg_rows.sort()
    agg_nodes = np.array([a for a, _ in agg_rows], dtype=int)
    agg_labels = tuple(lbl for _, lbl in agg_rows)

    return RadialNetwork(
        base_mva=base["mva"], base_kv=base["kv"], v0=v0, delta0=delta0,
        parent=parent, r=r, x=x, p_limit=pl, q_limit=ql,
        epsilon=limits["epsilon_pu"],
        aggregator_nodes=agg_nodes, aggregator_labels=agg_labels,
    )


def serialize_feeder(net: RadialNetwork) -> str:
    """Render a RadialNetwork back into feeder file text (round-trip exact)."""
    out = ["[base]"]
    out.append(f"mva = {float(net.base_mva)!r}")
    out.append(f"kv = {float(net.base_kv)!r}")
    out.append(f"v0_pu = {float(net.v0)!r}")
    out.append(f"delta0_rad = {float(net.delta0)!r}")
    out.append("")
    out.append("[nodes]")
    for k in range(1, net.node_count + 1):
        out.append(str(k))
    out.append("")
    out.append("[lines]")
    for k in range(1, net.node_count + 1):
        i = k - 1
        out.append(f"{net.parent_of(k)} {k} {float(net.r[i])!r} {float(net.x[i])!r} "
                   f"{float(net.p_limit[i])!r} {float(net.q_limit[i])!r}")
    out.append("")
    out.append("[aggregators]")
    for label, node in zip(net.aggregator_labels, net.aggregator_nodes):
        out.append(f"{label} {node}")
    out.append("")
    out.append("[limits]")
    out.append(f"epsilon_pu = {float(net.epsilon)!r}")
    out.append("")
    return "\n".join(out)


def bundled_feeder_path(name: str = "ieee37_modified") -> str:
    """Path of a feeder file shipped with the package."""
    here = os.path.dirname(__file__)
    path = os.path.join(here, "data", f"{name}.feeder")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return path
