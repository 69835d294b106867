"""Entity/category DAG and the conflict-free update partition.

Node ids live in a single integer namespace: leaf nodes (the ``u``/``v``
representations of entities) occupy ``0 .. n_leaves - 1`` and category nodes
(the ``h`` representations) occupy ``n_leaves .. n_nodes - 1``. An entity that
is both a leaf and a category owns one node of each kind; hierarchy edges
declared for that entity apply to both of its nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence


class GraphError(ValueError):
    pass


class CycleError(GraphError):
    def __init__(self, cycle: list):
        self.cycle = cycle
        super().__init__("hierarchy cycle: " + " -> ".join(map(str, cycle)))


class DanglingIdError(GraphError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"hierarchy references undeclared id {name!r}")


@dataclass(frozen=True)
class EntityGraph:
    leaf_names: tuple
    category_names: tuple
    parents: tuple  # node -> tuple of category node ids (ascending)
    children: tuple  # node -> tuple of child node ids (ascending); empty for leaves
    edges: tuple = ()  # the (child, parent) name pairs the graph was built from
    _leaf_index: dict = field(default_factory=dict, compare=False, repr=False)
    _category_index: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_names)

    @property
    def n_categories(self) -> int:
        return len(self.category_names)

    @property
    def n_nodes(self) -> int:
        return self.n_leaves + self.n_categories

    @property
    def leaf_ids(self) -> frozenset:
        return frozenset(range(self.n_leaves))

    @property
    def category_ids(self) -> frozenset:
        return frozenset(range(self.n_leaves, self.n_nodes))

    def is_leaf(self, node: int) -> bool:
        return node < self.n_leaves

    def category_slot(self, node: int) -> int:
        """Row of a category node in the ``H`` factor tables."""
        return node - self.n_leaves

    def leaf(self, name) -> int:
        return self._leaf_index[name]

    def category(self, name) -> int:
        return self.n_leaves + self._category_index[name]

    def parent_average(self):
        """Sparse ``(n_nodes, n_categories)`` matrix mapping ``H`` rows to each
        node's prior mean ``s`` (average over parents; zero row if none)."""
        cached = self.__dict__.get("_parent_average")
        if cached is None:
            from scipy import sparse

            rows, cols, vals = [], [], []
            for node, ps in enumerate(self.parents):
                for p in ps:
                    rows.append(node)
                    cols.append(self.category_slot(p))
                    vals.append(1.0 / len(ps))
            cached = sparse.csr_matrix(
                (vals, (rows, cols)), shape=(self.n_nodes, self.n_categories)
            )
            object.__setattr__(self, "_parent_average", cached)
        return cached

    def node_name(self, node: int) -> str:
        if self.is_leaf(node):
            return f"u:{self.leaf_names[node]}"
        return f"h:{self.category_names[self.category_slot(node)]}"


def build_graph(
    leaf_ids: Iterable[Hashable], hierarchy_edges: Sequence[tuple] = ()
) -> EntityGraph:
    """Build the frozen hierarchy graph.

    ``leaf_ids`` are the entities that own leaf representations; sets are
    sorted so that node numbering is reproducible. Every id in the parent
    column of ``hierarchy_edges`` becomes a category node, numbered by first
    appearance.
    """
    if isinstance(leaf_ids, (set, frozenset)):
        leaf_names = tuple(sorted(leaf_ids))
    else:
        leaf_names = tuple(dict.fromkeys(leaf_ids))
    leaf_index = {name: i for i, name in enumerate(leaf_names)}

    edges = []
    category_names: list = []
    category_index: dict = {}
    for child, parent in hierarchy_edges:
        if child == parent:
            raise GraphError(f"self-edge on {child!r}")
        if parent not in category_index:
            category_index[parent] = len(category_names)
            category_names.append(parent)
        edges.append((child, parent))
    for child, _ in edges:
        if child not in leaf_index and child not in category_index:
            raise DanglingIdError(child)

    entity_parents: dict = {}
    for child, parent in edges:
        entity_parents.setdefault(child, set()).add(parent)
    _check_acyclic(entity_parents)

    n_leaves = len(leaf_names)
    n_nodes = n_leaves + len(category_names)
    parents: list[set] = [set() for _ in range(n_nodes)]
    for child, ps in entity_parents.items():
        pnodes = {n_leaves + category_index[p] for p in ps}
        if child in leaf_index:
            parents[leaf_index[child]] |= pnodes
        if child in category_index:
            parents[n_leaves + category_index[child]] |= pnodes
    children: list[list] = [[] for _ in range(n_nodes)]
    for node, ps in enumerate(parents):
        for p in ps:
            children[p].append(node)

    return EntityGraph(
        leaf_names=leaf_names,
        category_names=tuple(category_names),
        parents=tuple(tuple(sorted(ps)) for ps in parents),
        children=tuple(tuple(sorted(cs)) for cs in children),
        edges=tuple(edges),
        _leaf_index=leaf_index,
        _category_index=category_index,
    )


def _check_acyclic(entity_parents: dict) -> None:
    WHITE, GREY, BLACK = 0, 1, 2
    color: dict = {}
    for root in entity_parents:
        if color.get(root, WHITE) != WHITE:
            continue
        path = [root]
        stack = [iter(sorted(entity_parents.get(root, ()), key=repr))]
        color[root] = GREY
        while stack:
            nxt = next(stack[-1], None)
            if nxt is None:
                color[path.pop()] = BLACK
                stack.pop()
                continue
            c = color.get(nxt, WHITE)
            if c == GREY:
                start = path.index(nxt)
                raise CycleError(path[start:] + [nxt])
            if c == WHITE:
                color[nxt] = GREY
                path.append(nxt)
                stack.append(iter(sorted(entity_parents.get(nxt, ()), key=repr)))


@dataclass(frozen=True)
class Partition:
    sets: tuple  # tuple of tuples of node ids, each ascending

    def __len__(self):
        return len(self.sets)

    def __iter__(self):
        return iter(self.sets)


def partition(graph: EntityGraph) -> Partition:
    """Bottom-up sweep into sets with no parent, child or co-parent conflicts.

    Each round proposes the parents of the set just placed plus the nodes
    deferred by the previous round, then selects from them (see
    :func:`_select`). Nodes that were placed in an earlier round are discarded
    without touching their parents, otherwise a pending parent could be
    dropped with no remaining child left to re-propose it. When selection
    leaves nothing but deferred nodes, they are selected again on their own
    rather than placed together.
    """
    parents = graph.parents
    sets = []
    placed: set = set()
    deferred: set = set()
    current = set(range(graph.n_leaves))
    while current:
        ys = tuple(sorted(current))
        sets.append(ys)
        placed.update(ys)
        candidates = set(deferred)
        for n in ys:
            candidates.update(parents[n])
        current, deferred = _select(graph, candidates, placed)
        while not current and deferred:
            # every pass keeps or drops its first node, so this terminates
            current, deferred = _select(graph, deferred, placed)
    return Partition(tuple(sets))


def _select(graph: EntityGraph, candidates: set, placed: set):
    """One scan over ``candidates`` in ascending id: returns ``(accepted, deferred)``.

    A candidate is deferred when it shares a child with a node accepted before
    it in this scan. After each candidate its parents are removed from the
    pending set, which also evicts an earlier-accepted parent; an evicted node
    is re-proposed once the candidate that evicted it is placed.
    """
    parents, children = graph.parents, graph.children
    pending = set(candidates)
    deferred: set = set()
    claimed: set = set()
    for n in sorted(pending):
        if n not in pending:
            continue
        if n in placed:
            pending.discard(n)
            continue
        if claimed.intersection(children[n]):
            pending.discard(n)
            deferred.add(n)
        else:
            claimed.update(children[n])
        pending.difference_update(parents[n])
    return pending, deferred


@dataclass(frozen=True)
class Violation:
    kind: str
    nodes: tuple
    detail: str = ""


def check_partition(graph: EntityGraph, part: Partition) -> list[Violation]:
    """Every violated partition invariant, with witnesses. Empty iff valid."""
    report: list[Violation] = []
    where: dict = {}
    for m, ys in enumerate(part.sets):
        for n in ys:
            if n in where:
                report.append(Violation("duplicate", (n,), f"sets {where[n]} and {m}"))
            else:
                where[n] = m
    for n in range(graph.n_nodes):
        if n not in where:
            report.append(Violation("missing", (n,)))
    unknown = set(where) - set(range(graph.n_nodes))
    for n in sorted(unknown):
        report.append(Violation("unknown", (n,)))
    for n in range(graph.n_leaves):
        if where.get(n, 0) != 0:
            report.append(Violation("leaf-not-first", (n,), f"in set {where[n]}"))
    for n in range(graph.n_nodes):
        if n not in where:
            continue
        for p in graph.parents[n]:
            if where.get(p) == where[n]:
                report.append(Violation("parent-child", (n, p), f"set {where[n]}"))
    for c in range(graph.n_nodes):
        ps = graph.parents[c]
        for a_pos, a in enumerate(ps):
            for b in ps[a_pos + 1:]:
                if a in where and where.get(b) == where[a]:
                    report.append(
                        Violation("co-parent", (a, b), f"share child {c} in set {where[a]}")
                    )
    return report
