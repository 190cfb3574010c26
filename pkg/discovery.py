"""Causal order information recovered from change tags.

Variables are grouped into buckets by their change tags, pairs of buckets are
related (<, NDP or unknown), and the resulting order graph is marked where an
edge out of a focal bucket must correspond to a real edge of the diagram.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import networkx as nx
from graphviz import Digraph

from definitions import ClaimKind, EdgeStyle, RelationKind, RelationStrength
from detect import TagMatrix

logger = logging.getLogger(__name__)


class DiscoveryError(ValueError):
    pass


@dataclass(frozen=True)
class Bucket:
    """Variables sharing a change tag.

    ``focal_for`` holds the 0-based transitions whose focal variable this bucket
    is. Buckets built from known focal variables are singletons; a bucket
    identified as focal from the tags alone (``identified``) may hold several.
    """

    tag: tuple
    members: frozenset
    focal_for: frozenset = frozenset()
    identified: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'tag', tuple(int(b) for b in self.tag))
        object.__setattr__(self, 'members', frozenset(int(m) for m in self.members))
        object.__setattr__(self, 'focal_for', frozenset(int(j) for j in self.focal_for))
        if any(b not in (0, 1) for b in self.tag):
            raise DiscoveryError(f'Invalid tag {self.tag}')
        if not self.members:
            raise DiscoveryError('A bucket needs at least one member')
        for j in self.focal_for:
            if not 0 <= j < len(self.tag):
                raise DiscoveryError(f'Focal transition {j} out of range for tag of length {len(self.tag)}')
            if self.tag[j] != 1:
                raise DiscoveryError(f'A focal bucket must change in its own transition {j + 1}')
        if self.focal_for and not self.identified and len(self.members) != 1:
            raise DiscoveryError('A focal bucket holds exactly one variable')

    @property
    def k(self) -> int:
        return len(self.tag)

    @property
    def is_focal(self) -> bool:
        return bool(self.focal_for)

    @property
    def is_singleton(self) -> bool:
        return len(self.members) == 1

    @property
    def tag_string(self) -> str:
        return ''.join(str(b) for b in self.tag)

    def label(self, names: Sequence[str]) -> str:
        members = ', '.join(names[m] for m in sorted(self.members))
        focal = f' f:{",".join(str(j + 1) for j in sorted(self.focal_for))}' if self.focal_for else ''
        return f'B{focal} {self.tag_string} {{{members}}}'


@dataclass(frozen=True)
class BucketPartition:
    buckets: tuple
    k: int
    n_variables: int

    def __post_init__(self):
        object.__setattr__(self, 'buckets', tuple(self.buckets))
        seen = set()
        for bucket in self.buckets:
            if bucket.k != self.k:
                raise DiscoveryError(f'Bucket tag length {bucket.k} differs from k={self.k}')
            if seen & bucket.members:
                raise DiscoveryError('Buckets must be disjoint')
            seen |= bucket.members
        if seen != set(range(self.n_variables)):
            raise DiscoveryError('Buckets must cover every variable')

    def bucket_of(self, v: int) -> int:
        for i, bucket in enumerate(self.buckets):
            if v in bucket.members:
                return i
        raise DiscoveryError(f'Variable {v} is not in any bucket')

    def focal_buckets(self) -> list:
        return [i for i, b in enumerate(self.buckets) if b.is_focal]


@dataclass(frozen=True)
class Relation:
    """Result of comparing two buckets; ``lower`` and ``upper`` are set only for LESS."""

    kind: RelationKind
    lower: Optional[Bucket] = None
    upper: Optional[Bucket] = None
    strength: RelationStrength = RelationStrength.ORDINARY

    def __post_init__(self):
        directional = self.lower is not None and self.upper is not None
        if (self.kind is RelationKind.LESS) != directional:
            raise DiscoveryError('Only LESS relations carry a direction')


@dataclass(frozen=True)
class MogEdge:
    source: int
    target: int
    style: EdgeStyle

    @property
    def is_directed(self) -> bool:
        return self.style is not EdgeStyle.UNDIRECTED

    @property
    def is_marked(self) -> bool:
        return self.style is EdgeStyle.DIRECTED_MARKED


@dataclass(frozen=True)
class MarkedOrderGraph:
    """Buckets as nodes; edges index into ``partition.buckets``.

    A missing edge between two buckets means no directed path between their members.
    """

    partition: BucketPartition
    edges: tuple

    def __post_init__(self):
        edges = tuple(sorted(self.edges, key=lambda e: (e.source, e.target)))
        object.__setattr__(self, 'edges', edges)
        n = len(self.partition.buckets)
        pairs = set()
        for edge in edges:
            if not (0 <= edge.source < n and 0 <= edge.target < n) or edge.source == edge.target:
                raise DiscoveryError(f'Invalid edge {edge.source}->{edge.target}')
            pair = frozenset((edge.source, edge.target))
            if pair in pairs:
                raise DiscoveryError('At most one edge per bucket pair')
            pairs.add(pair)
            if edge.is_marked and not self.partition.buckets[edge.source].is_focal:
                raise DiscoveryError('Marked edges must leave a focal bucket')

    @property
    def buckets(self) -> tuple:
        return self.partition.buckets

    def edge_between(self, i: int, j: int) -> Optional[MogEdge]:
        for edge in self.edges:
            if {edge.source, edge.target} == {i, j}:
                return edge
        return None

    def directed_edges(self) -> list:
        return [e for e in self.edges if e.is_directed]

    def undirected_edges(self) -> list:
        return [e for e in self.edges if not e.is_directed]

    def marked_edges(self) -> list:
        return [e for e in self.edges if e.is_marked]

    def mixed_graph(self, exclude: Optional[MogEdge] = None) -> nx.DiGraph:
        """Directed edges forward only, undirected edges both ways."""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(len(self.buckets)))
        for edge in self.edges:
            if edge == exclude:
                continue
            graph.add_edge(edge.source, edge.target)
            if not edge.is_directed:
                graph.add_edge(edge.target, edge.source)
        return graph


@dataclass(frozen=True)
class NoninfluentialRelations:
    """Order relation among buckets when influentiality cannot be assumed.

    ``less`` holds transitively closed (lower, upper) bucket index pairs;
    ``unknown`` holds pairs found ordered both ways.
    """

    partition: BucketPartition
    less: frozenset
    unknown: frozenset


@dataclass(frozen=True)
class BackgroundKnowledge:
    order_constraints: frozenset = frozenset()
    forbidden_edges: frozenset = frozenset()
    required_edges: frozenset = frozenset()
    required_paths: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'order_constraints', frozenset(tuple(p) for p in self.order_constraints))
        object.__setattr__(self, 'forbidden_edges', frozenset(frozenset(p) for p in self.forbidden_edges))
        object.__setattr__(self, 'required_edges', frozenset(tuple(p) for p in self.required_edges))
        object.__setattr__(self, 'required_paths', frozenset(tuple(p) for p in self.required_paths))
        for x, y in self.required_edges:
            if frozenset((x, y)) in self.forbidden_edges:
                raise DiscoveryError(f'Edge {x}->{y} is both required and forbidden')
        if not nx.is_directed_acyclic_graph(self.precedence_graph()):
            raise DiscoveryError('Order constraints contain a cycle')

    def precedence_graph(self) -> nx.DiGraph:
        """Every pair the knowledge puts in order: constraints, required edges and required paths."""
        graph = nx.DiGraph()
        graph.add_edges_from(self.order_constraints)
        graph.add_edges_from(self.required_edges)
        graph.add_edges_from(self.required_paths)
        return graph

    def precedence_closure(self) -> frozenset:
        return frozenset(nx.transitive_closure_dag(self.precedence_graph()).edges())

    @property
    def is_empty(self) -> bool:
        return not (self.order_constraints or self.forbidden_edges or self.required_edges or self.required_paths)

    def merged(self, other: 'BackgroundKnowledge') -> 'BackgroundKnowledge':
        return BackgroundKnowledge(self.order_constraints | other.order_constraints,
                                   self.forbidden_edges | other.forbidden_edges,
                                   self.required_edges | other.required_edges,
                                   self.required_paths | other.required_paths)


@dataclass(frozen=True)
class Claim:
    kind: ClaimKind
    x: int
    y: int

    def sort_key(self) -> tuple:
        return self.x, self.y, list(ClaimKind).index(self.kind)

    def to_text(self, names: Sequence[str]) -> str:
        return f'{self.kind.value} {names[self.x]} {names[self.y]}'


def partition_variables(tags: TagMatrix, focal_ids: Optional[Sequence[int]] = None) -> BucketPartition:
    """Split the variables into buckets by their change tags.

    The i-th focal variable, when known, is taken out into its own focal bucket
    and its bit for transition i is set. A variable focal in several transitions
    keeps one bucket whose ``focal_for`` lists all of them. The remaining
    variables share a bucket exactly when their tags are equal, which is what
    splitting every bucket on each successive bit produces.
    """
    n, k = tags.n_variables, tags.k
    focal_for = {}
    if focal_ids is not None:
        focal_ids = [int(f) for f in focal_ids]
        if len(focal_ids) != k:
            raise DiscoveryError(f'Expected {k} focal variables, got {len(focal_ids)}')
        for j, f in enumerate(focal_ids):
            if not 0 <= f < n:
                raise DiscoveryError(f'Focal index {f} out of range')
            focal_for.setdefault(f, set()).add(j)

    buckets = []
    groups = {}
    for v in range(n):
        tag = list(tags.tag(v))
        if v in focal_for:
            for j in focal_for[v]:
                tag[j] = 1
            buckets.append(Bucket(tuple(tag), frozenset([v]), frozenset(focal_for[v])))
        else:
            groups.setdefault(tuple(tag), set()).add(v)
    buckets.extend(Bucket(tag, frozenset(members)) for tag, members in groups.items())
    buckets.sort(key=lambda b: min(b.members))
    logger.debug(f'[Discover] {len(buckets)} buckets, {len(focal_for)} focal')
    return BucketPartition(tuple(buckets), k, n)


def extract_relation(a: Bucket, b: Bucket) -> Relation:
    if a.k != b.k:
        raise DiscoveryError('Buckets have tags of different length')
    if a.members & b.members:
        raise DiscoveryError('Cannot relate overlapping buckets')
    a_below = all(x <= y for x, y in zip(a.tag, b.tag))
    b_below = all(y <= x for x, y in zip(a.tag, b.tag))
    # a member of a changed in a transition where b's focal variable changed, and vice versa
    b_conflict = any(a.tag[j] == 1 for j in b.focal_for)
    a_conflict = any(b.tag[j] == 1 for j in a.focal_for)

    if a_below and not b_below:
        return Relation(RelationKind.UNKNOWN) if b_conflict else Relation(RelationKind.LESS, a, b)
    if b_below and not a_below:
        return Relation(RelationKind.UNKNOWN) if a_conflict else Relation(RelationKind.LESS, b, a)
    if not a_below and not b_below:
        return Relation(RelationKind.UNKNOWN) if a_conflict or b_conflict else Relation(RelationKind.NDP)

    if a.is_focal and b.is_focal:
        return Relation(RelationKind.UNKNOWN)
    if a.is_focal:
        return Relation(RelationKind.LESS, a, b, RelationStrength.FOCAL_DESCENDANT)
    if b.is_focal:
        return Relation(RelationKind.LESS, b, a, RelationStrength.FOCAL_DESCENDANT)
    raise DiscoveryError(f'Two non-focal buckets share the tag {a.tag_string}')


def build_order_graph(p: BucketPartition) -> MarkedOrderGraph:
    edges = []
    for i, j in itertools.combinations(range(len(p.buckets)), 2):
        relation = extract_relation(p.buckets[i], p.buckets[j])
        if relation.kind is RelationKind.LESS:
            source, target = (i, j) if relation.lower == p.buckets[i] else (j, i)
            edges.append(MogEdge(source, target, EdgeStyle.DIRECTED))
        elif relation.kind is RelationKind.UNKNOWN:
            edges.append(MogEdge(i, j, EdgeStyle.UNDIRECTED))
    og = MarkedOrderGraph(p, tuple(edges))
    unknown = len(og.undirected_edges())
    if unknown:
        logger.warning(f'[Discover] {unknown} bucket pairs have conflicting change evidence')
    return og


def mark_edges(og: MarkedOrderGraph) -> MarkedOrderGraph:
    """Mark each edge out of a focal bucket that is the only mixed directed path to its target."""
    edges = []
    for edge in og.edges:
        if edge.is_directed and og.buckets[edge.source].is_focal:
            alternative = nx.has_path(og.mixed_graph(exclude=edge), edge.source, edge.target)
            style = EdgeStyle.DIRECTED if alternative else EdgeStyle.DIRECTED_MARKED
            edges.append(MogEdge(edge.source, edge.target, style))
        else:
            edges.append(edge)
    return MarkedOrderGraph(og.partition, tuple(edges))


def identify_focal_buckets(p: BucketPartition) -> list:
    """For each transition, the bucket below every other bucket that changed in it, or None."""
    identified = []
    for j in range(p.k):
        changed = [b for b in p.buckets if b.tag[j] == 1]
        found = [b for b in changed
                 if all(extract_relation(b, other).lower == b for other in changed if other != b)]
        identified.append(found[0] if len(found) == 1 else None)
        if len(found) == 1:
            logger.info(f'[Discover] Transition {j + 1}: focal bucket {found[0].tag_string} '
                        f'with {len(found[0].members)} variables')
        else:
            logger.info(f'[Discover] Transition {j + 1}: no focal bucket identified')
    return identified


def promote_focal_buckets(p: BucketPartition, identified: Sequence[Optional[Bucket]]) -> BucketPartition:
    """Treat each identified bucket as the focal bucket of its transition."""
    if len(identified) != p.k:
        raise DiscoveryError(f'Expected {p.k} identifications, got {len(identified)}')
    focal_for = {}
    for j, bucket in enumerate(identified):
        if bucket is not None:
            focal_for.setdefault(bucket.members, set()).add(j)
    buckets = []
    for bucket in p.buckets:
        extra = focal_for.get(bucket.members)
        if extra:
            bucket = Bucket(bucket.tag, bucket.members, bucket.focal_for | frozenset(extra), identified=True)
        buckets.append(bucket)
    return BucketPartition(tuple(buckets), p.k, p.n_variables)


def build_marked_order_graph(tags: TagMatrix, focal_ids: Optional[Sequence[int]] = None,
                             identify_focal: bool = False) -> MarkedOrderGraph:
    partition = partition_variables(tags, focal_ids)
    if focal_ids is None and identify_focal:
        partition = promote_focal_buckets(partition, identify_focal_buckets(partition))
    return mark_edges(build_order_graph(partition))


def noninfluential_relations(tags: TagMatrix, focal_ids: Sequence[int]) -> NoninfluentialRelations:
    """Orders that hold without influentiality: the i-th focal bucket precedes every bucket changing in i."""
    if focal_ids is None:
        raise DiscoveryError('Order information without influentiality needs the focal variables')
    partition = partition_variables(tags, focal_ids)
    graph = nx.DiGraph()
    graph.add_nodes_from(range(len(partition.buckets)))
    for j, f in enumerate(focal_ids):
        source = partition.bucket_of(f)
        for i, bucket in enumerate(partition.buckets):
            if i != source and bucket.tag[j] == 1:
                graph.add_edge(source, i)
    # a cycle puts a self-loop on each of its nodes
    closure = {(a, b) for a, b in nx.transitive_closure(graph, reflexive=False).edges() if a != b}
    unknown = {frozenset(pair) for pair in closure if (pair[1], pair[0]) in closure}
    less = {pair for pair in closure if frozenset(pair) not in unknown}
    if unknown:
        logger.warning(f'[Discover] {len(unknown)} bucket pairs are ordered both ways')
    return NoninfluentialRelations(partition, frozenset(less), frozenset(unknown))


def noninfluential_knowledge(relations: NoninfluentialRelations) -> BackgroundKnowledge:
    """Descendant paths and orders only; nothing here licenses a forbidden edge."""
    buckets = relations.partition.buckets
    orders, paths = set(), set()
    for lower, upper in relations.less:
        for x in buckets[lower].members:
            for y in buckets[upper].members:
                orders.add((x, y))
                if buckets[lower].is_singleton:
                    paths.add((x, y))
    return BackgroundKnowledge(order_constraints=frozenset(orders), required_paths=frozenset(paths))


def mog_to_background_knowledge(mog: MarkedOrderGraph) -> BackgroundKnowledge:
    """Translate the marked order graph into constraints over variables.

    A marked edge between two singleton buckets becomes a required edge. Every
    other directed edge orders all members of its source before all members of
    its target, and a marked edge from a focal singleton into a larger bucket
    also requires a directed path to each member. Bucket pairs with no edge
    forbid every edge between their members.
    """
    buckets = mog.buckets
    orders, forbidden, required, paths = set(), set(), set(), set()
    for edge in mog.directed_edges():
        source, target = buckets[edge.source], buckets[edge.target]
        if edge.is_marked and source.is_singleton and target.is_singleton:
            required.add((next(iter(source.members)), next(iter(target.members))))
            continue
        for x in source.members:
            for y in target.members:
                orders.add((x, y))
                if edge.is_marked and source.is_singleton:
                    paths.add((x, y))
    for i, j in itertools.combinations(range(len(buckets)), 2):
        if mog.edge_between(i, j) is None:
            for x in buckets[i].members:
                for y in buckets[j].members:
                    forbidden.add(frozenset((x, y)))
    return BackgroundKnowledge(frozenset(orders), frozenset(forbidden), frozenset(required), frozenset(paths))


def enumerate_claims(mog: MarkedOrderGraph) -> list:
    """One ORDER, NDP or UNKNOWN claim per pair of variables in different buckets.

    Marked edges add EDGE claims (singleton to singleton) or PATH claims
    (focal singleton to each member of a larger bucket).
    """
    buckets = mog.buckets
    claims = []
    for i, j in itertools.combinations(range(len(buckets)), 2):
        edge = mog.edge_between(i, j)
        if edge is None:
            claims.extend(Claim(ClaimKind.NDP, *sorted((x, y)))
                          for x in buckets[i].members for y in buckets[j].members)
        elif not edge.is_directed:
            claims.extend(Claim(ClaimKind.UNKNOWN, *sorted((x, y)))
                          for x in buckets[i].members for y in buckets[j].members)
        else:
            source, target = buckets[edge.source], buckets[edge.target]
            for x in source.members:
                for y in target.members:
                    claims.append(Claim(ClaimKind.ORDER, x, y))
                    if edge.is_marked and source.is_singleton:
                        kind = ClaimKind.EDGE if target.is_singleton else ClaimKind.PATH
                        claims.append(Claim(kind, x, y))
    return sorted(claims, key=Claim.sort_key)


def claims_to_text(claims: Sequence[Claim], names: Sequence[str]) -> str:
    return ''.join(claim.to_text(names) + '\n' for claim in claims)


def mog_to_dot(mog: MarkedOrderGraph, names: Sequence[str]) -> str:
    dot = Digraph(comment='Marked order graph')
    for i, bucket in enumerate(mog.buckets):
        shape = 'doublecircle' if bucket.is_focal else 'ellipse'
        dot.node(f'B{i}', bucket.label(names), shape=shape)
    for edge in mog.edges:
        if edge.is_marked:
            dot.edge(f'B{edge.source}', f'B{edge.target}', label='*', style='bold')
        elif edge.is_directed:
            dot.edge(f'B{edge.source}', f'B{edge.target}')
        else:
            dot.edge(f'B{edge.source}', f'B{edge.target}', dir='none', style='dashed')
    return dot.source
