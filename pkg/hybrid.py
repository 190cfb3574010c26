"""Constraint-based structure learning driven by change-based background knowledge.

Independence is tested in every dataset of the transition sequence; the
skeleton search skips forbidden pairs and conditioning candidates that the
knowledge places after both endpoints. Orientation combines v-structures,
knowledge and the Meek rules.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import networkx as nx
import numpy as np
from graphviz import Digraph
from scipy import stats
from scipy.special import xlogy

import definitions
from detect import TagMatrix, build_tag_matrix
from discovery import (BackgroundKnowledge, BucketPartition, MarkedOrderGraph, NoninfluentialRelations,
                       build_order_graph, identify_focal_buckets, mark_edges, mog_to_background_knowledge,
                       noninfluential_knowledge, noninfluential_relations, partition_variables,
                       promote_focal_buckets)
from model import CausalDiagram, v_structures
from simulate import Dataset, TransitionDatasets

logger = logging.getLogger(__name__)


class HybridError(ValueError):
    pass


@dataclass(frozen=True)
class CiStatistic:
    g2: float
    dof: int
    p_value: float


@dataclass(frozen=True)
class CiDecision:
    x: int
    y: int
    z: tuple
    independent: bool
    statistics: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, 'z', tuple(self.z))
        if self.x in self.z or self.y in self.z or self.x == self.y:
            raise HybridError('The conditioning set must exclude both tested variables')


CiTest = Callable[[int, int, Sequence[int]], CiDecision]


@dataclass(frozen=True)
class Cpdag:
    variables: tuple
    directed: frozenset
    undirected: frozenset
    conflicts: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'variables', tuple(self.variables))
        object.__setattr__(self, 'directed', frozenset(tuple(e) for e in self.directed))
        object.__setattr__(self, 'undirected', frozenset(frozenset(e) for e in self.undirected))
        object.__setattr__(self, 'conflicts', frozenset(frozenset(e) for e in self.conflicts))
        directed_pairs = {frozenset(e) for e in self.directed}
        if len(directed_pairs) != len(self.directed) or directed_pairs & self.undirected:
            raise HybridError('A pair may carry only one edge')
        graph = nx.DiGraph(list(self.directed))
        if not nx.is_directed_acyclic_graph(graph):
            raise HybridError('Directed part of a CPDAG must be acyclic')

    @property
    def n(self) -> int:
        return len(self.variables)

    def skeleton(self) -> frozenset:
        return frozenset({frozenset(e) for e in self.directed} | self.undirected)

    def adjacent(self, a: int, b: int) -> bool:
        pair = frozenset((a, b))
        return pair in self.undirected or (a, b) in self.directed or (b, a) in self.directed

    def to_dot(self, knowledge: Optional[BackgroundKnowledge] = None, notes: Sequence[str] = ()) -> str:
        names = [v.name for v in self.variables]
        dot = Digraph(comment='CPDAG')
        for name in names:
            dot.node(name)
        for a, b in sorted(self.directed):
            dot.edge(names[a], names[b])
        for pair in sorted(tuple(sorted(p)) for p in self.undirected):
            style = 'dotted' if frozenset(pair) in self.conflicts else 'solid'
            dot.edge(names[pair[0]], names[pair[1]], dir='none', style=style)
        header = []
        if knowledge is not None:
            header.append(f'// required edges: {_pairs_text(knowledge.required_edges, names)}')
            header.append(f'// required paths: {_pairs_text(knowledge.required_paths, names)}')
            header.append(f'// order constraints: {len(knowledge.order_constraints)}')
            header.append(f'// forbidden edges: {len(knowledge.forbidden_edges)}')
        for pair in sorted(tuple(sorted(p)) for p in self.conflicts):
            header.append(f'// conflict: {names[pair[0]]} - {names[pair[1]]}')
        header.extend(f'// {note}' for note in notes)
        return ''.join(line + '\n' for line in header) + dot.source


def _pairs_text(pairs, names) -> str:
    return ', '.join(f'{names[a]}->{names[b]}' for a, b in sorted(pairs)) or 'none'


def g_square_statistic(dataset: Dataset, x: int, y: int, z: Sequence[int]) -> CiStatistic:
    """Likelihood-ratio test of x independent of y given z; empty strata are dropped."""
    cards = [v.cardinality for v in dataset.variables]
    cases = dataset.cases
    strata = np.zeros(dataset.n_cases, dtype=np.int64)
    n_strata = 1
    for v in z:
        strata = strata * cards[v] + cases[:, v]
        n_strata *= cards[v]
    rx, ry = cards[x], cards[y]
    cells = (strata * rx + cases[:, x]) * ry + cases[:, y]
    table = np.bincount(cells, minlength=n_strata * rx * ry).reshape(n_strata, rx, ry).astype(float)
    totals = table.sum(axis=(1, 2))
    table = table[totals > 0]
    totals = totals[totals > 0]
    expected = table.sum(axis=2, keepdims=True) * table.sum(axis=1, keepdims=True) / totals[:, None, None]
    g2 = 2.0 * float(np.sum(xlogy(table, table) - xlogy(table, expected)))
    dof = (rx - 1) * (ry - 1) * len(totals)
    return CiStatistic(g2, dof, float(stats.chi2.sf(g2, dof)))


def pooled_ci_test(ts: TransitionDatasets, x: int, y: int, z: Sequence[int], alpha: float = definitions.DEFAULT_ALPHA,
                   max_conditioning: int = definitions.DEFAULT_MAX_CONDITIONING) -> CiDecision:
    """Independent only if every dataset accepts independence at level alpha / (k + 1)."""
    z = tuple(z)
    if len(z) > max_conditioning:
        raise HybridError(f'Conditioning set of size {len(z)} exceeds the maximum {max_conditioning}')
    if not 0.0 < alpha < 1.0:
        raise HybridError(f'Significance level must lie in (0, 1), got {alpha}')
    if any(d.n_cases == 0 for d in ts.datasets):
        raise HybridError('Independence tests need non-empty datasets')
    level = alpha / (ts.k + 1)
    statistics = tuple(g_square_statistic(d, x, y, z) for d in ts.datasets)
    return CiDecision(x, y, z, all(s.p_value > level for s in statistics), statistics)


class PooledCiTest:
    def __init__(self, ts: TransitionDatasets, alpha: float = definitions.DEFAULT_ALPHA,
                 max_conditioning: int = definitions.DEFAULT_MAX_CONDITIONING):
        self.ts = ts
        self.alpha = alpha
        self.max_conditioning = max_conditioning
        self.calls = 0

    def __call__(self, x: int, y: int, z: Sequence[int]) -> CiDecision:
        self.calls += 1
        return pooled_ci_test(self.ts, x, y, z, self.alpha, self.max_conditioning)


class DSeparationOracle:
    """Answers independence queries from the true diagram instead of data."""

    def __init__(self, diagram: CausalDiagram):
        self.diagram = diagram
        self.graph = diagram.to_networkx()

    def __call__(self, x: int, y: int, z: Sequence[int]) -> CiDecision:
        return CiDecision(x, y, tuple(z), nx.is_d_separator(self.graph, {x}, {y}, set(z)))


def learn_skeleton(ts: TransitionDatasets, alpha: float = definitions.DEFAULT_ALPHA,
                   knowledge: Optional[BackgroundKnowledge] = None, ci_test: Optional[CiTest] = None,
                   max_conditioning: int = definitions.DEFAULT_MAX_CONDITIONING) -> tuple:
    """Order-independent PC edge removal.

    Returns:
        (skeleton, sepsets): the remaining unordered pairs, and for every pair
        removed by a test the conditioning set that separated it.
    """
    knowledge = knowledge or BackgroundKnowledge()
    test = ci_test or PooledCiTest(ts, alpha, max_conditioning)
    n = len(ts.variables)
    required = {frozenset(e) for e in knowledge.required_edges}
    precedence = knowledge.precedence_closure()
    adjacent = {v: set(range(n)) - {v} for v in range(n)}
    for pair in knowledge.forbidden_edges:
        a, b = tuple(pair)
        adjacent[a].discard(b)
        adjacent[b].discard(a)
    sepsets = {}
    size = 0
    while size <= max_conditioning:
        snapshot = {v: set(adjacent[v]) for v in range(n)}
        testable = False
        for x in range(n):
            for y in sorted(snapshot[x]):
                pair = frozenset((x, y))
                if y not in adjacent[x] or pair in required:
                    continue
                candidates = sorted(c for c in snapshot[x] - {y}
                                    if not ((x, c) in precedence and (y, c) in precedence))
                if len(candidates) < size:
                    continue
                testable = True
                for z in itertools.combinations(candidates, size):
                    if test(x, y, z).independent:
                        adjacent[x].discard(y)
                        adjacent[y].discard(x)
                        sepsets[pair] = tuple(z)
                        break
        if not testable:
            break
        size += 1
    skeleton = frozenset(frozenset((a, b)) for a in range(n) for b in adjacent[a] if a < b)
    logger.debug(f'[Hybrid] Skeleton has {len(skeleton)} edges after tests up to size {size}')
    return skeleton, sepsets


class _Orientation:
    """Mutable working state while orienting a PDAG."""

    def __init__(self, n: int, directed, undirected, conflicts=()):
        self.n = n
        self.directed = set(directed)
        self.undirected = set(undirected)
        self.conflicts = set(conflicts)

    def adjacent(self, a: int, b: int) -> bool:
        return frozenset((a, b)) in self.undirected or (a, b) in self.directed or (b, a) in self.directed

    def is_undirected(self, a: int, b: int) -> bool:
        return frozenset((a, b)) in self.undirected

    def _creates_cycle(self, a: int, b: int) -> bool:
        graph = nx.DiGraph(list(self.directed))
        return b in graph and a in graph and nx.has_path(graph, b, a)

    def contest(self, a: int, b: int):
        pair = frozenset((a, b))
        self.directed.discard((a, b))
        self.directed.discard((b, a))
        self.undirected.add(pair)
        self.conflicts.add(pair)

    def orient(self, a: int, b: int) -> bool:
        """Orient a -> b; a contradicting orientation turns the pair into a flagged conflict."""
        pair = frozenset((a, b))
        if pair in self.conflicts or (a, b) in self.directed:
            return False
        if (b, a) in self.directed or (pair in self.undirected and self._creates_cycle(a, b)):
            logger.warning(f'[Hybrid] Conflicting orientation for pair {a}-{b}')
            self.contest(a, b)
            return True
        if pair not in self.undirected:
            return False
        self.undirected.discard(pair)
        self.directed.add((a, b))
        return True

    def _meek_once(self) -> bool:
        for pair in sorted(tuple(sorted(p)) for p in self.undirected):
            if frozenset(pair) in self.conflicts:
                continue
            for a, b in (pair, pair[::-1]):
                if self._meek_applies(a, b):
                    self.orient(a, b)
                    return True
        return False

    def _meek_applies(self, a: int, b: int) -> bool:
        n = range(self.n)
        # R1: c -> a - b with c, b non-adjacent
        if any((c, a) in self.directed and not self.adjacent(c, b) for c in n if c not in (a, b)):
            return True
        # R2: a -> c -> b
        if any((a, c) in self.directed and (c, b) in self.directed for c in n):
            return True
        # R3: a - c -> b and a - d -> b with c, d non-adjacent
        mids = [c for c in n if self.is_undirected(a, c) and (c, b) in self.directed]
        if any(not self.adjacent(c, d) for c, d in itertools.combinations(mids, 2)):
            return True
        # R4: a - c -> d -> b with a adjacent to d and c, b non-adjacent
        for c in n:
            if c in (a, b) or not self.is_undirected(a, c) or self.adjacent(c, b):
                continue
            if any((c, d) in self.directed and (d, b) in self.directed and self.adjacent(a, d) for d in n):
                return True
        return False

    def close(self, precedence: frozenset):
        for a, b in sorted(self.directed):
            if (b, a) in precedence:
                self.contest(a, b)
        for pair in sorted(tuple(sorted(p)) for p in self.undirected):
            a, b = pair
            if (a, b) in precedence:
                self.orient(a, b)
            elif (b, a) in precedence:
                self.orient(b, a)
        while self._meek_once():
            pass

    def to_cpdag(self, variables) -> Cpdag:
        return Cpdag(tuple(variables), frozenset(self.directed), frozenset(self.undirected), frozenset(self.conflicts))


def close_orientations(cpdag: Cpdag, knowledge: Optional[BackgroundKnowledge] = None) -> Cpdag:
    """Apply knowledge orders and the Meek rules to a partially oriented graph until nothing changes."""
    knowledge = knowledge or BackgroundKnowledge()
    state = _Orientation(cpdag.n, cpdag.directed, cpdag.undirected, cpdag.conflicts)
    for a, b in sorted(knowledge.required_edges):
        state.orient(a, b)
    state.close(knowledge.precedence_closure())
    return state.to_cpdag(cpdag.variables)


def orient_edges(skeleton: frozenset, sepsets: dict, knowledge: Optional[BackgroundKnowledge] = None,
                 variables: Sequence = ()) -> Cpdag:
    """Orient v-structures, then knowledge, then close under the Meek rules.

    Pairs without a separating set (forbidden by knowledge, never tested) do
    not produce v-structures; their neighbourhoods are left to the knowledge.
    """
    knowledge = knowledge or BackgroundKnowledge()
    variables = tuple(variables)
    n = len(variables)
    state = _Orientation(n, (), skeleton)
    for a, b in sorted(knowledge.required_edges):
        if frozenset((a, b)) in skeleton:
            state.orient(a, b)
        else:
            logger.warning(f'[Hybrid] Required edge {a}->{b} is missing from the skeleton')
    for x, y in itertools.combinations(range(n), 2):
        pair = frozenset((x, y))
        if pair in skeleton or pair not in sepsets:
            continue
        for z in range(n):
            if z in sepsets[pair] or frozenset((x, z)) not in skeleton or frozenset((y, z)) not in skeleton:
                continue
            state.orient(x, z)
            state.orient(y, z)
    state.close(knowledge.precedence_closure())
    cpdag = state.to_cpdag(variables)
    if cpdag.conflicts:
        logger.warning(f'[Hybrid] {len(cpdag.conflicts)} edges left undirected after conflicting evidence')
    return cpdag


def consistent_extensions(cpdag: Cpdag, limit: int = 16) -> list:
    """DAGs with the CPDAG's skeleton, its directed edges and no v-structures beyond its own."""
    undirected = sorted(tuple(sorted(p)) for p in cpdag.undirected)
    if len(undirected) > limit:
        raise HybridError(f'{len(undirected)} undirected edges exceed the enumeration limit {limit}')
    base = CausalDiagram.from_edges(cpdag.variables, cpdag.directed)
    skeleton = cpdag.skeleton()
    expected = {t for t in v_structures(base) if frozenset((t[0], t[2])) not in skeleton}
    extensions = []
    for flips in itertools.product((False, True), repeat=len(undirected)):
        edges = list(cpdag.directed) + [(b, a) if flip else (a, b) for (a, b), flip in zip(undirected, flips)]
        if not nx.is_directed_acyclic_graph(nx.DiGraph(edges)):
            continue
        diagram = CausalDiagram.from_edges(cpdag.variables, edges)
        if v_structures(diagram) == expected:
            extensions.append(diagram)
    return extensions


@dataclass(frozen=True)
class DiscoverOptions:
    """How ``discover`` turns change evidence into knowledge.

    ``tags`` and ``ci_test`` replace the change detector and the pooled
    independence test, e.g. with exact marginals and a d-separation oracle.
    """

    use_known_focal: bool = True
    identify_focal: bool = False
    assume_influential: bool = True
    max_conditioning: int = definitions.DEFAULT_MAX_CONDITIONING
    tags: Optional[TagMatrix] = None
    ci_test: Optional[CiTest] = None

    def __post_init__(self):
        if self.max_conditioning < 0:
            raise HybridError('Maximum conditioning set size must be non-negative')


@dataclass(frozen=True, eq=False)
class DiscoveryResult:
    tags: TagMatrix
    partition: BucketPartition
    knowledge: BackgroundKnowledge
    skeleton: frozenset
    sepsets: dict
    cpdag: Cpdag
    mog: Optional[MarkedOrderGraph] = None
    relations: Optional[NoninfluentialRelations] = None
    identified: tuple = ()
    diagnostics: tuple = field(default_factory=tuple)

    @property
    def unknown_pairs(self) -> int:
        if self.mog is not None:
            return len(self.mog.undirected_edges())
        if self.relations is not None:
            return len(self.relations.unknown)
        return 0

    @property
    def has_conflicts(self) -> bool:
        return bool(self.unknown_pairs or self.cpdag.conflicts)


def discover(ts: TransitionDatasets, alpha: float = definitions.DEFAULT_ALPHA,
             options: Optional[DiscoverOptions] = None) -> DiscoveryResult:
    """Detect changes, derive background knowledge from them, then learn and orient a CPDAG."""
    options = options or DiscoverOptions()
    if ts.k == 0:
        raise HybridError('No transitions to learn from; use plain constraint-based learning on a single dataset')
    diagnostics = []
    tags = options.tags if options.tags is not None else build_tag_matrix(ts, alpha)
    if tags.n_variables != len(ts.variables) or tags.k != ts.k:
        raise HybridError(f'Tag matrix shape {tags.bits.shape} does not match the datasets')
    focal = ts.focal_ids if options.use_known_focal else None
    mog, relations, identified = None, None, ()

    if options.assume_influential:
        partition = partition_variables(tags, focal)
        if focal is None and options.identify_focal:
            identified = tuple(identify_focal_buckets(partition))
            partition = promote_focal_buckets(partition, identified)
            found = sum(b is not None for b in identified)
            diagnostics.append(f'identified focal buckets for {found} of {ts.k} transitions')
        mog = mark_edges(build_order_graph(partition))
        knowledge = mog_to_background_knowledge(mog)
    elif focal is not None:
        relations = noninfluential_relations(tags, focal)
        partition = relations.partition
        knowledge = noninfluential_knowledge(relations)
    else:
        partition = partition_variables(tags)
        knowledge = BackgroundKnowledge()
        diagnostics.append('no order information without influentiality or focal variables')
        logger.warning('[Hybrid] No order information without influentiality or focal variables')

    logger.info(f'[Hybrid] {len(partition.buckets)} buckets, {len(knowledge.required_edges)} required edges, '
                f'{len(knowledge.forbidden_edges)} forbidden edges')
    ci_test = options.ci_test or PooledCiTest(ts, alpha, options.max_conditioning)
    skeleton, sepsets = learn_skeleton(ts, alpha, knowledge, ci_test, options.max_conditioning)
    cpdag = orient_edges(skeleton, sepsets, knowledge, ts.variables)
    result = DiscoveryResult(tags, partition, knowledge, skeleton, sepsets, cpdag, mog, relations, identified)
    if result.unknown_pairs:
        diagnostics.append(f'{result.unknown_pairs} bucket pairs with conflicting change evidence')
    if cpdag.conflicts:
        diagnostics.append(f'{len(cpdag.conflicts)} orientation conflicts')
    return DiscoveryResult(tags, partition, knowledge, skeleton, sepsets, cpdag, mog, relations, identified,
                           tuple(diagnostics))
