"""Causal diagrams, conditional probability tables and the equivalence
relations between diagrams.

Variables are identified by their position in the diagram's variable list;
names and state labels are metadata used for file formats and reports.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import networkx as nx
import numpy as np

import definitions

logger = logging.getLogger(__name__)

VariableRef = Union[int, str]


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class VariableSpec:
    name: str
    states: tuple

    def __post_init__(self):
        object.__setattr__(self, 'states', tuple(str(s) for s in self.states))
        if not self.name or any(c.isspace() for c in self.name):
            raise ModelError(f"Invalid variable name '{self.name}'")
        if len(self.states) < 2:
            raise ModelError(f"Variable '{self.name}' needs at least two states")
        if len(set(self.states)) != len(self.states):
            raise ModelError(f"Variable '{self.name}' has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)

    def state_index(self, state) -> int:
        """Index of a state given either its label or its integer index."""
        if isinstance(state, (int, np.integer)) and not isinstance(state, bool):
            if 0 <= state < self.cardinality:
                return int(state)
            raise ModelError(f"State index {state} out of range for '{self.name}'")
        try:
            return self.states.index(str(state))
        except ValueError:
            raise ModelError(f"'{state}' is not a state of '{self.name}'") from None


def binary_variables(names: Iterable[str]) -> tuple:
    return tuple(VariableSpec(name, ('0', '1')) for name in names)


@dataclass(frozen=True)
class CausalDiagram:
    """A DAG over an ordered list of variables.

    ``parents[i]`` keeps the declared parent order, which fixes the row layout
    of the variable's CPT (row-major over parent states, first parent slowest).
    """

    variables: tuple
    parents: tuple

    def __post_init__(self):
        object.__setattr__(self, 'variables', tuple(self.variables))
        object.__setattr__(self, 'parents', tuple(tuple(int(p) for p in pa) for pa in self.parents))
        n = len(self.variables)
        if len(self.parents) != n:
            raise ModelError(f'Expected parent lists for {n} variables, got {len(self.parents)}')
        if len(set(self.names)) != n:
            raise ModelError('Variable names must be unique')
        for i, pa in enumerate(self.parents):
            if len(set(pa)) != len(pa):
                raise ModelError(f"Duplicate parent for '{self.variables[i].name}'")
            for p in pa:
                if not 0 <= p < n:
                    raise ModelError(f"Parent index {p} out of range for '{self.variables[i].name}'")
                if p == i:
                    raise ModelError(f"'{self.variables[i].name}' cannot be its own parent")
        if not nx.is_directed_acyclic_graph(self.to_networkx()):
            raise ModelError('Causal diagram contains a directed cycle')

    @classmethod
    def from_edges(cls, variables: Sequence[VariableSpec], edges: Iterable[tuple]) -> 'CausalDiagram':
        """Build a diagram from (parent, child) pairs given as indices or names."""
        variables = tuple(variables)
        names = [v.name for v in variables]

        def resolve(ref):
            if isinstance(ref, str):
                try:
                    return names.index(ref)
                except ValueError:
                    raise ModelError(f"Unknown variable '{ref}'") from None
            return int(ref)

        parents = [set() for _ in variables]
        for a, b in edges:
            parents[resolve(b)].add(resolve(a))
        return cls(variables, tuple(tuple(sorted(pa)) for pa in parents))

    @property
    def n(self) -> int:
        return len(self.variables)

    @property
    def names(self) -> list:
        return [v.name for v in self.variables]

    @property
    def cardinalities(self) -> list:
        return [v.cardinality for v in self.variables]

    def index_of(self, ref: VariableRef) -> int:
        if isinstance(ref, str):
            try:
                return self.names.index(ref)
            except ValueError:
                raise ModelError(f"Unknown variable '{ref}'") from None
        if not 0 <= int(ref) < self.n:
            raise ModelError(f'Variable index {ref} out of range')
        return int(ref)

    def edges(self) -> list:
        return sorted((p, c) for c, pa in enumerate(self.parents) for p in pa)

    def children(self, v: int) -> list:
        return [c for c, pa in enumerate(self.parents) if v in pa]

    def to_networkx(self) -> nx.DiGraph:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n))
        graph.add_edges_from(self.edges())
        return graph

    def n_configurations(self, v: int) -> int:
        return int(np.prod([self.variables[p].cardinality for p in self.parents[v]], dtype=np.int64))

    def configuration_strides(self, v: int) -> np.ndarray:
        """Multipliers turning parent state indices into a CPT row index."""
        cards = [self.variables[p].cardinality for p in self.parents[v]]
        strides = np.ones(len(cards), dtype=np.int64)
        for j in range(len(cards) - 2, -1, -1):
            strides[j] = strides[j + 1] * cards[j + 1]
        return strides

    def state_space_size(self) -> int:
        size = 1
        for card in self.cardinalities:
            size *= card
        return size

    def same_variables(self, other: 'CausalDiagram') -> bool:
        return self.variables == other.variables


@dataclass(frozen=True, eq=False)
class Cpt:
    """Conditional probability table of one variable: one row per parent configuration."""

    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float)
        if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 2:
            raise ModelError(f'CPT must be a 2-d table with at least two columns, got shape {table.shape}')
        if not np.all(np.isfinite(table)) or (table < 0).any() or (table > 1).any():
            raise ModelError('CPT entries must lie in [0, 1]')
        sums = table.sum(axis=1)
        deviation = np.abs(sums - 1.0)
        worst = int(np.argmax(deviation))
        if deviation[worst] > definitions.CPT_NORMALIZE_TOLERANCE:
            raise ModelError(f'CPT row {worst} sums to {sums[worst]:.9g}, not 1')
        if deviation[worst] > definitions.CPT_ROW_TOLERANCE:
            table = table / sums[:, None]
        table.setflags(write=False)
        object.__setattr__(self, 'table', table)

    @property
    def n_configurations(self) -> int:
        return self.table.shape[0]

    @property
    def cardinality(self) -> int:
        return self.table.shape[1]

    def same_as(self, other: 'Cpt') -> bool:
        return self.table.shape == other.table.shape and np.array_equal(self.table, other.table)


@dataclass(frozen=True, eq=False)
class CausalModel:
    diagram: CausalDiagram
    cpts: tuple

    def __post_init__(self):
        cpts = tuple(c if isinstance(c, Cpt) else Cpt(c) for c in self.cpts)
        object.__setattr__(self, 'cpts', cpts)
        if len(cpts) != self.diagram.n:
            raise ModelError(f'Expected {self.diagram.n} CPTs, got {len(cpts)}')
        for i, cpt in enumerate(cpts):
            expected = (self.diagram.n_configurations(i), self.diagram.variables[i].cardinality)
            if cpt.table.shape != expected:
                raise ModelError(f"CPT of '{self.diagram.variables[i].name}' has shape "
                                 f"{cpt.table.shape}, expected {expected}")

    def parent_configuration(self, v: int, assignment: Sequence[int]) -> int:
        pa = self.diagram.parents[v]
        if not pa:
            return 0
        return int(np.dot(self.diagram.configuration_strides(v), [assignment[p] for p in pa]))

    def with_cpt(self, v: int, table) -> 'CausalModel':
        cpts = list(self.cpts)
        cpts[v] = Cpt(table)
        return CausalModel(self.diagram, tuple(cpts))

    def differing_cpts(self, other: 'CausalModel') -> list:
        return [i for i, (a, b) in enumerate(zip(self.cpts, other.cpts)) if not a.same_as(b)]


def topological_order(diagram: CausalDiagram) -> list:
    """Parents before children; among available variables the smallest index goes first."""
    return list(nx.lexicographical_topological_sort(diagram.to_networkx()))


def descendants(diagram: CausalDiagram, v: int) -> set:
    v = diagram.index_of(v)
    return set(nx.descendants(diagram.to_networkx(), v))


def ancestors(diagram: CausalDiagram, v: int) -> set:
    v = diagram.index_of(v)
    return set(nx.ancestors(diagram.to_networkx(), v))


def has_directed_path(diagram: CausalDiagram, a: int, b: int) -> bool:
    return a != b and b in descendants(diagram, a)


def skeleton(diagram: CausalDiagram) -> frozenset:
    return frozenset(frozenset(edge) for edge in diagram.edges())


def v_structures(diagram: CausalDiagram) -> frozenset:
    adjacent = skeleton(diagram)
    triples = set()
    for c, pa in enumerate(diagram.parents):
        for a, b in itertools.combinations(sorted(pa), 2):
            if frozenset((a, b)) not in adjacent:
                triples.add((a, c, b))
    return frozenset(triples)


def _require_same_variables(g1: CausalDiagram, g2: CausalDiagram):
    if not g1.same_variables(g2):
        raise ModelError('Diagrams are defined over different variable lists')


def independence_equivalent(g1: CausalDiagram, g2: CausalDiagram) -> bool:
    _require_same_variables(g1, g2)
    return skeleton(g1) == skeleton(g2) and v_structures(g1) == v_structures(g2)


def transition_equivalent(g1: CausalDiagram, g2: CausalDiagram, focal: Sequence[int]) -> bool:
    """Same skeleton, same v-structures and the same parent set for every focal variable."""
    _require_same_variables(g1, g2)
    focal = list(focal)
    if not focal:
        raise ModelError('At least one focal variable is required')
    for f in focal:
        if not 0 <= f < g1.n:
            raise ModelError(f'Focal index {f} out of range')
    if not independence_equivalent(g1, g2):
        return False
    return all(set(g1.parents[f]) == set(g2.parents[f]) for f in focal)


def transitive_closure(diagram: CausalDiagram) -> CausalDiagram:
    closure = nx.transitive_closure_dag(diagram.to_networkx())
    return CausalDiagram.from_edges(diagram.variables, closure.edges())


def transitive_reduction(diagram: CausalDiagram) -> CausalDiagram:
    reduction = nx.transitive_reduction(diagram.to_networkx())
    return CausalDiagram.from_edges(diagram.variables, reduction.edges())


def joint_probability(model: CausalModel, assignment: Sequence) -> float:
    diagram = model.diagram
    if len(assignment) != diagram.n:
        raise ModelError(f'Assignment has {len(assignment)} values for {diagram.n} variables')
    states = [spec.state_index(value) for spec, value in zip(diagram.variables, assignment)]
    probability = 1.0
    for i, cpt in enumerate(model.cpts):
        probability *= cpt.table[model.parent_configuration(i, states), states[i]]
    return float(probability)


def joint_distribution(model: CausalModel, limit: Optional[int] = None) -> np.ndarray:
    """Full joint tensor with one axis per variable, built as the product of family factors."""
    diagram = model.diagram
    limit = definitions.EXACT_ENUMERATION_LIMIT if limit is None else limit
    if diagram.state_space_size() > limit:
        raise ModelError(f'Joint state space {diagram.state_space_size()} exceeds {limit}')
    cards = diagram.cardinalities
    joint = np.ones(cards, dtype=float)
    for i, cpt in enumerate(model.cpts):
        axes = list(diagram.parents[i]) + [i]
        factor = cpt.table.reshape([cards[a] for a in axes])
        factor = np.transpose(factor, np.argsort(axes))
        shape = [1] * diagram.n
        for a in axes:
            shape[a] = cards[a]
        joint = joint * factor.reshape(shape)
    return joint
