"""Sampling from causal models and generation of transition sequences.

A transition sequence starts from a model M^0; each transition applies one
mechanism change to the previous model and draws a fresh dataset from the
result. The generating models are kept alongside the data as ground truth.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

import definitions
from model import (CausalDiagram, CausalModel, ModelError, VariableSpec, binary_variables, descendants,
                   joint_distribution, topological_order)

logger = logging.getLogger(__name__)


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class MechanismChangeSpec:
    focal: int
    delta: float = definitions.DEFAULT_DELTA

    def __post_init__(self):
        if int(self.focal) < 0:
            raise SimulationError(f'Focal index {self.focal} out of range')
        if not 0 < self.delta <= definitions.MAX_DELTA:
            raise SimulationError(f'Change magnitude must lie in (0, {definitions.MAX_DELTA}], got {self.delta}')


@dataclass(frozen=True, eq=False)
class Dataset:
    """Cases stored as state indices, one row per case, one column per variable."""

    variables: tuple
    cases: np.ndarray

    def __post_init__(self):
        variables = tuple(self.variables)
        cases = np.array(self.cases, dtype=np.int64).reshape(-1, len(variables))
        for v, spec in enumerate(variables):
            column = cases[:, v]
            if column.size and (column.min() < 0 or column.max() >= spec.cardinality):
                raise SimulationError(f"Invalid state index in column '{spec.name}'")
        cases.setflags(write=False)
        object.__setattr__(self, 'variables', variables)
        object.__setattr__(self, 'cases', cases)

    @property
    def n_cases(self) -> int:
        return self.cases.shape[0]

    @property
    def names(self) -> list:
        return [v.name for v in self.variables]

    def counts(self, v: int) -> np.ndarray:
        return np.bincount(self.cases[:, v], minlength=self.variables[v].cardinality)

    def labels(self) -> list:
        return [[self.variables[v].states[s] for v, s in enumerate(row)] for row in self.cases]


@dataclass(frozen=True, eq=False)
class TransitionDatasets:
    datasets: tuple
    focal_ids: Optional[tuple] = None

    def __post_init__(self):
        datasets = tuple(self.datasets)
        if not datasets:
            raise SimulationError('A transition sequence needs at least one dataset')
        for d in datasets[1:]:
            if d.variables != datasets[0].variables:
                raise SimulationError('All datasets must share the same variables')
        object.__setattr__(self, 'datasets', datasets)
        if self.focal_ids is not None:
            focal = tuple(int(f) for f in self.focal_ids)
            if len(focal) != self.k:
                raise SimulationError(f'Expected {self.k} focal variables, got {len(focal)}')
            for f in focal:
                if not 0 <= f < len(self.variables):
                    raise SimulationError(f'Focal index {f} out of range')
            object.__setattr__(self, 'focal_ids', focal)

    @property
    def k(self) -> int:
        return len(self.datasets) - 1

    @property
    def variables(self) -> tuple:
        return self.datasets[0].variables

    @property
    def names(self) -> list:
        return self.datasets[0].names

    def without_focal_ids(self) -> 'TransitionDatasets':
        return TransitionDatasets(self.datasets)


@dataclass(frozen=True, eq=False)
class TransitionScenario:
    """Ground truth of a transition sequence: the generating models M^0..M^k."""

    models: tuple
    focal_ids: tuple

    def __post_init__(self):
        models = tuple(self.models)
        focal = tuple(int(f) for f in self.focal_ids)
        object.__setattr__(self, 'models', models)
        object.__setattr__(self, 'focal_ids', focal)
        if len(models) != len(focal) + 1:
            raise SimulationError(f'{len(focal)} focal variables need {len(focal) + 1} models, got {len(models)}')
        for j, (before, after) in enumerate(zip(models, models[1:])):
            if before.diagram != after.diagram:
                raise SimulationError('All models of a scenario must share one diagram')
            changed = before.differing_cpts(after)
            if any(v != focal[j] for v in changed):
                raise SimulationError(f'Transition {j + 1} changes CPTs {changed}, '
                                      f'expected only focal variable {focal[j]}')

    @property
    def k(self) -> int:
        return len(self.focal_ids)

    @property
    def diagram(self) -> CausalDiagram:
        return self.models[0].diagram


@dataclass(frozen=True, eq=False)
class Marginal:
    variable: int
    probabilities: np.ndarray

    def __post_init__(self):
        probabilities = np.array(self.probabilities, dtype=float)
        if abs(probabilities.sum() - 1.0) > definitions.CPT_ROW_TOLERANCE:
            raise SimulationError(f'Marginal of variable {self.variable} sums to {probabilities.sum()}')
        probabilities.setflags(write=False)
        object.__setattr__(self, 'probabilities', probabilities)

    def distance(self, other: 'Marginal') -> float:
        return float(np.max(np.abs(self.probabilities - other.probabilities)))


def dataset_seed(seed: int, index: int) -> np.random.SeedSequence:
    """Independent stream for dataset ``index`` of a sequence generated from ``seed``."""
    return np.random.SeedSequence([int(seed), int(index)])


def forward_sample(model: CausalModel, n: int, seed) -> Dataset:
    """Draw ``n`` cases by ancestral sampling.

    Args:
        model: the generating causal model.
        n: number of cases, may be zero.
        seed: anything ``numpy.random.default_rng`` accepts.

    Returns:
        A Dataset over the model's variables.
    """
    if n < 0:
        raise SimulationError(f'Sample size must be non-negative, got {n}')
    rng = np.random.default_rng(seed)
    diagram = model.diagram
    cases = np.zeros((n, diagram.n), dtype=np.int64)
    for v in topological_order(diagram):
        table = model.cpts[v].table
        pa = list(diagram.parents[v])
        rows = cases[:, pa] @ diagram.configuration_strides(v) if pa else np.zeros(n, dtype=np.int64)
        cumulative = np.cumsum(table, axis=1)[rows]
        u = rng.random(n)
        states = (u[:, None] >= cumulative).sum(axis=1)
        cases[:, v] = np.minimum(states, table.shape[1] - 1)
    return Dataset(diagram.variables, cases)


def apply_mechanism_change(model: CausalModel, spec: MechanismChangeSpec) -> CausalModel:
    """Perturb the first-state probability of every row of the focal CPT by delta.

    Rows whose first entry is at most 0.5 move up, the others move down; the
    remaining entries are rescaled so the row still sums to one.
    """
    try:
        v = model.diagram.index_of(spec.focal)
    except ModelError as e:
        raise SimulationError(str(e)) from None
    table = np.array(model.cpts[v].table)
    first = table[:, 0]
    if np.any(first >= 1.0):
        raise SimulationError(f"CPT of '{model.diagram.variables[v].name}' has a row with first-state "
                              f"probability 1; the rest of the row cannot be rescaled")
    new_first = np.where(first <= 0.5, first + spec.delta, first - spec.delta)
    scale = (1.0 - new_first) / (1.0 - first)
    changed = table * scale[:, None]
    changed[:, 0] = new_first
    return model.with_cpt(v, changed)


def generate_transition_sequence(model: CausalModel, focal_ids: Sequence[int], delta: float, n: int,
                                 seed: int) -> tuple:
    focal_ids = [model.diagram.index_of(f) for f in focal_ids]
    if not focal_ids:
        raise SimulationError('At least one focal variable is required; sample a single dataset instead')
    if n < 1:
        raise SimulationError(f'Each dataset needs at least one case, got n={n}')
    models = [model]
    for f in focal_ids:
        models.append(apply_mechanism_change(models[-1], MechanismChangeSpec(f, delta)))
    datasets = [forward_sample(m, n, dataset_seed(seed, j)) for j, m in enumerate(models)]
    logger.debug(f'[Simulate] Generated {len(datasets)} datasets of {n} cases, focal {focal_ids}')
    return TransitionDatasets(tuple(datasets), tuple(focal_ids)), TransitionScenario(tuple(models), tuple(focal_ids))


def _joint(model: CausalModel) -> np.ndarray:
    try:
        return joint_distribution(model)
    except ModelError as e:
        raise SimulationError(str(e)) from None


def exact_marginals(model: CausalModel) -> list:
    joint = _joint(model)
    axes = range(model.diagram.n)
    return [Marginal(v, joint.sum(axis=tuple(a for a in axes if a != v))) for v in axes]


def exact_marginal(model: CausalModel, v: int) -> Marginal:
    v = model.diagram.index_of(v)
    joint = _joint(model)
    return Marginal(v, joint.sum(axis=tuple(a for a in range(model.diagram.n) if a != v)))


def is_influential_step(before: CausalModel, after: CausalModel, focal: int,
                        tol: float = definitions.INFLUENCE_TOLERANCE) -> bool:
    """True when the change at ``focal`` moves the marginal of every descendant by more than ``tol``."""
    if before.diagram != after.diagram:
        raise SimulationError('Models must share one diagram')
    targets = descendants(before.diagram, focal)
    if not targets:
        return True
    old, new = exact_marginals(before), exact_marginals(after)
    return all(old[y].distance(new[y]) > tol for y in targets)


def random_dag(n: int, edge_probability: float, rng: np.random.Generator, max_parents: Optional[int] = None,
               variables: Optional[Sequence[VariableSpec]] = None) -> CausalDiagram:
    """Random DAG whose topological order is a random permutation of the variables."""
    if not 1 <= n <= definitions.MAX_GRAPH_VARIABLES:
        raise SimulationError(f'Variable count must lie in [1, {definitions.MAX_GRAPH_VARIABLES}], got {n}')
    if not 0.0 <= edge_probability <= 1.0:
        raise SimulationError(f'Edge probability must lie in [0, 1], got {edge_probability}')
    variables = tuple(variables) if variables is not None else binary_variables(f'X{i + 1}' for i in range(n))
    order = rng.permutation(n)
    edges = []
    for b in range(1, n):
        candidates = [order[a] for a in range(b) if rng.random() < edge_probability]
        if max_parents is not None and len(candidates) > max_parents:
            candidates = list(rng.choice(candidates, size=max_parents, replace=False))
        edges.extend((int(p), int(order[b])) for p in candidates)
    return CausalDiagram.from_edges(variables, edges)


def random_model(diagram: CausalDiagram, rng: np.random.Generator, concentration: float = 1.0) -> CausalModel:
    """Model with CPT rows drawn from a symmetric Dirichlet distribution."""
    cpts = []
    for v in range(diagram.n):
        shape = (diagram.n_configurations(v), diagram.variables[v].cardinality)
        rows = rng.dirichlet(np.full(shape[1], concentration), size=shape[0])
        cpts.append(rows)
    return CausalModel(diagram, tuple(cpts))
