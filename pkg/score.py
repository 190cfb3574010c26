"""BDe-TS scoring: Bayesian marginal likelihood of a diagram given a transition sequence.

Families of non-focal variables are scored once over the pooled counts of all
datasets. The family of the focal variable of transition l is scored as two
independent blocks, the datasets before the change and the datasets from the
change onwards, each under the same Dirichlet prior.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

import definitions
from model import CausalDiagram, ModelError
from simulate import TransitionDatasets

logger = logging.getLogger(__name__)

GraphPrior = Callable[[CausalDiagram], float]


class ScoreError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DirichletPrior:
    """Hyperparameters per variable, shaped (parent configurations, states)."""

    ess: float
    alphas: tuple

    def __post_init__(self):
        if not self.ess > 0:
            raise ScoreError(f'Equivalent sample size must be positive, got {self.ess}')
        alphas = tuple(np.array(a, dtype=float) for a in self.alphas)
        if any((a <= 0).any() for a in alphas):
            raise ScoreError('Dirichlet hyperparameters must be positive')
        object.__setattr__(self, 'alphas', alphas)


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Counts N^j per variable, shaped (datasets, parent configurations, states)."""

    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, 'counts', tuple(np.asarray(c, dtype=np.int64) for c in self.counts))

    @property
    def k(self) -> int:
        return self.counts[0].shape[0] - 1 if self.counts else 0

    def pre(self, v: int, l: int) -> np.ndarray:
        """M^l: counts of datasets 0..l-1."""
        return self.counts[v][:l].sum(axis=0)

    def post(self, v: int, l: int) -> np.ndarray:
        """L^l: counts of datasets l..k."""
        return self.counts[v][l:].sum(axis=0)

    def pooled(self, v: int) -> np.ndarray:
        return self.counts[v].sum(axis=0)


@dataclass(frozen=True)
class TsScore:
    log_score: float
    components: tuple


@dataclass(frozen=True, eq=False)
class GraphPosterior:
    """Scored diagrams, in enumeration order, with normalized posterior probabilities."""

    diagrams: tuple
    log_scores: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if len(self.diagrams) != len(self.probabilities):
            raise ScoreError('One probability per diagram is required')
        if abs(float(np.sum(self.probabilities)) - 1.0) > 1e-9:
            raise ScoreError('Posterior probabilities must sum to 1')

    def as_dict(self) -> dict:
        return {diagram_key(d): float(p) for d, p in zip(self.diagrams, self.probabilities)}

    def probability_of(self, diagram: CausalDiagram) -> float:
        return self.as_dict().get(diagram_key(diagram), 0.0)

    def log_score_of(self, diagram: CausalDiagram) -> float:
        key = diagram_key(diagram)
        for d, s in zip(self.diagrams, self.log_scores):
            if diagram_key(d) == key:
                return float(s)
        raise ScoreError(f'Diagram {key} was not scored')

    def best(self) -> CausalDiagram:
        return self.diagrams[int(np.argmax(self.probabilities))]

    def to_text(self) -> str:
        lines = ['diagram\tlog_score\tposterior\n']
        for d, s, p in zip(self.diagrams, self.log_scores, self.probabilities):
            lines.append(f'{diagram_key(d)}\t{s:.10f}\t{p:.10f}\n')
        return ''.join(lines)


def diagram_key(diagram: CausalDiagram) -> str:
    """Serialize as ``child<-parent,parent`` entries in variable order, parents sorted by name."""
    names = diagram.names
    return ';'.join(f'{names[i]}<-{",".join(sorted(names[p] for p in pa))}' for i, pa in enumerate(diagram.parents))


def parse_diagram_key(key: str, variables: Sequence) -> CausalDiagram:
    names = [v.name for v in variables]
    entries = [e for e in key.strip().split(';') if e]
    if len(entries) != len(names):
        raise ScoreError(f"Diagram '{key}' lists {len(entries)} variables, expected {len(names)}")
    edges = []
    for entry in entries:
        child, sep, parents = entry.partition('<-')
        if not sep or child not in names:
            raise ScoreError(f"Malformed diagram entry '{entry}'")
        edges.extend((p, child) for p in parents.split(',') if p)
    try:
        diagram = CausalDiagram.from_edges(variables, edges)
    except ModelError as e:
        raise ScoreError(f"Diagram '{key}': {e}") from None
    if sorted(e.partition('<-')[0] for e in entries) != sorted(names):
        raise ScoreError(f"Diagram '{key}' does not list every variable once")
    return diagram


def bde_prior(diagram: CausalDiagram, ess: float = definitions.DEFAULT_ESS) -> DirichletPrior:
    """Uniform prior joint: every cell of variable i gets ess / (r_i * q_i)."""
    if not ess > 0:
        raise ScoreError(f'Equivalent sample size must be positive, got {ess}')
    alphas = []
    for i in range(diagram.n):
        q, r = diagram.n_configurations(i), diagram.variables[i].cardinality
        alphas.append(np.full((q, r), ess / (q * r)))
    return DirichletPrior(ess, tuple(alphas))


def _require_same_variables(ts: TransitionDatasets, diagram: CausalDiagram):
    if tuple(ts.variables) != tuple(diagram.variables):
        raise ScoreError('Datasets and diagram are defined over different variables')


def family_counts(ts: TransitionDatasets, v: int, parents: Sequence[int]) -> np.ndarray:
    """N^j for the family (v, parents), shaped (k + 1, q, r); parents in the given order."""
    cards = [spec.cardinality for spec in ts.variables]
    r = cards[v]
    parents = list(parents)
    q = int(np.prod([cards[p] for p in parents], dtype=np.int64))
    strides = np.ones(len(parents), dtype=np.int64)
    for j in range(len(parents) - 2, -1, -1):
        strides[j] = strides[j + 1] * cards[parents[j + 1]]
    counts = np.zeros((len(ts.datasets), q, r), dtype=np.int64)
    for j, dataset in enumerate(ts.datasets):
        cases = dataset.cases
        rows = cases[:, parents] @ strides if parents else np.zeros(dataset.n_cases, dtype=np.int64)
        counts[j] = np.bincount(rows * r + cases[:, v], minlength=q * r).reshape(q, r)
    return counts


def sufficient_stats(ts: TransitionDatasets, diagram: CausalDiagram) -> SufficientStats:
    _require_same_variables(ts, diagram)
    return SufficientStats(tuple(family_counts(ts, i, diagram.parents[i]) for i in range(diagram.n)))


def _dirichlet_block(counts: np.ndarray, alpha: np.ndarray) -> float:
    alpha_pa = alpha.sum(axis=1)
    n_pa = counts.sum(axis=1)
    return float(np.sum(gammaln(alpha_pa) - gammaln(alpha_pa + n_pa))
                 + np.sum(gammaln(alpha + counts) - gammaln(alpha)))


def family_log_score(counts: np.ndarray, alpha: np.ndarray, split_at: Optional[int] = None) -> float:
    """Log marginal likelihood of one family.

    Args:
        counts: per-dataset counts shaped (k + 1, q, r).
        alpha: hyperparameters shaped (q, r).
        split_at: for the focal variable of transition l, l; the datasets before
            it and the datasets from it onwards are scored as separate blocks.

    Returns:
        The natural-log score contribution.
    """
    if counts.shape[1:] != alpha.shape:
        raise ScoreError(f'Counts {counts.shape[1:]} and prior {alpha.shape} do not match')
    if split_at is None:
        return _dirichlet_block(counts.sum(axis=0), alpha)
    return _dirichlet_block(counts[:split_at].sum(axis=0), alpha) + _dirichlet_block(counts[split_at:].sum(axis=0), alpha)


def _split_points(focal_ids: Sequence[int], k: int, n: int) -> dict:
    focal_ids = [int(f) for f in focal_ids]
    if len(focal_ids) != k:
        raise ScoreError(f'Expected {k} focal variables, got {len(focal_ids)}')
    if len(set(focal_ids)) != len(focal_ids):
        raise ScoreError('Each variable may be focal in at most one transition')
    for f in focal_ids:
        if not 0 <= f < n:
            raise ScoreError(f'Focal index {f} out of range')
    return {f: j + 1 for j, f in enumerate(focal_ids)}


def log_marginal_likelihood(stats: SufficientStats, prior: DirichletPrior, diagram: CausalDiagram,
                            focal_ids: Sequence[int] = ()) -> TsScore:
    if len(stats.counts) != diagram.n or len(prior.alphas) != diagram.n:
        raise ScoreError('Statistics, prior and diagram disagree on the number of variables')
    splits = _split_points(focal_ids, stats.k, diagram.n)
    components = tuple(family_log_score(stats.counts[i], prior.alphas[i], splits.get(i))
                       for i in range(diagram.n))
    return TsScore(float(sum(components)), components)


def _is_acyclic(parent_masks: Sequence[int]) -> bool:
    placed, remaining = 0, set(range(len(parent_masks)))
    while remaining:
        ready = {i for i in remaining if parent_masks[i] & ~placed == 0}
        if not ready:
            return False
        for i in ready:
            placed |= 1 << i
        remaining -= ready
    return True


def _dag_parent_sets(n: int) -> Iterable:
    pairs = list(itertools.combinations(range(n), 2))
    for choice in itertools.product((0, 1, 2), repeat=len(pairs)):
        masks = [0] * n
        for (i, j), c in zip(pairs, choice):
            if c == 1:
                masks[j] |= 1 << i
            elif c == 2:
                masks[i] |= 1 << j
        if _is_acyclic(masks):
            yield tuple(tuple(p for p in range(n) if mask >> p & 1) for mask in masks)


def enumerate_dags(variables: Sequence) -> list:
    variables = tuple(variables)
    if len(variables) > definitions.MAX_EXHAUSTIVE_VARIABLES:
        raise ScoreError(f'Exhaustive enumeration supports at most {definitions.MAX_EXHAUSTIVE_VARIABLES} '
                         f'variables; use a heuristic structure search for larger problems')
    return [CausalDiagram(variables, parents) for parents in _dag_parent_sets(len(variables))]


def _resolve_focal(ts: TransitionDatasets, focal_ids: Optional[Sequence[int]]) -> list:
    if focal_ids is not None:
        return list(focal_ids)
    if ts.focal_ids is not None:
        return list(ts.focal_ids)
    if ts.k == 0:
        return []
    raise ScoreError('Scoring a transition sequence needs the focal variables')


def score_diagrams(ts: TransitionDatasets, diagrams: Sequence[CausalDiagram], focal_ids: Optional[Sequence[int]] = None,
                   ess: float = definitions.DEFAULT_ESS, graph_prior: Optional[GraphPrior] = None) -> GraphPosterior:
    """Score the given diagrams and normalize over them; family scores are shared between diagrams."""
    diagrams = tuple(diagrams)
    if not diagrams:
        raise ScoreError('No diagrams to score')
    for diagram in diagrams:
        _require_same_variables(ts, diagram)
    focal_ids = _resolve_focal(ts, focal_ids)
    splits = _split_points(focal_ids, ts.k, len(ts.variables))
    cache = {}
    log_scores = np.zeros(len(diagrams))
    for d, diagram in enumerate(diagrams):
        total = 0.0
        prior = bde_prior(diagram, ess)
        for i, pa in enumerate(diagram.parents):
            key = (i, tuple(pa))
            if key not in cache:
                cache[key] = family_log_score(family_counts(ts, i, pa), prior.alphas[i], splits.get(i))
            total += cache[key]
        log_scores[d] = total
    weights = log_scores + (np.array([graph_prior(d) for d in diagrams]) if graph_prior else 0.0)
    probabilities = np.exp(weights - logsumexp(weights))
    logger.debug(f'[Score] Scored {len(diagrams)} diagrams with {len(cache)} distinct families')
    return GraphPosterior(diagrams, log_scores, probabilities)


def posterior_over_dags(ts: TransitionDatasets, focal_ids: Optional[Sequence[int]] = None,
                        ess: float = definitions.DEFAULT_ESS, graph_prior: Optional[GraphPrior] = None) -> GraphPosterior:
    """Posterior over every DAG on the variables; uniform graph prior unless one is given."""
    return score_diagrams(ts, enumerate_dags(ts.variables), focal_ids, ess, graph_prior)
