"""Marginal change detection between consecutive datasets and the per-variable change tags."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats

import definitions
from definitions import Verdict
from simulate import Dataset, TransitionDatasets, TransitionScenario, exact_marginals

logger = logging.getLogger(__name__)


class DetectionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MarginalCounts:
    variable: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size < 2:
            raise DetectionError('Counts must be a vector with one entry per state')
        if (counts < 0).any():
            raise DetectionError('Counts must be non-negative')
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    @classmethod
    def from_dataset(cls, dataset: Dataset, v: int) -> 'MarginalCounts':
        return cls(v, dataset.counts(v))

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ChangeDecision:
    statistic: float
    threshold: float
    dof: int

    def __post_init__(self):
        if self.dof < 1:
            raise DetectionError(f'Degrees of freedom must be at least 1, got {self.dof}')

    @property
    def verdict(self) -> Verdict:
        return Verdict.CHANGE if self.statistic > self.threshold else Verdict.NO_CHANGE

    @property
    def changed(self) -> bool:
        return self.verdict is Verdict.CHANGE


@dataclass(frozen=True, eq=False)
class TagMatrix:
    """Change bits, one row per variable and one column per transition.

    Column ``j`` describes the transition from dataset ``j`` to dataset ``j + 1``.
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise DetectionError(f'Tag matrix must be 2-d, got shape {bits.shape}')
        if (bits > 1).any():
            raise DetectionError('Tag bits must be 0 or 1')
        bits.setflags(write=False)
        object.__setattr__(self, 'bits', bits)

    @classmethod
    def from_strings(cls, rows: Sequence[str]) -> 'TagMatrix':
        rows = list(rows)
        lengths = {len(r) for r in rows}
        if len(lengths) > 1:
            raise DetectionError('All tags must have the same length')
        if any(c not in '01' for r in rows for c in r):
            raise DetectionError('Tags may only contain 0 and 1')
        k = lengths.pop() if lengths else 0
        return cls(np.array([[int(c) for c in r] for r in rows], dtype=np.uint8).reshape(len(rows), k))

    @property
    def n_variables(self) -> int:
        return self.bits.shape[0]

    @property
    def k(self) -> int:
        return self.bits.shape[1]

    def tag(self, v: int) -> tuple:
        return tuple(int(b) for b in self.bits[v])

    def tag_string(self, v: int) -> str:
        return ''.join(str(b) for b in self.tag(v))

    def to_text(self, names: Optional[Sequence[str]] = None) -> str:
        names = list(names) if names is not None else [str(v) for v in range(self.n_variables)]
        return ''.join(f'{names[v]}\t{self.tag_string(v)}\n' for v in range(self.n_variables))


def chi_square_statistic(c1: MarginalCounts, c2: MarginalCounts) -> tuple:
    """Two-sample homogeneity statistic over the states observed in either sample.

    Returns:
        (statistic, dof) where dof counts the states with a nonzero combined count, minus one.
    """
    if c1.variable != c2.variable or c1.counts.size != c2.counts.size:
        raise DetectionError('Counts must describe the same variable')
    n1, n2 = c1.total, c2.total
    if n1 == 0 or n2 == 0:
        raise DetectionError('Both samples must be non-empty')
    combined = c1.counts + c2.counts
    observed = combined > 0
    difference = c1.counts[observed] / n1 - c2.counts[observed] / n2
    statistic = n1 * n2 * float(np.sum(difference ** 2 / combined[observed]))
    return statistic, int(observed.sum()) - 1


def chi_square_threshold(alpha: float, dof: int) -> float:
    if not 0.0 < alpha < 1.0:
        raise DetectionError(f'Significance level must lie in (0, 1), got {alpha}')
    if dof < 1:
        raise DetectionError(f'Degrees of freedom must be at least 1, got {dof}')
    return float(stats.chi2.isf(alpha, dof))


def detect_change(d1: Dataset, d2: Dataset, v: int, alpha: float = definitions.DEFAULT_ALPHA) -> ChangeDecision:
    if d1.n_cases == 0 or d2.n_cases == 0:
        raise DetectionError('Change detection needs non-empty datasets')
    statistic, dof = chi_square_statistic(MarginalCounts.from_dataset(d1, v), MarginalCounts.from_dataset(d2, v))
    # a single observed state gives statistic 0, which never exceeds the dof-1 threshold
    dof = max(dof, 1)
    return ChangeDecision(statistic, chi_square_threshold(alpha, dof), dof)


def build_tag_matrix(ts: TransitionDatasets, alpha: float = definitions.DEFAULT_ALPHA) -> TagMatrix:
    if ts.k < 1:
        raise DetectionError('Tags need at least one transition')
    n = len(ts.variables)
    bits = np.zeros((n, ts.k), dtype=np.uint8)
    for j in range(ts.k):
        before, after = ts.datasets[j], ts.datasets[j + 1]
        for v in range(n):
            bits[v, j] = detect_change(before, after, v, alpha).changed
    logger.debug(f'[Detect] {int(bits.sum())} changes detected over {ts.k} transitions')
    return TagMatrix(bits)


def exact_tag_matrix(scenario: TransitionScenario, tol: float = definitions.INFLUENCE_TOLERANCE) -> TagMatrix:
    """Tags from exact marginals of the generating models, a detector that never errs."""
    if scenario.k < 1:
        raise DetectionError('Tags need at least one transition')
    marginals = [exact_marginals(m) for m in scenario.models]
    n = scenario.diagram.n
    bits = np.zeros((n, scenario.k), dtype=np.uint8)
    for j in range(scenario.k):
        for v in range(n):
            bits[v, j] = marginals[j][v].distance(marginals[j + 1][v]) > tol
    return TagMatrix(bits)
