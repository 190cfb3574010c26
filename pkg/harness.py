"""Experiments and file-level commands.

The experiments measure how well change detection and the order graph
recover known structure: type I/II error rates of the detector under single
mechanism changes, calibration under no change, and the correctness of the
pairwise claims read off marked order graphs.
"""
from __future__ import annotations

import itertools
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

import definitions
from definitions import ClaimKind
from detect import TagMatrix, build_tag_matrix, detect_change, exact_tag_matrix
from discovery import (Claim, NoninfluentialRelations, build_marked_order_graph, claims_to_text, enumerate_claims,
                       mog_to_dot, noninfluential_relations)
from file_formats import (FormatError, Manifest, default_dataset_name, format_network, format_tsv, load_network,
                          load_transition_datasets, read_diagram_list, read_manifest, read_scenario, write_dataset,
                          write_json, write_manifest, write_scenario, write_text, write_tsv)
from hybrid import DiscoverOptions, DiscoveryResult, DSeparationOracle, discover
from model import CausalDiagram, CausalModel, descendants, has_directed_path, skeleton
from score import GraphPosterior, enumerate_dags, parse_diagram_key, score_diagrams
from simulate import (MechanismChangeSpec, TransitionScenario, apply_mechanism_change, dataset_seed, forward_sample,
                      generate_transition_sequence, is_influential_step, random_dag, random_model)

logger = logging.getLogger(__name__)

MechanismChange = Callable[[CausalModel, int], CausalModel]


@dataclass(frozen=True)
class RunConfig:
    network: str = definitions.BENCHMARK_NETWORK_PATH
    delta: float = definitions.DEFAULT_DELTA
    alpha: float = definitions.DEFAULT_ALPHA
    n: int = definitions.DEFAULT_N
    k: int = definitions.DEFAULT_K
    runs: int = definitions.DEFAULT_RUNS
    seed: int = definitions.DEFAULT_SEED
    ess: float = definitions.DEFAULT_ESS
    max_conditioning: int = definitions.DEFAULT_MAX_CONDITIONING
    focal: Optional[tuple] = None
    known_focal: bool = True
    influential: bool = True
    identify_focal: bool = False
    oracle: bool = False
    out: Optional[str] = None

    def __post_init__(self):
        if not 0 < self.delta <= definitions.MAX_DELTA:
            raise ValueError(f'delta must lie in (0, {definitions.MAX_DELTA}], got {self.delta}')
        if not 0 < self.alpha < 1:
            raise ValueError(f'alpha must lie in (0, 1), got {self.alpha}')
        if self.n < 1 or self.k < 0 or self.runs < 1 or self.seed < 0 or self.max_conditioning < 0:
            raise ValueError('n and runs must be positive; k, seed and max_conditioning non-negative')
        if not self.ess > 0:
            raise ValueError(f'ess must be positive, got {self.ess}')
        if self.focal is not None:
            object.__setattr__(self, 'focal', tuple(self.focal))
            if len(self.focal) != self.k:
                raise ValueError(f'{len(self.focal)} focal variables given for k={self.k}')

    @classmethod
    def from_settings(cls, settings: dict, **overrides) -> 'RunConfig':
        """Defaults, then the settings file, then explicit overrides that are not None."""
        values = {key: settings[key] for key in definitions.SETTINGS_KEYS if key in settings}
        values.update({key: value for key, value in overrides.items() if value is not None})
        return cls(**values)

    def to_dict(self) -> dict:
        data = asdict(self)
        data['network'] = os.path.basename(self.network)
        data.pop('out')
        return data


@dataclass
class ExperimentReport:
    """Per-run records and the aggregate of one experiment configuration."""

    kind: str
    config: RunConfig
    runs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def row(self) -> dict:
        columns = definitions.REPORT_CONFIG_COLUMNS.get(self.kind, ())
        return {**{label: getattr(self.config, key) for label, key in columns}, **self.summary}

    def to_dict(self) -> dict:
        return {'config': self.config.to_dict(), 'runs': self.runs, 'summary': self.summary}


@dataclass
class ExperimentTable:
    """Reports of one experiment kind, one row per configuration."""

    kind: str
    reports: list = field(default_factory=list)

    def rows(self) -> list:
        return [report.row() for report in self.reports]

    def to_text(self) -> str:
        return format_tsv(self.rows())

    def to_dict(self) -> dict:
        return {'experiment': self.kind, 'configurations': [report.to_dict() for report in self.reports]}

    def write(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        write_tsv(self.rows(), os.path.join(out_dir, f'{self.kind}.tsv'))
        write_json(self.to_dict(), os.path.join(out_dir, f'{self.kind}.json'))
        logger.info(f'[Harness] Wrote {self.kind} table with {len(self.reports)} rows to {out_dir}')


def _ratio(numerator: float, denominator: float) -> float:
    return float(numerator) / denominator if denominator else 0.0


def _run_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def _default_change(delta: float) -> MechanismChange:
    return lambda model, v: apply_mechanism_change(model, MechanismChangeSpec(v, delta))


def type_error_experiment(config: RunConfig, model: Optional[CausalModel] = None,
                          change: Optional[MechanismChange] = None) -> ExperimentReport:
    """Change each variable in turn, relative to the original model, and tally detection mistakes.

    c2nc counts descendants of the changed variable reported unchanged, nc2c
    counts nondescendants reported changed.
    """
    model = model or load_network(config.network)
    change = change or _default_change(config.delta)
    diagram = model.diagram
    report = ExperimentReport('type-errors', config)
    for run in range(config.runs):
        dec = ndec = c2nc = nc2c = 0
        for i in range(diagram.n):
            after = change(model, i)
            before_data = forward_sample(model, config.n, np.random.SeedSequence([config.seed, run, i, 0]))
            after_data = forward_sample(after, config.n, np.random.SeedSequence([config.seed, run, i, 1]))
            below = descendants(diagram, i)
            for v in range(diagram.n):
                if v == i:
                    continue
                changed = detect_change(before_data, after_data, v, config.alpha).changed
                if v in below:
                    dec += 1
                    c2nc += not changed
                else:
                    ndec += 1
                    nc2c += changed
        row = dict(dec=dec, ndec=ndec, c2nc=c2nc, nc2c=nc2c, c2nc_rate=_ratio(c2nc, dec), nc2c_rate=_ratio(nc2c, ndec))
        logger.debug(f'[Harness] type-errors run {run}: {row}')
        report.runs.append(row)
    totals = {key: sum(r[key] for r in report.runs) for key in ('dec', 'ndec', 'c2nc', 'nc2c')}
    report.summary = dict(
        Dec=totals['dec'], NDec=totals['ndec'], c2nc=totals['c2nc'], nc2c=totals['nc2c'],
        C2NC=_ratio(totals['c2nc'], totals['dec']), NC2C=_ratio(totals['nc2c'], totals['ndec']),
    )
    logger.info(f"[Harness] C2NC {report.summary['C2NC']:.4f}, NC2C {report.summary['NC2C']:.4f}")
    return report


def calibration_experiment(model: CausalModel, pairs: int = 2000, n: int = definitions.DEFAULT_N,
                           alpha: float = definitions.DEFAULT_ALPHA, seed: int = definitions.DEFAULT_SEED,
                           config: Optional[RunConfig] = None) -> ExperimentReport:
    """Rejection rate of the detector on pairs of datasets drawn from the same model.

    Each pair tests one variable, cycling through the variables.
    """
    rejections = 0
    for p in range(pairs):
        v = p % model.diagram.n
        d1 = forward_sample(model, n, np.random.SeedSequence([seed, p, 0]))
        d2 = forward_sample(model, n, np.random.SeedSequence([seed, p, 1]))
        rejections += detect_change(d1, d2, v, alpha).changed
    rate = _ratio(rejections, pairs)
    margin = 3.0 * float(np.sqrt(alpha * (1.0 - alpha) / pairs))
    report = ExperimentReport('calibration', config or RunConfig(alpha=alpha, n=n, seed=seed))
    report.summary = dict(pairs=pairs, rejections=rejections, rejection_rate=rate, alpha=alpha,
                          lower=max(alpha - margin, 0.0), upper=alpha + margin)
    logger.info(f'[Harness] Rejection rate {rate:.4f} at alpha {alpha}')
    return report


def score_claims(claims: Sequence[Claim], diagram: CausalDiagram) -> dict:
    """Count claims by kind and check them against the true diagram.

    An order claim x before y is wrong when y has a directed path to x; an NDP
    claim is wrong as a no-path claim when a directed path joins the pair and
    as a no-edge claim when they are adjacent.
    """
    adjacent = skeleton(diagram)
    counts = dict(order=0, order_errors=0, ndp=0, ndp_path_errors=0, ndp_edge_errors=0, unknown=0)
    for claim in claims:
        if claim.kind is ClaimKind.ORDER:
            counts['order'] += 1
            counts['order_errors'] += has_directed_path(diagram, claim.y, claim.x)
        elif claim.kind is ClaimKind.NDP:
            counts['ndp'] += 1
            counts['ndp_path_errors'] += (has_directed_path(diagram, claim.x, claim.y)
                                          or has_directed_path(diagram, claim.y, claim.x))
            counts['ndp_edge_errors'] += frozenset((claim.x, claim.y)) in adjacent
        elif claim.kind is ClaimKind.UNKNOWN:
            counts['unknown'] += 1
    return counts


def noninfluential_claims(relations: NoninfluentialRelations) -> list:
    """Order claims from the closed relation; pairs ordered both ways become unknown."""
    buckets = relations.partition.buckets
    claims = [Claim(ClaimKind.ORDER, x, y) for lower, upper in relations.less
              for x in buckets[lower].members for y in buckets[upper].members]
    claims.extend(Claim(ClaimKind.UNKNOWN, *sorted((x, y))) for pair in relations.unknown
                  for x in buckets[min(pair)].members for y in buckets[max(pair)].members)
    return sorted(claims, key=Claim.sort_key)


def og_claim_experiment(config: RunConfig, model: Optional[CausalModel] = None) -> ExperimentReport:
    """Random focal sequences of length k; claims of each order graph checked against the true diagram."""
    model = model or load_network(config.network)
    n_vars = model.diagram.n
    if not 1 <= config.k <= n_vars:
        raise ValueError(f'k must lie in [1, {n_vars}], got {config.k}')
    report = ExperimentReport('og-claims', config)
    for run in range(config.runs):
        rng = np.random.default_rng([config.seed, run])
        focal = [int(f) for f in rng.choice(n_vars, size=config.k, replace=False)]
        ts, scenario = generate_transition_sequence(model, focal, config.delta, config.n, _run_seed(config.seed, run))
        tags = exact_tag_matrix(scenario) if config.oracle else build_tag_matrix(ts, config.alpha)
        if config.influential:
            mog = build_marked_order_graph(tags, focal if config.known_focal else None, config.identify_focal)
            claims, buckets = enumerate_claims(mog), len(mog.buckets)
        else:
            relations = noninfluential_relations(tags, focal)
            claims, buckets = noninfluential_claims(relations), len(relations.partition.buckets)
        row = dict(m=buckets, **score_claims(claims, model.diagram))
        logger.debug(f'[Harness] og-claims run {run}: focal {focal}, {row}')
        report.runs.append(row)
    totals = {key: sum(r[key] for r in report.runs) for key in report.runs[0]}
    report.summary = {
        'm': totals['m'] / config.runs,
        '#order': totals['order'] / config.runs,
        'E_o': _ratio(totals['order_errors'], totals['order']),
        '#NDP': totals['ndp'] / config.runs,
        'E_p': _ratio(totals['ndp_path_errors'], totals['ndp']),
        'E_e': _ratio(totals['ndp_edge_errors'], totals['ndp']),
        'u': totals['unknown'] / config.runs,
    }
    logger.info(f"[Harness] E_o {report.summary['E_o']:.4f}, E_p {report.summary['E_p']:.4f}, "
                f"E_e {report.summary['E_e']:.4f}, u {report.summary['u']:.2f}")
    return report


def expand_grid(config: RunConfig, grid: Optional[dict] = None) -> list:
    """One config per point of the product of the listed values, swept in ``GRID_KEYS`` order."""
    grid = grid or {}
    unknown = set(grid) - set(definitions.GRID_KEYS)
    if unknown:
        raise ValueError(f'Only {", ".join(definitions.GRID_KEYS)} can be swept, got {sorted(unknown)}')
    keys = [key for key in definitions.GRID_KEYS if key in grid]
    values = [list(grid[key]) for key in keys]
    if any(not axis for axis in values):
        raise ValueError('Every swept setting needs at least one value')
    return [replace(config, **dict(zip(keys, point))) for point in itertools.product(*values)]


def run_experiment(kind: str, config: RunConfig, grid: Optional[dict] = None, model: Optional[CausalModel] = None,
                   pairs: int = definitions.DEFAULT_CALIBRATION_PAIRS) -> ExperimentTable:
    """Run one experiment kind at every grid point; each point gives one row of the table."""
    if kind not in definitions.EXPERIMENT_KINDS:
        raise ValueError(f'Unknown experiment {kind!r}')
    model = model or load_network(config.network)
    table = ExperimentTable(kind)
    for point in expand_grid(config, grid):
        logger.info(f'[Harness] {kind}: k={point.k} delta={point.delta} alpha={point.alpha} N={point.n}')
        if kind == 'type-errors':
            table.reports.append(type_error_experiment(point, model))
        elif kind == 'og-claims':
            table.reports.append(og_claim_experiment(point, model))
        else:
            table.reports.append(calibration_experiment(model, pairs, point.n, point.alpha, point.seed, point))
    return table
    return report


def draw_influential_scenario(rng: np.random.Generator, n: int, focal_count: Optional[int] = None,
                              delta: float = definitions.DEFAULT_DELTA, edge_probability: float = 0.4,
                              attempts: int = definitions.INFLUENTIAL_DRAW_ATTEMPTS) -> TransitionScenario:
    """Random binary model and distinct focal sequence in which every step is influential.

    With ``focal_count`` None every variable is focal once, in random order.
    """
    for _ in range(attempts):
        model = random_model(random_dag(n, edge_probability, rng), rng)
        count = n if focal_count is None else focal_count
        focal = [int(f) for f in rng.permutation(n)[:count]]
        models = [model]
        for f in focal:
            models.append(apply_mechanism_change(models[-1], MechanismChangeSpec(f, delta)))
        if all(is_influential_step(a, b, f) for a, b, f in zip(models, models[1:], focal)):
            return TransitionScenario(tuple(models), tuple(focal))
        logger.warning('[Harness] Rejected a non-influential draw')
    raise ValueError(f'No influential scenario found in {attempts} attempts')


def _choose_focal(config: RunConfig, model: CausalModel) -> list:
    if config.focal is not None:
        return [model.diagram.index_of(name) for name in config.focal]
    rng = np.random.default_rng(config.seed)
    return [int(f) for f in rng.choice(model.diagram.n, size=config.k, replace=False)]


def cmd_simulate(config: RunConfig) -> Manifest:
    """Write the network copy, datasets, ground-truth scenario and manifest into ``config.out``."""
    if not config.out:
        raise ValueError('simulate needs an output directory')
    model = load_network(config.network)
    os.makedirs(config.out, exist_ok=True)
    write_text(format_network(model), os.path.join(config.out, 'network.net'))
    scenario_name = None
    focal_names = None
    if config.k == 0:
        datasets = [forward_sample(model, config.n, dataset_seed(config.seed, 0))]
    else:
        focal = _choose_focal(config, model)
        ts, scenario = generate_transition_sequence(model, focal, config.delta, config.n, config.seed)
        datasets = list(ts.datasets)
        scenario_name = definitions.SCENARIO_FILE_NAME
        write_scenario(scenario, os.path.join(config.out, scenario_name))
        focal_names = tuple(model.diagram.names[f] for f in focal)
    names = []
    for j, dataset in enumerate(datasets):
        names.append(default_dataset_name(j))
        write_dataset(dataset, os.path.join(config.out, names[-1]))
    manifest = Manifest(os.path.join(config.out, definitions.MANIFEST_FILE_NAME), 'network.net', tuple(names),
                        focal_names, config.delta, config.seed, config.n, scenario_name)
    write_manifest(manifest)
    logger.info(f'[Harness] Wrote {len(datasets)} datasets to {config.out}')
    return manifest


def cmd_detect(manifest_path: str, alpha: float = definitions.DEFAULT_ALPHA, out: Optional[str] = None) -> TagMatrix:
    manifest = read_manifest(manifest_path)
    ts = load_transition_datasets(manifest)
    tags = build_tag_matrix(ts, alpha)
    if out:
        os.makedirs(out, exist_ok=True)
        write_text(tags.to_text(ts.names), os.path.join(out, 'tags.tsv'))
    return tags


def cmd_discover(manifest_path: str, alpha: float = definitions.DEFAULT_ALPHA, config: Optional[RunConfig] = None,
                 out: Optional[str] = None) -> DiscoveryResult:
    """End-to-end run; writes tags, the marked order graph, claims and the CPDAG when ``out`` is set."""
    config = config or RunConfig(alpha=alpha)
    manifest = read_manifest(manifest_path)
    model = load_network(manifest.resolve(manifest.network))
    ts = load_transition_datasets(manifest, model)
    for j, dataset in enumerate(ts.datasets):
        if dataset.n_cases == 0:
            raise FormatError('Dataset has no cases', manifest.resolve(manifest.datasets[j]))
    tags, ci_test = None, None
    if config.oracle:
        if not manifest.scenario:
            raise FormatError('Oracle mode needs the ground-truth scenario', manifest.path)
        tags = exact_tag_matrix(read_scenario(manifest.resolve(manifest.scenario), model.diagram))
        ci_test = DSeparationOracle(model.diagram)
    options = DiscoverOptions(use_known_focal=config.known_focal, identify_focal=config.identify_focal,
                              assume_influential=config.influential, max_conditioning=config.max_conditioning,
                              tags=tags, ci_test=ci_test)
    result = discover(ts, alpha, options)
    names = ts.names
    for message in result.diagnostics:
        logger.info(f'[Harness] {message}')
    if out:
        os.makedirs(out, exist_ok=True)
        write_text(result.tags.to_text(names), os.path.join(out, 'tags.tsv'))
        if result.mog is not None:
            write_text(mog_to_dot(result.mog, names), os.path.join(out, 'mog.dot'))
            write_text(claims_to_text(enumerate_claims(result.mog), names), os.path.join(out, 'claims.txt'))
        elif result.relations is not None:
            claims = noninfluential_claims(result.relations)
            write_text(claims_to_text(claims, names), os.path.join(out, 'claims.txt'))
        write_text(result.cpdag.to_dot(result.knowledge, result.diagnostics), os.path.join(out, 'cpdag.dot'))
        identified = [None if b is None else sorted(names[m] for m in b.members) for b in result.identified]
        write_json({'identified_focal': identified, 'diagnostics': list(result.diagnostics),
                    'conflicts': result.has_conflicts}, os.path.join(out, 'discover.json'))
    return result


def cmd_score(manifest_path: str, diagrams_path: Optional[str] = None, ess: float = definitions.DEFAULT_ESS,
              out: Optional[str] = None) -> GraphPosterior:
    """Score listed diagrams, or every DAG on the variables when no list is given."""
    manifest = read_manifest(manifest_path)
    model = load_network(manifest.resolve(manifest.network))
    ts = load_transition_datasets(manifest, model)
    variables = model.diagram.variables
    if diagrams_path:
        diagrams = [parse_diagram_key(key, variables) for key in read_diagram_list(diagrams_path)]
    else:
        diagrams = enumerate_dags(variables)
    posterior = score_diagrams(ts, diagrams, ts.focal_ids, ess)
    if out:
        os.makedirs(out, exist_ok=True)
        write_text(posterior.to_text(), os.path.join(out, 'scores.tsv'))
    return posterior
