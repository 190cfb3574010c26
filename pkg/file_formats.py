"""Reading and writing networks, datasets, manifests, scenarios and reports.

Network files are plain text::

    # comment
    variable Rain { states: no, yes }
    variable Grass { states: dry, wet }
    parents Grass: Rain
    cpt Rain: 0.8, 0.2
    cpt Grass | no: 0.9, 0.1
    cpt Grass | yes: 0.2, 0.8

A ``cpt`` row is keyed by the parent states in declared parent order; every
parent configuration must be given exactly once.
"""
from __future__ import annotations

import itertools
import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from numpyencoder import NumpyEncoder

import definitions
from model import CausalDiagram, CausalModel, Cpt, ModelError, VariableSpec
from simulate import Dataset, SimulationError, TransitionDatasets, TransitionScenario

logger = logging.getLogger(__name__)

_VARIABLE_RE = re.compile(r'^variable\s+(\S+)\s*\{\s*states\s*:\s*(.*?)\s*\}$')
_PARENTS_RE = re.compile(r'^parents\s+(\S+?)\s*:\s*(.*)$')
_CPT_RE = re.compile(r'^cpt\s+(\S+?)\s*(?:\|\s*(.*?)\s*)?:\s*(.*)$')


class FormatError(ValueError):
    def __init__(self, message: str, path: str = '<string>', line: Optional[int] = None):
        self.path = path
        self.line = line
        location = f'{path}:{line}' if line is not None else path
        super().__init__(f'{location}: {message}')


def _split_list(text: str) -> list:
    return [item.strip() for item in text.split(',') if item.strip()]


def parse_network(text: str, path: str = '<string>') -> CausalModel:
    variables, parents, rows = {}, {}, {}
    order = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if match := _VARIABLE_RE.match(line):
            name, states = match.group(1), _split_list(match.group(2))
            if name in variables:
                raise FormatError(f"Variable '{name}' declared twice", path, number)
            try:
                variables[name] = VariableSpec(name, tuple(states))
            except ModelError as e:
                raise FormatError(str(e), path, number) from None
            order.append(name)
        elif match := _PARENTS_RE.match(line):
            name = match.group(1)
            if name not in variables:
                raise FormatError(f"Parents given for undeclared variable '{name}'", path, number)
            if name in parents:
                raise FormatError(f"Parents of '{name}' given twice", path, number)
            parents[name] = (_split_list(match.group(2)), number)
        elif match := _CPT_RE.match(line):
            name, config, values = match.group(1), match.group(2), match.group(3)
            if name not in variables:
                raise FormatError(f"CPT row for undeclared variable '{name}'", path, number)
            try:
                probabilities = [float(v) for v in _split_list(values)]
            except ValueError:
                raise FormatError(f"Non-numeric probability in '{values}'", path, number) from None
            key = tuple(_split_list(config or ''))
            if key in rows.setdefault(name, {}):
                raise FormatError(f"Duplicate CPT row for '{name}' at {key}", path, number)
            rows[name][key] = (probabilities, number)
        else:
            raise FormatError(f"Cannot parse '{line}'", path, number)

    if not order:
        raise FormatError('Network declares no variables', path)
    specs = tuple(variables[name] for name in order)
    parent_indices = []
    for name in order:
        names, number = parents.get(name, ([], None))
        for p in names:
            if p not in variables:
                raise FormatError(f"Unknown parent '{p}' of '{name}'", path, number)
        parent_indices.append(tuple(order.index(p) for p in names))
    try:
        diagram = CausalDiagram(specs, tuple(parent_indices))
    except ModelError as e:
        raise FormatError(str(e), path) from None

    tables = []
    for i, name in enumerate(order):
        given = rows.get(name, {})
        parent_states = [specs[p].states for p in diagram.parents[i]]
        table = []
        for config in itertools.product(*parent_states):
            if config not in given:
                raise FormatError(f"Missing CPT row for '{name}' at parent states {config or '()'}", path)
            probabilities, number = given[config]
            if len(probabilities) != specs[i].cardinality:
                raise FormatError(f"CPT row for '{name}' needs {specs[i].cardinality} values", path, number)
            table.append(probabilities)
        if len(given) != len(table):
            extra = next(iter(set(given) - set(itertools.product(*parent_states))))
            raise FormatError(f"CPT row for '{name}' has unknown parent states {extra}", path, given[extra][1])
        try:
            tables.append(Cpt(np.array(table, dtype=float)))
        except ModelError as e:
            raise FormatError(f"CPT of '{name}': {e}", path) from None
    return CausalModel(diagram, tuple(tables))


def load_network(path: str) -> CausalModel:
    with open(path, encoding='utf-8') as file:
        model = parse_network(file.read(), path)
    logger.debug(f'[Formats] Loaded {model.diagram.n} variables from {path}')
    return model


def format_network(model: CausalModel) -> str:
    diagram = model.diagram
    names = diagram.names
    lines = [f'variable {v.name} {{ states: {", ".join(v.states)} }}' for v in diagram.variables]
    lines.extend(f'parents {names[i]}: {", ".join(names[p] for p in pa)}'
                 for i, pa in enumerate(diagram.parents) if pa)
    for i, cpt in enumerate(model.cpts):
        parent_states = [diagram.variables[p].states for p in diagram.parents[i]]
        for config, row in zip(itertools.product(*parent_states), cpt.table):
            key = f' | {", ".join(config)}' if config else ''
            lines.append(f'cpt {names[i]}{key}: {", ".join(repr(float(x)) for x in row)}')
    return '\n'.join(lines) + '\n'


def save_network(model: CausalModel, path: str):
    with open(path, 'w', encoding='utf-8') as file:
        file.write(format_network(model))


def write_dataset(dataset: Dataset, path: str):
    frame = pd.DataFrame(dataset.labels(), columns=dataset.names)
    frame.to_csv(path, index=False, lineterminator='\n')


def read_dataset(path: str, variables: Sequence[VariableSpec]) -> Dataset:
    variables = tuple(variables)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise FormatError('Dataset file is empty', path, 1) from None
    names = [v.name for v in variables]
    if list(frame.columns) != names:
        raise FormatError(f'Header {list(frame.columns)} does not match variables {names}', path, 1)
    cases = np.zeros((len(frame), len(variables)), dtype=np.int64)
    for v, spec in enumerate(variables):
        codes = pd.Categorical(frame[spec.name].str.strip(), categories=list(spec.states)).codes
        if (codes < 0).any():
            row = int(np.argmax(codes < 0))
            raise FormatError(f"'{frame[spec.name].iloc[row]}' is not a state of '{spec.name}'", path, row + 2)
        cases[:, v] = codes
    return Dataset(variables, cases)


@dataclass(frozen=True)
class Manifest:
    """Where the datasets of one transition sequence live and how they were generated."""

    path: str
    network: str
    datasets: tuple
    focal: Optional[tuple] = None
    delta: Optional[float] = None
    seed: Optional[int] = None
    n: Optional[int] = None
    scenario: Optional[str] = None

    def resolve(self, relative: str) -> str:
        return os.path.join(os.path.dirname(os.path.abspath(self.path)), relative)


def write_manifest(manifest: Manifest):
    data = {
        'network': manifest.network,
        'datasets': list(manifest.datasets),
        'focal': list(manifest.focal) if manifest.focal is not None else None,
        'delta': manifest.delta,
        'seed': manifest.seed,
        'n': manifest.n,
        'scenario': manifest.scenario,
    }
    with open(manifest.path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=4, cls=NumpyEncoder)
        file.write('\n')


def read_manifest(path: str) -> Manifest:
    try:
        with open(path, encoding='utf-8') as file:
            data = json.load(file)
    except json.JSONDecodeError as e:
        raise FormatError(f'Invalid manifest: {e.msg}', path, e.lineno) from None
    if not isinstance(data, dict) or not data.get('datasets'):
        raise FormatError('Manifest must list at least one dataset', path)
    if not data.get('network'):
        raise FormatError('Manifest must name the network file', path)
    focal = data.get('focal')
    if focal is not None and len(focal) != len(data['datasets']) - 1:
        raise FormatError(f"Manifest lists {len(focal)} focal variables for {len(data['datasets'])} datasets", path)
    return Manifest(path, data['network'], tuple(data['datasets']), tuple(focal) if focal is not None else None,
                    data.get('delta'), data.get('seed'), data.get('n'), data.get('scenario'))


def load_transition_datasets(manifest: Manifest, model: Optional[CausalModel] = None,
                             with_focal: bool = True) -> TransitionDatasets:
    model = model or load_network(manifest.resolve(manifest.network))
    variables = model.diagram.variables
    datasets = tuple(read_dataset(manifest.resolve(p), variables) for p in manifest.datasets)
    focal = None
    if with_focal and manifest.focal is not None:
        try:
            focal = tuple(model.diagram.index_of(name) for name in manifest.focal)
        except ModelError as e:
            raise FormatError(str(e), manifest.path) from None
    try:
        return TransitionDatasets(datasets, focal)
    except SimulationError as e:
        raise FormatError(str(e), manifest.path) from None


def write_scenario(scenario: TransitionScenario, path: str):
    names = scenario.diagram.names
    data = {
        'focal': [names[f] for f in scenario.focal_ids],
        'models': [{names[i]: cpt.table for i, cpt in enumerate(m.cpts)} for m in scenario.models],
    }
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=4, cls=NumpyEncoder)
        file.write('\n')


def read_scenario(path: str, diagram: CausalDiagram) -> TransitionScenario:
    with open(path, encoding='utf-8') as file:
        data = json.load(file)
    try:
        focal = tuple(diagram.index_of(name) for name in data['focal'])
        models = tuple(CausalModel(diagram, tuple(np.array(m[name]) for name in diagram.names))
                       for m in data['models'])
        return TransitionScenario(models, focal)
    except (KeyError, ModelError, SimulationError) as e:
        raise FormatError(f'Invalid scenario: {e}', path) from None


def write_text(text: str, path: str):
    with open(path, 'w', encoding='utf-8') as file:
        file.write(text)


def format_tsv(rows: Sequence[dict]) -> str:
    return pd.DataFrame(list(rows)).to_csv(sep='\t', index=False, lineterminator='\n')


def write_tsv(rows: Sequence[dict], path: str):
    write_text(format_tsv(rows), path)


def write_json(data, path: str):
    with open(path, 'w', encoding='utf-8') as file:
        json.dump(data, file, indent=4, sort_keys=False, cls=NumpyEncoder)
        file.write('\n')


def read_diagram_list(path: str) -> list:
    """One diagram key per line; blank lines and ``#`` comments are skipped."""
    with open(path, encoding='utf-8') as file:
        return [line.split('#', 1)[0].strip() for line in file if line.split('#', 1)[0].strip()]


def default_dataset_name(index: int) -> str:
    return definitions.DATASET_FILE_PATTERN.format(index=index)
