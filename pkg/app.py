"""Command-line entry point for changecause."""

import argparse
import json
import logging
import os
import sys

import definitions
import harness
from file_formats import load_network, read_manifest

logger = logging.getLogger('changecause')


def load_settings(path: str = definitions.SETTINGS_FILE_PATH) -> dict:
    # Settings live in userspace; a missing file means defaults
    if not os.path.exists(path):
        return {}
    with open(path, encoding='utf-8') as file:
        settings = json.load(file)
    if not isinstance(settings, dict):
        raise ValueError(f'{path}: settings must be a JSON object')
    unknown = set(settings) - set(definitions.SETTINGS_KEYS)
    if unknown:
        logger.warning(f'[App] Ignoring unknown settings {sorted(unknown)}')
    for key, value in settings.items():
        if isinstance(value, list) and key in definitions.SETTINGS_KEYS:
            if key not in definitions.GRID_KEYS or not value:
                raise ValueError(f'{path}: only non-empty lists of {", ".join(definitions.GRID_KEYS)} are allowed, '
                                 f'got {key}={value}')
    return settings


def _add_run_arguments(parser: argparse.ArgumentParser, grid: bool = False):
    # Experiments sweep every combination of the listed values
    nargs = '+' if grid else None
    parser.add_argument('--network', help='network definition file')
    parser.add_argument('--delta', type=float, nargs=nargs, help='mechanism change magnitude')
    parser.add_argument('--alpha', type=float, nargs=nargs, help='significance level')
    parser.add_argument('--n', type=int, nargs=nargs, help='cases per dataset')
    parser.add_argument('--k', type=int, nargs=nargs, help='number of focal variables')
    parser.add_argument('--runs', type=int)
    parser.add_argument('--seed', type=int)
    parser.add_argument('--max-conditioning', dest='max_conditioning', type=int)
    parser.add_argument('--out', help='output directory')


def _add_mode_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--identify-focal', action='store_true',
                        help='ignore known focal variables and identify focal buckets from the tags')
    parser.add_argument('--assume-influential', dest='influential', action='store_true', default=True,
                        help='assume every change reaches all descendants (default)')
    parser.add_argument('--no-influential', dest='influential', action='store_false',
                        help='do not assume every change reaches all descendants')
    parser.add_argument('--oracle', action='store_true', help='exact marginals and d-separation instead of tests')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='changecause',
                                     description='Causal structure from local mechanism changes.')
    parser.add_argument('--settings', default=definitions.SETTINGS_FILE_PATH, help='JSON settings file')
    parser.add_argument('--verbose', action='store_true')
    parser.add_argument('--version', action='version', version=definitions.VERSION)
    commands = parser.add_subparsers(dest='command', required=True)

    simulate = commands.add_parser('simulate', help='generate a transition sequence of datasets')
    _add_run_arguments(simulate)
    simulate.add_argument('--focal', nargs='+', help='focal variable names, in transition order')

    detect = commands.add_parser('detect', help='write the change tag matrix of a manifest')
    detect.add_argument('--manifest', required=True)
    detect.add_argument('--alpha', type=float)
    detect.add_argument('--out')

    discover = commands.add_parser('discover', help='marked order graph, claims and CPDAG from a manifest')
    discover.add_argument('--manifest', required=True)
    discover.add_argument('--alpha', type=float)
    discover.add_argument('--max-conditioning', dest='max_conditioning', type=int)
    discover.add_argument('--out')
    _add_mode_arguments(discover)

    score = commands.add_parser('score', help='BDe-TS posterior over candidate diagrams')
    score.add_argument('--manifest', required=True)
    group = score.add_mutually_exclusive_group(required=True)
    group.add_argument('--diagrams', help='file with one diagram key per line')
    group.add_argument('--exhaustive', action='store_true', help='score every DAG on the variables')
    score.add_argument('--ess', type=float)
    score.add_argument('--out')

    experiment = commands.add_parser('experiment', help='run a replication experiment')
    experiment.add_argument('kind', choices=definitions.EXPERIMENT_KINDS)
    _add_run_arguments(experiment, grid=True)
    _add_mode_arguments(experiment)
    experiment.add_argument('--pairs', type=int, default=definitions.DEFAULT_CALIBRATION_PAIRS,
                            help='dataset pairs for calibration')
    return parser


def _first(value):
    return value[0] if isinstance(value, list) else value


def _grid(args, settings: dict) -> dict:
    """Settings given with several values, from the command line first, then the settings file."""
    grid = {}
    for key in definitions.GRID_KEYS:
        values = getattr(args, key, None)
        if values is None:
            values = settings.get(key)
        if isinstance(values, list) and len(values) > 1:
            grid[key] = values
    return grid


def _config(args, settings: dict) -> harness.RunConfig:
    settings = {key: _first(value) for key, value in settings.items()}
    overrides = {key: _first(getattr(args, key, None)) for key in
                 ('network', 'delta', 'alpha', 'n', 'k', 'runs', 'seed', 'ess', 'max_conditioning', 'out')}
    focal = getattr(args, 'focal', None)
    if focal:
        overrides['focal'] = tuple(focal)
        if overrides['k'] is None:
            overrides['k'] = len(focal)
    if getattr(args, 'identify_focal', False):
        overrides['known_focal'] = False
        overrides['identify_focal'] = True
    if not getattr(args, 'influential', True):
        overrides['influential'] = False
    if getattr(args, 'oracle', False):
        overrides['oracle'] = True
    return harness.RunConfig.from_settings(settings, **overrides)


def run(args, settings: dict) -> int:
    config = _config(args, settings)
    if args.command == 'simulate':
        manifest = harness.cmd_simulate(config)
        print(manifest.path)
    elif args.command == 'detect':
        tags = harness.cmd_detect(args.manifest, config.alpha, args.out)
        if not args.out:
            manifest = read_manifest(args.manifest)
            print(tags.to_text(load_network(manifest.resolve(manifest.network)).diagram.names), end='')
    elif args.command == 'discover':
        result = harness.cmd_discover(args.manifest, config.alpha, config, args.out)
        for message in result.diagnostics:
            print(message)
        return 1 if result.has_conflicts else 0
    elif args.command == 'score':
        posterior = harness.cmd_score(args.manifest, args.diagrams, config.ess, args.out)
        if not args.out:
            print(posterior.to_text(), end='')
    elif args.command == 'experiment':
        table = harness.run_experiment(args.kind, config, _grid(args, settings), pairs=args.pairs)
        if config.out:
            table.write(config.out)
        print(table.to_text(), end='')
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        settings = load_settings(args.settings)
        return run(args, settings)
    except (ValueError, OSError) as e:
        logger.error(f'[App] {e}')
        return 2


if __name__ == '__main__':
    sys.exit(main())
