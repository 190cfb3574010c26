"""Tests for harness module."""

import dataclasses
import json
import os

import numpy as np
import pytest

import definitions
import harness
from definitions import ClaimKind
from detect import TagMatrix, build_tag_matrix
from discovery import Claim, build_marked_order_graph, enumerate_claims, noninfluential_relations
from file_formats import FormatError, read_manifest, save_network, write_dataset, write_manifest
from harness import (ExperimentReport, ExperimentTable, RunConfig, calibration_experiment, cmd_detect, cmd_discover,
                     cmd_score, cmd_simulate, draw_influential_scenario, expand_grid, noninfluential_claims,
                     og_claim_experiment, run_experiment, score_claims, type_error_experiment)
from model import CausalDiagram, CausalModel, binary_variables
from simulate import Dataset, generate_transition_sequence

pytestmark = pytest.mark.integration


@pytest.fixture
def chain_network(tmp_path, chain_model):
    path = str(tmp_path / 'chain.net')
    save_network(chain_model, path)
    return path


@pytest.fixture
def simulated(tmp_path, chain_network):
    """A -> B -> C with changes at A then C, written to disk."""
    config = RunConfig(network=chain_network, k=2, n=300, seed=3, focal=('A', 'C'), out=str(tmp_path / 'sim'))
    return cmd_simulate(config)


class TestRunConfig:
    """Test RunConfig validation and settings handling."""

    def test_defaults(self):
        config = RunConfig()
        assert config.alpha == definitions.DEFAULT_ALPHA
        assert config.network == definitions.BENCHMARK_NETWORK_PATH

    @pytest.mark.parametrize("kwargs", [
        dict(delta=0.0), dict(delta=0.7), dict(alpha=1.0), dict(n=0), dict(k=-1), dict(runs=0),
        dict(ess=0.0), dict(max_conditioning=-1), dict(k=2, focal=('A',)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            RunConfig(**kwargs)

    def test_from_settings(self):
        config = RunConfig.from_settings({'alpha': 0.05, 'n': 100, 'unrelated': 1}, n=None, runs=7)
        assert config.alpha == 0.05
        assert config.n == 100
        assert config.runs == 7

    def test_to_dict(self):
        data = RunConfig(out='/tmp/x').to_dict()
        assert data['network'] == os.path.basename(definitions.BENCHMARK_NETWORK_PATH)
        assert 'out' not in data


class TestExperimentReport:
    """Test ExperimentReport rows and ExperimentTable files."""

    def test_row_leads_with_config_columns(self):
        report = ExperimentReport('og-claims', RunConfig(k=3, delta=0.2, alpha=0.05, n=800), summary={'E_o': 0.1})
        assert report.row() == {'k': 3, 'δ': 0.2, 'α': 0.05, 'N': 800, 'E_o': 0.1}
        assert list(ExperimentReport('calibration', RunConfig(), summary={'pairs': 5}).row()) == ['α', 'N', 'pairs']

    def test_unknown_kind_has_no_config_columns(self):
        assert ExperimentReport('demo', RunConfig(), summary={'x': 4}).row() == {'x': 4}

    def test_table_write(self, tmp_path):
        reports = [ExperimentReport('demo', RunConfig(n=n), runs=[{'x': n}], summary={'x': 2 * n}) for n in (1, 3)]
        table = ExperimentTable('demo', reports)
        assert table.rows() == [{'x': 2}, {'x': 6}]
        assert table.to_text() == 'x\n2\n6\n'
        table.write(str(tmp_path / 'out'))
        assert (tmp_path / 'out' / 'demo.tsv').read_text() == 'x\n2\n6\n'
        data = json.loads((tmp_path / 'out' / 'demo.json').read_text())
        assert data['experiment'] == 'demo'
        assert [c['config']['n'] for c in data['configurations']] == [1, 3]
        assert data['configurations'][1]['runs'] == [{'x': 3}]


class TestExpandGrid:
    """Test expand_grid."""

    def test_no_grid(self):
        config = RunConfig(n=50)
        assert expand_grid(config) == [config]

    def test_product_order(self):
        configs = expand_grid(RunConfig(runs=2), {'n': [500, 5000], 'delta': [0.1, 0.5]})
        assert [(c.delta, c.n) for c in configs] == [(0.1, 500), (0.1, 5000), (0.5, 500), (0.5, 5000)]
        assert all(c.runs == 2 for c in configs)

    def test_invalid(self):
        with pytest.raises(ValueError, match='swept'):
            expand_grid(RunConfig(), {'runs': [1, 2]})
        with pytest.raises(ValueError):
            expand_grid(RunConfig(), {'n': []})
        with pytest.raises(ValueError):
            expand_grid(RunConfig(), {'delta': [0.1, 0.9]})


class TestRunExperiment:
    """Test run_experiment."""

    def test_one_row_per_configuration(self, changes_example_model):
        config = RunConfig(k=2, runs=2, oracle=True)
        table = run_experiment('og-claims', config, {'delta': [0.1, 0.3], 'k': [1, 2]}, changes_example_model)
        rows = table.rows()
        assert [(row['k'], row['δ']) for row in rows] == [(1, 0.1), (1, 0.3), (2, 0.1), (2, 0.3)]
        assert list(rows[0]) == ['k', 'δ', 'α', 'N', 'm', '#order', 'E_o', '#NDP', 'E_p', 'E_e', 'u']

    def test_type_error_columns(self, chain_model):
        table = run_experiment('type-errors', RunConfig(n=50, runs=1), {'n': [50, 100]}, chain_model)
        assert list(table.rows()[0]) == ['δ', 'α', 'N', 'Dec', 'NDec', 'c2nc', 'nc2c', 'C2NC', 'NC2C']
        assert [row['N'] for row in table.rows()] == [50, 100]

    def test_calibration_pairs(self, chain_model, mocker):
        spy = mocker.spy(harness, 'calibration_experiment')
        table = run_experiment('calibration', RunConfig(n=30), {'alpha': [0.01, 0.05]}, chain_model, pairs=6)
        assert spy.call_count == 2
        assert [row['pairs'] for row in table.rows()] == [6, 6]

    def test_loads_network(self, mocker, chain_model):
        load = mocker.patch('harness.load_network', return_value=chain_model)
        run_experiment('calibration', RunConfig(n=20, network='chain.net'), pairs=3)
        load.assert_called_once_with('chain.net')

    def test_unknown_kind(self, chain_model):
        with pytest.raises(ValueError):
            run_experiment('demo', RunConfig(), model=chain_model)


class TestScoreClaims:
    """Test score_claims and noninfluential_claims."""

    def test_hand_built_claims(self):
        # A -> B -> C, D isolated
        diagram = CausalDiagram.from_edges(binary_variables('ABCD'), [('A', 'B'), ('B', 'C')])
        claims = [
            Claim(ClaimKind.ORDER, 0, 2),
            Claim(ClaimKind.ORDER, 2, 0),
            Claim(ClaimKind.NDP, 0, 3),
            Claim(ClaimKind.NDP, 0, 2),
            Claim(ClaimKind.NDP, 0, 1),
            Claim(ClaimKind.UNKNOWN, 1, 3),
            Claim(ClaimKind.EDGE, 0, 1),
        ]
        assert score_claims(claims, diagram) == dict(order=2, order_errors=1, ndp=3, ndp_path_errors=2,
                                                     ndp_edge_errors=1, unknown=1)

    def test_noninfluential_claims(self):
        relations = noninfluential_relations(TagMatrix.from_strings(['10', '11', '01']), [0, 1])
        assert noninfluential_claims(relations) == [Claim(ClaimKind.ORDER, 0, 1), Claim(ClaimKind.ORDER, 0, 2),
                                                    Claim(ClaimKind.ORDER, 1, 2)]
        unknown = noninfluential_relations(TagMatrix.from_strings(['11', '11']), [0, 1])
        assert noninfluential_claims(unknown) == [Claim(ClaimKind.UNKNOWN, 0, 1)]

    def test_noninfluential_claims_on_cycle(self):
        """Test that buckets ordered both ways give unknown claims and no self-pairs."""
        relations = noninfluential_relations(TagMatrix.from_strings(['11', '11', '01']), [0, 1])
        assert noninfluential_claims(relations) == [Claim(ClaimKind.UNKNOWN, 0, 1), Claim(ClaimKind.ORDER, 0, 2),
                                                    Claim(ClaimKind.ORDER, 1, 2)]


class TestTypeErrorExperiment:
    """Test type_error_experiment."""

    def test_null_change_misses_every_descendant(self, chain_model):
        """Test that an identity change leaves every descendant undetected."""
        config = RunConfig(alpha=1e-9, n=200, runs=2)
        report = type_error_experiment(config, chain_model, change=lambda model, v: model)
        assert [(r['dec'], r['ndec']) for r in report.runs] == [(3, 3), (3, 3)]
        assert report.summary['c2nc'] == 6
        assert report.summary['C2NC'] == 1.0
        assert report.summary['nc2c'] == 0

    def test_reproducible(self, chain_model):
        config = RunConfig(n=100, runs=2, seed=4)
        assert type_error_experiment(config, chain_model).runs == type_error_experiment(config, chain_model).runs

    @pytest.mark.slow
    def test_rates_on_strong_changes(self, chain_model):
        report = type_error_experiment(RunConfig(n=2000, runs=5, delta=0.3), chain_model)
        assert report.summary['NC2C'] <= 0.05
        assert report.summary['C2NC'] <= 0.5

    @pytest.mark.slow
    def test_misses_fall_as_changes_grow(self, benchmark_model):
        """Test that C2NC on the benchmark is lower for delta 0.5 than for delta 0.1."""
        table = run_experiment('type-errors', RunConfig(n=500, alpha=0.01, runs=5), {'delta': [0.1, 0.5]},
                               benchmark_model)
        weak, strong = table.rows()
        assert strong['C2NC'] < weak['C2NC']
        assert strong['NC2C'] <= 0.05

class TestCalibrationExperiment:
    """Test calibration_experiment."""

    def test_summary(self, chain_model):
        report = calibration_experiment(chain_model, pairs=30, n=50, alpha=0.05, seed=1)
        summary = report.summary
        assert summary['pairs'] == 30
        assert summary['rejection_rate'] == summary['rejections'] / 30
        assert summary['lower'] < 0.05 < summary['upper']

    @pytest.mark.slow
    @pytest.mark.parametrize("alpha", [0.01, 0.05])
    def test_rejection_rate_near_alpha(self, benchmark_model, alpha):
        summary = calibration_experiment(benchmark_model, pairs=2000, n=500, alpha=alpha, seed=2).summary
        assert summary['lower'] <= summary['rejection_rate'] <= summary['upper']


class TestOgClaimExperiment:
    """Test og_claim_experiment and draw_influential_scenario."""

    def test_oracle_tags_make_no_errors(self, changes_example_model):
        config = RunConfig(k=2, runs=4, oracle=True, delta=0.2)
        summary = og_claim_experiment(config, changes_example_model).summary
        assert summary['E_o'] == 0.0 and summary['E_p'] == 0.0 and summary['E_e'] == 0.0
        assert summary['u'] == 0.0
        assert summary['#order'] > 0

    def test_oracle_without_influentiality(self, changes_example_model):
        config = RunConfig(k=2, runs=3, oracle=True, influential=False, delta=0.2)
        report = og_claim_experiment(config, changes_example_model)
        assert report.summary['E_o'] == 0.0
        assert report.summary['#NDP'] == 0.0

    def test_identify_focal_mode(self, changes_example_model):
        config = RunConfig(k=2, runs=2, oracle=True, known_focal=False, identify_focal=True)
        assert len(og_claim_experiment(config, changes_example_model).runs) == 2

    def test_k_range(self, chain_model):
        with pytest.raises(ValueError):
            og_claim_experiment(RunConfig(k=4), chain_model)
        with pytest.raises(ValueError):
            og_claim_experiment(RunConfig(k=0), chain_model)

    def test_draw_influential_scenario(self, rng):
        scenario = draw_influential_scenario(rng, 4, delta=0.2)
        assert sorted(scenario.focal_ids) == [0, 1, 2, 3]
        assert draw_influential_scenario(rng, 4, focal_count=2).k == 2
        with pytest.raises(ValueError):
            draw_influential_scenario(rng, 4, attempts=0)

    @pytest.mark.slow
    def test_benchmark_oracle_claims(self, benchmark_model):
        config = RunConfig(k=3, runs=3, oracle=True, delta=0.2)
        summary = og_claim_experiment(config, benchmark_model).summary
        assert summary['E_o'] == 0.0 and summary['E_p'] == 0.0 and summary['E_e'] == 0.0

    @pytest.mark.slow
    def test_benchmark_error_trends(self, benchmark_model):
        """Test the error trends over k, delta and N on the benchmark."""
        grid = {'k': [5, 10], 'delta': [0.1, 0.5], 'n': [500, 5000]}
        table = run_experiment('og-claims', RunConfig(alpha=0.01, runs=100), grid, benchmark_model)
        rows = {(row['k'], row['δ'], row['N']): row for row in table.rows()}
        assert len(rows) == 8
        assert rows[5, 0.5, 500]['E_o'] < rows[5, 0.1, 500]['E_o']
        assert rows[5, 0.1, 5000]['E_o'] < rows[5, 0.1, 500]['E_o']
        for delta in (0.1, 0.5):
            for n in (500, 5000):
                assert rows[10, delta, n]['#NDP'] > rows[5, delta, n]['#NDP']
        for row in rows.values():
            assert row['E_e'] < row['E_p'] or row['E_p'] == 0.0

    @pytest.mark.slow
    def test_sampled_example_recovers_edge(self, changes_example_model):
        """Test that the marked edge X -> Q is found for most seeds."""
        hits = 0
        for seed in range(20):
            ts, _ = generate_transition_sequence(changes_example_model, ['X', 'Y'], 0.5, 5000, seed)
            mog = build_marked_order_graph(build_tag_matrix(ts, 0.01), [0, 1])
            hits += Claim(ClaimKind.EDGE, 0, 2) in enumerate_claims(mog)
        assert hits >= 18


class TestCommands:
    """Test the file-level commands."""

    def test_simulate_files(self, simulated):
        out = os.path.dirname(simulated.path)
        for name in ('network.net', 'dataset_0.csv', 'dataset_1.csv', 'dataset_2.csv',
                     definitions.SCENARIO_FILE_NAME, definitions.MANIFEST_FILE_NAME):
            assert os.path.isfile(os.path.join(out, name))
        manifest = read_manifest(simulated.path)
        assert manifest.focal == ('A', 'C')
        assert manifest.scenario == definitions.SCENARIO_FILE_NAME

    def test_simulate_deterministic(self, tmp_path, chain_network, simulated):
        config = RunConfig(network=chain_network, k=2, n=300, seed=3, focal=('A', 'C'), out=str(tmp_path / 'again'))
        cmd_simulate(config)
        first = os.path.dirname(simulated.path)
        for j in range(3):
            name = f'dataset_{j}.csv'
            with open(os.path.join(first, name)) as a, open(tmp_path / 'again' / name) as b:
                assert a.read() == b.read()

    def test_simulate_without_transitions(self, tmp_path, chain_network):
        manifest = cmd_simulate(RunConfig(network=chain_network, k=0, n=20, out=str(tmp_path / 'plain')))
        assert manifest.datasets == ('dataset_0.csv',)
        assert manifest.focal is None and manifest.scenario is None

    def test_simulate_needs_out(self, chain_network):
        with pytest.raises(ValueError):
            cmd_simulate(RunConfig(network=chain_network, k=1))

    def test_detect(self, tmp_path, simulated):
        tags = cmd_detect(simulated.path, out=str(tmp_path / 'detect'))
        assert tags.bits.shape == (3, 2)
        lines = (tmp_path / 'detect' / 'tags.tsv').read_text().splitlines()
        assert [line.split('\t')[0] for line in lines] == ['A', 'B', 'C']

    def test_discover_oracle(self, tmp_path, simulated):
        out = tmp_path / 'discover'
        result = cmd_discover(simulated.path, config=RunConfig(oracle=True), out=str(out))
        assert result.cpdag.directed == {(0, 1), (1, 2)}
        for name in ('tags.tsv', 'mog.dot', 'claims.txt', 'cpdag.dot', 'discover.json'):
            assert (out / name).is_file()
        data = json.loads((out / 'discover.json').read_text())
        assert data['conflicts'] is False
        assert 'EDGE A B' in (out / 'claims.txt').read_text()

    def test_discover_sampled(self, simulated):
        result = cmd_discover(simulated.path)
        assert result.tags.k == 2

    def test_discover_identify_focal(self, tmp_path, simulated):
        out = tmp_path / 'identify'
        cmd_discover(simulated.path, config=RunConfig(oracle=True, known_focal=False, identify_focal=True),
                     out=str(out))
        data = json.loads((out / 'discover.json').read_text())
        assert len(data['identified_focal']) == 2

    def test_discover_noninfluential_claims(self, tmp_path, simulated):
        out = tmp_path / 'noninfluential'
        cmd_discover(simulated.path, config=RunConfig(oracle=True, influential=False), out=str(out))
        assert not (out / 'mog.dot').exists()
        assert 'ORDER A B' in (out / 'claims.txt').read_text()

    def test_discover_empty_dataset(self, simulated):
        out = os.path.dirname(simulated.path)
        variables = binary_variables('ABC')
        write_dataset(Dataset(variables, []), os.path.join(out, 'dataset_1.csv'))
        with pytest.raises(FormatError, match='no cases'):
            cmd_discover(simulated.path)

    def test_discover_oracle_needs_scenario(self, simulated):
        write_manifest(dataclasses.replace(simulated, scenario=None))
        with pytest.raises(FormatError):
            cmd_discover(simulated.path, config=RunConfig(oracle=True))

    def test_score_exhaustive(self, tmp_path):
        diagram = CausalDiagram.from_edges(binary_variables('AB'), [('A', 'B')])
        model = CausalModel(diagram, (np.array([[0.3, 0.7]]), np.array([[0.9, 0.1], [0.2, 0.8]])))
        network = str(tmp_path / 'ab.net')
        save_network(model, network)
        manifest = cmd_simulate(RunConfig(network=network, k=1, n=200, focal=('A',), out=str(tmp_path / 'ab')))
        posterior = cmd_score(manifest.path, out=str(tmp_path / 'scores'))
        assert len(posterior.diagrams) == 3
        assert posterior.probabilities.sum() == pytest.approx(1.0)
        assert len((tmp_path / 'scores' / 'scores.tsv').read_text().splitlines()) == 4

    def test_score_listed(self, tmp_path, simulated):
        diagrams = tmp_path / 'diagrams.txt'
        diagrams.write_text('A<-;B<-A;C<-B\nA<-B;B<-C;C<-\n')
        posterior = cmd_score(simulated.path, str(diagrams))
        assert len(posterior.diagrams) == 2
        assert np.isfinite(posterior.log_scores).all()
