import json
import math

import numpy as np
import pytest

from SigProp.errors import ConfigError, LengthMismatchError
from SigProp.params import Activation, NormPlacement
from SigProp.regimes import trainability_diagram
from SigProp.report import (RunConfig, compare_report, load_config, parse_config, serialize_config,
                            write_diagram_csv, write_diagram_json, write_fixed_point, write_phase_csv,
                            write_phase_json, write_trajectory_csv, write_trajectory_json)
from SigProp.simulation import EmpiricalTrajectory, IprResult, PhaseResult
from SigProp.theory import iterate_depth


def empirical_like(traj, offset=0.0):
    n = len(traj)
    return EmpiricalTrajectory(rho_mean=traj.rhos + offset, rho_std=np.full(n, 0.01),
                               ipr=np.r_[math.nan, np.full(n - 1, 0.002)],
                               cross_overlap=np.r_[math.nan, np.full(n - 1, 0.002)],
                               entropy=np.r_[math.nan, np.full(n - 1, 6.0)], n_tasks=4)


class TestConfig:

    def test_empty_document_gives_defaults(self):
        config = parse_config('')
        assert config == RunConfig()
        params = config.block_params()
        assert (params.alpha_sa, params.alpha_mlp, params.mlp.sigma_b2) == (1.0, 1.0, 0.0)
        assert params.mlp.activation == Activation.RELU
        assert params.norm_placement == NormPlacement.POST_NORM_BOTH
        assert config.log_base == math.e
        assert config.classifier_config().collapse_threshold == 0.99

    def test_negative_variance_names_key(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"sigma_w2": -1}')
        assert e.value.key == 'sigma_w2'
        assert 'sigma_w2' in str(e.value)

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"sigma_w": 1}')
        assert e.value.key == 'sigma_w'

    def test_bad_enum_names_key(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{"activation": "gelu"}')
        assert e.value.key == 'activation'

    def test_syntax_error_reports_line(self):
        with pytest.raises(ConfigError) as e:
            parse_config('{\n  "beta": 0.5,\n  "layers": ,\n}')
        assert e.value.line == 3

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            parse_config('[1, 2]')

    @pytest.mark.parametrize('text, key', [
        ('{"layers": 2.5}', 'layers'),
        ('{"finite_size": 1}', 'finite_size'),
        ('{"beta": "large"}', 'beta'),
        ('{"alpha_min": 2, "alpha_max": 1}', 'alpha_max'),
        ('{"collapse_threshold": 1.0}', 'collapse_threshold'),
    ])
    def test_validation(self, text, key):
        with pytest.raises(ConfigError) as e:
            parse_config(text)
        assert e.value.key == key

    def test_integral_floats_are_accepted(self):
        assert parse_config('{"layers": 12.0}').layers == 12

    @pytest.mark.parametrize('name', ['bert_depth_profile.json', 'bert_trainability_diagram.json',
                                      'tanh_fixed_point.json', 'no_residual.json', 'no_residual_tanh.json'])
    def test_examples_round_trip(self, name, example_path):
        config = load_config(example_path(name))
        assert parse_config(serialize_config(config)) == config

    def test_depth_profile_example(self, example_path):
        config = load_config(example_path('bert_depth_profile.json'))
        expected = (600, 60, 0.2, 0.0004, 1.0)
        assert (config.d, config.layers, config.sigma_w2, config.sigma_b2, config.alpha_mlp) == expected
        sim = config.sim_config()
        assert sim.n_seeds == sim.n_sequences == 10

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / 'absent.json'))

    def test_override(self):
        config = RunConfig().override(alpha_sa=2, layers=None, activation='TANH')
        assert config.alpha_sa == 2.0 and config.layers == 60
        assert config.block_params().mlp.activation == Activation.TANH
        with pytest.raises(ConfigError):
            RunConfig().override(gamma=1.0)


class TestTrajectoryTables:

    def test_theory_rows(self, tmp_path, bert_block):
        path = tmp_path / 'traj.csv'
        write_trajectory_csv(iterate_depth(0.04, bert_block, 1), str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == 'layer,rho_theory'
        assert lines[1] == '0,0.04'
        assert len(lines) == 3

    def test_combined_columns(self, tmp_path, bert_block):
        traj = iterate_depth(0.04, bert_block, 3)
        path = tmp_path / 'traj.csv'
        write_trajectory_csv(traj, str(path), empirical_like(traj), metadata={'d': 600, 'beta': 0.02})
        lines = path.read_text().splitlines()
        assert lines[:2] == ['# beta = 0.02', '# d = 600']
        assert lines[2] == 'layer,rho_theory,rho_mean,rho_std,ipr,entropy'
        assert lines[3].split(',')[4:] == ['nan', 'nan']
        assert lines[4].split(',')[4:] == ['0.002', '6']
        assert len(lines) == 3 + 4

    def test_empirical_only(self, tmp_path, bert_block):
        traj = iterate_depth(0.04, bert_block, 2)
        path = tmp_path / 'mc.csv'
        write_trajectory_csv(empirical_like(traj), str(path))
        assert path.read_text().splitlines()[0] == 'layer,rho_mean,rho_std,ipr,entropy'

    def test_byte_identical(self, tmp_path, bert_block):
        traj = iterate_depth(0.04, bert_block, 10)
        a, b = tmp_path / 'a.csv', tmp_path / 'b.csv'
        for path in (a, b):
            write_trajectory_csv(traj, str(path), empirical_like(traj), metadata={'base_seed': 3})
        assert a.read_bytes() == b.read_bytes()
        assert b'\r' not in a.read_bytes()

    def test_json_nan_is_null(self, tmp_path, bert_block):
        traj = iterate_depth(0.04, bert_block, 2)
        path = tmp_path / 'traj.json'
        write_trajectory_json(traj, str(path), empirical_like(traj), metadata={'d': 600})
        doc = json.loads(path.read_text())
        assert doc['metadata'] == {'d': 600}
        assert doc['columns'][:2] == ['layer', 'rho_theory']
        assert doc['rows'][0]['ipr'] is None
        assert doc['rows'][1]['entropy'] == 6.0

    def test_length_mismatch(self, tmp_path, bert_block):
        with pytest.raises(LengthMismatchError):
            write_trajectory_csv(iterate_depth(0.04, bert_block, 3), str(tmp_path / 'x.csv'),
                                 empirical_like(iterate_depth(0.04, bert_block, 2)))

    def test_stdout(self, capsys, bert_block):
        write_trajectory_csv(iterate_depth(0.04, bert_block, 1), None)
        assert capsys.readouterr().out.startswith('layer,rho_theory\n')


class TestDiagramTables:

    def test_long_format(self, tmp_path, bert_block, bert_classifier):
        grid = trainability_diagram(bert_block, (1.0, 2.0, 2), (0.02, 2.0, 2), bert_classifier)
        path = tmp_path / 'diagram.csv'
        write_diagram_csv(grid, str(path))
        lines = path.read_text().splitlines()
        comments = [l for l in lines if l.startswith('#')]
        body = [l for l in lines if not l.startswith('#')]
        assert body == ['alpha_sa,beta,regime', '1,0.02,rank_collapse', '1,2,entropy_collapse',
                        '2,0.02,trainable', '2,2,entropy_collapse']
        keys = {l[2:].split(' = ')[0] for l in comments}
        assert {'sigma_w2', 'sigma_b2', 'alpha_mlp', 'sigma_v2', 'activation', 'seq_len', 'norm_placement',
                'layers', 'collapse_threshold'} <= keys

    def test_critical_alpha_metadata(self, tmp_path, bert_block, bert_classifier):
        grid = trainability_diagram(bert_block, (1.0, 2.0, 2), (0.02, 2.0, 2), bert_classifier)
        path = tmp_path / 'diagram.json'
        write_diagram_json(grid, str(path), critical_alpha=[1.25, math.nan])
        doc = json.loads(path.read_text())
        assert doc['metadata']['critical_alpha[beta=0.02]'] == 1.25
        assert doc['metadata']['critical_alpha[beta=2]'] is None
        assert len(doc['rows']) == 4
        assert doc['rows'][0] == {'alpha_sa': 1.0, 'beta': 0.02, 'regime': 'rank_collapse'}


class TestPhaseTables:

    def test_phase_grid(self, tmp_path):
        shape = (2, 1)
        result = PhaseResult(beta_axis=np.array([0.0, 2.0]), rho_axis=np.array([0.0]), sa_rho=np.ones(shape),
                             sa_rho_std=np.zeros(shape), ipr=np.full(shape, 1 / 1024), entropy=np.zeros(shape),
                             cross_overlap=np.zeros(shape), d=512, seq_len=1024, n_seeds=5)
        path = tmp_path / 'phase.csv'
        write_phase_csv(result, str(path))
        lines = [l for l in path.read_text().splitlines() if not l.startswith('#')]
        assert lines[0].split(',')[-3:] == ['sa_rho_theory', 'y_q', 'y_q_finite_size']
        assert len(lines) == 3
        assert lines[2].split(',')[-2] == '0.2928932188'

    def test_phase_json(self, tmp_path):
        shape = (1, 2)
        result = PhaseResult(beta_axis=np.array([2.0]), rho_axis=np.array([0.0, 0.5]), sa_rho=np.full(shape, 0.4),
                             sa_rho_std=np.zeros(shape), ipr=np.full(shape, 0.3), entropy=np.full(shape, math.nan),
                             cross_overlap=np.zeros(shape), d=64, seq_len=256, n_seeds=2)
        path = tmp_path / 'phase.json'
        write_phase_json(result, str(path), {'base_seed': 1})
        doc = json.loads(path.read_text())
        assert doc['metadata'] == {'d': 64, 'seq_len': 256, 'n_seeds': 2, 'base_seed': 1}
        assert [row['rho'] for row in doc['rows']] == [0.0, 0.5]
        assert doc['rows'][0]['entropy'] is None
        assert doc['rows'][1]['y_q'] == pytest.approx(0.)

    def test_ipr_rows(self, tmp_path):
        result = IprResult(beta_axis=np.array([0.5, 2.5]), ipr_mean=np.array([1e-5, 0.43]),
                           ipr_std=np.array([1e-6, 0.1]), entropy_mean=np.array([10.0, 1.0]), rho=0.0,
                           d=512, seq_len=10**5, n_seeds=10)
        path = tmp_path / 'ipr.csv'
        write_phase_csv(result, str(path))
        text = path.read_text()
        assert '# rho = 0' in text
        lines = [l for l in text.splitlines() if not l.startswith('#')]
        assert lines[0] == 'beta,ipr_mean,ipr_std,entropy,y_q,y_q_finite_size'
        assert lines[2].split(',')[4] == '0.4343145751'

    def test_fixed_point(self, tmp_path):
        path = tmp_path / 'fp.csv'
        write_fixed_point(0.25, True, 1e-11, str(path))
        assert path.read_text().splitlines() == ['rho_star,converged,residual', '0.25,true,1e-11']


class TestComparison:

    def test_identical(self, bert_block):
        traj = iterate_depth(0.04, bert_block, 5)
        report = compare_report(traj, empirical_like(traj))
        assert report.max_deviation == 0.
        assert len(report.rows) == 6

    def test_constant_offset(self, bert_block):
        traj = iterate_depth(0.04, bert_block, 5)
        report = compare_report(traj, empirical_like(traj, 0.01))
        assert report.mean_deviation == pytest.approx(0.01, abs=1e-12)
        assert report.rows[2].deviation == pytest.approx(0.01, abs=1e-12)

    def test_length_mismatch(self, bert_block):
        with pytest.raises(LengthMismatchError):
            compare_report(iterate_depth(0.04, bert_block, 5), empirical_like(iterate_depth(0.04, bert_block, 4)))
