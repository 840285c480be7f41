import json

import pytest

from SigProp.cli import EXIT_ASSERTION, EXIT_USAGE, build_parser, main


def table(text):
    """Rows of a CSV output without its metadata comments"""
    lines = [l for l in text.splitlines() if not l.startswith('#')]
    header = lines[0].split(',')
    return [dict(zip(header, l.split(','))) for l in lines[1:]]


class TestTheory:

    def test_condensed_curve(self, capsys):
        assert main(['theory', 'curve', '--beta', '2', '--rho', '0']) == 0
        (row,) = table(capsys.readouterr().out)
        assert row['y_q'] == '0.2928932188'
        assert row['sa_rho'] == '0'

    def test_uniform_curve(self, capsys):
        assert main(['theory', 'curve', '--beta', '1', '--rho', '0']) == 0
        (row,) = table(capsys.readouterr().out)
        assert (row['sa_rho'], row['y_q']) == ('1', '0')

    def test_curve_range_with_finite_size(self, capsys):
        assert main(['theory', 'curve', '--beta', '1', '--rho-range', '0:0.5:3', '--seq-len', '1024']) == 0
        rows = table(capsys.readouterr().out)
        assert [r['rho'] for r in rows] == ['0', '0.25', '0.5']
        assert rows[0]['y_q_finite_size'] == '0.03125'
        assert rows[0]['y_p_finite_size'] == '0.0009765625'

    def test_missing_beta(self, capsys):
        with pytest.raises(SystemExit) as e:
            main(['theory', 'curve', '--rho', '0'])
        assert e.value.code == EXIT_USAGE
        assert 'usage' in capsys.readouterr().err

    def test_conflicting_flags(self):
        with pytest.raises(SystemExit) as e:
            main(['theory', 'curve', '--beta', '1', '--rho', '0', '--rho-range', '0:0.5:2'])
        assert e.value.code == EXIT_USAGE

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as e:
            main(['theory', 'curve', '--beta', '1', '--rho', '0', '--gamma', '2'])
        assert e.value.code == EXIT_USAGE

    @pytest.mark.parametrize('flags', [['--rho', '1'], ['--rho', '2'], ['--rho', '-1.5'], ['--rho-range', '0:1:3']])
    def test_similarity_out_of_range(self, flags, capsys):
        with pytest.raises(SystemExit) as e:
            main(['theory', 'curve', '--beta', '1'] + flags)
        assert e.value.code == EXIT_USAGE
        assert 'cosine similarit' in capsys.readouterr().err

    def test_depth_single_layer(self, capsys):
        assert main(['theory', 'depth', '--layers', '1']) == 0
        assert len(table(capsys.readouterr().out)) == 2

    def test_depth_config_is_monotone(self, capsys, example_path):
        assert main(['theory', 'depth', '--config', example_path('bert_depth_profile.json')]) == 0
        out = capsys.readouterr().out
        assert '# sigma_w2 = 0.2' in out
        rhos = [float(r['rho_theory']) for r in table(out)]
        assert len(rhos) == 61
        assert all(b >= a for a, b in zip(rhos, rhos[1:]))

    def test_flags_override_config(self, capsys, example_path):
        assert main(['theory', 'depth', '--config', example_path('bert_depth_profile.json'), '--layers', '3',
                     '--alpha-sa', '2']) == 0
        out = capsys.readouterr().out
        assert '# alpha_sa = 2' in out and '# layers = 3' in out
        assert len(table(out)) == 4

    def test_fixed_point(self, capsys, example_path):
        assert main(['theory', 'fixed-point', '--config', example_path('tanh_fixed_point.json')]) == 0
        (row,) = table(capsys.readouterr().out)
        assert row['converged'] == 'true'
        assert 0.05 < float(row['rho_star']) < 0.95

    def test_no_residual(self, capsys):
        assert main(['theory', 'no-residual', '--beta-grid', '0.5', '2.5', '--sigma-w2-grid', '1',
                     '--sigma-b2', '0.01']) == 0
        rows = table(capsys.readouterr().out)
        assert [r['rho_out'] for r in rows][0] == '1'
        assert float(rows[1]['rho_out']) < 0.99

    def test_no_residual_tanh_depth(self, capsys, example_path):
        assert main(['theory', 'depth', '--config', example_path('no_residual_tanh.json')]) == 0
        rhos = [float(r['rho_theory']) for r in table(capsys.readouterr().out)]
        assert len(rhos) == 6
        assert max(rhos) < 0.99

    def test_missing_config_file(self, tmp_path):
        assert main(['theory', 'depth', '--config', str(tmp_path / 'absent.json')]) == EXIT_USAGE

    def test_invalid_config_value(self):
        assert main(['theory', 'depth', '--sigma-w2', '-1']) == EXIT_USAGE

    def test_json_output(self, tmp_path):
        path = tmp_path / 'depth.json'
        assert main(['theory', 'depth', '--layers', '2', '--format', 'json', '--output', str(path)]) == 0
        doc = json.loads(path.read_text())
        assert len(doc['rows']) == 3
        assert doc['metadata']['layers'] == 2


class TestEffectiveBeta:

    def test_decimal_log(self, capsys):
        assert main(['effective-beta', '--d', '768', '--heads', '12', '--seq-len', '512', '--log-base', '10']) == 0
        assert float(capsys.readouterr().out) == pytest.approx(0.016, abs=5e-4)

    def test_natural_log(self, capsys):
        assert main(['effective-beta', '--d', '768', '--heads', '12', '--seq-len', '512']) == 0
        assert float(capsys.readouterr().out) == pytest.approx(0.01025, abs=1e-5)

    def test_log_base_from_config(self, capsys, tmp_path):
        path = tmp_path / 'bert.json'
        path.write_text('{"log_base": 10, "seq_len": 512}')
        assert main(['effective-beta', '--d', '768', '--heads', '12', '--config', str(path)]) == 0
        assert float(capsys.readouterr().out) == pytest.approx(0.016, abs=5e-4)
        assert main(['effective-beta', '--d', '768', '--heads', '12', '--config', str(path), '--log-base', 'e']) == 0
        assert float(capsys.readouterr().out) == pytest.approx(0.01025, abs=1e-5)

    def test_bad_log_base_in_config(self, tmp_path):
        path = tmp_path / 'bad.json'
        path.write_text('{"log_base": 1}')
        assert main(['effective-beta', '--d', '768', '--heads', '12', '--config', str(path)]) == EXIT_USAGE

    @pytest.mark.parametrize('heads', ['0', '5'])
    def test_bad_heads(self, heads):
        with pytest.raises(SystemExit) as e:
            main(['effective-beta', '--d', '768', '--heads', heads, '--seq-len', '512'])
        assert e.value.code == EXIT_USAGE


class TestDiagram:

    def test_smoke_grid(self, capsys):
        assert main(['diagram', '--alpha-range', '1:2:2', '--beta-range', '0.02:2:2', '--layers', '12',
                     '--threads', '1']) == 0
        rows = table(capsys.readouterr().out)
        assert len(rows) == 4
        assert [r['regime'] for r in rows if r['beta'] == '2'] == ['entropy_collapse'] * 2

    def test_critical_alpha(self, tmp_path, example_path):
        path = tmp_path / 'diagram.json'
        assert main(['diagram', '--config', example_path('bert_trainability_diagram.json'), '--alpha-range',
                     '1:2:2', '--beta-range', '0.02:2:2', '--critical-alpha', '--tol', '1e-4', '--threads', '1',
                     '--format', 'json', '--output', str(path)]) == 0
        meta = json.loads(path.read_text())['metadata']
        assert 1.0 < meta['critical_alpha[beta=0.02]'] < 1.5
        assert meta['critical_alpha[beta=2]'] is None


class TestSimulation:

    SMALL = ['--d', '32', '--seq-len', '16', '--layers', '2', '--seeds', '2', '--sequences', '1', '--beta', '0.5',
             '--rho0', '0.1']

    def test_depth_reproducible(self, tmp_path):
        paths = [tmp_path / name for name in ('a.csv', 'b.csv', 'c.csv')]
        for path, seed in zip(paths, ('3', '3', '4')):
            assert main(['sim', 'depth', '--seed', seed, '--output', str(path)] + self.SMALL) == 0
        a, b, c = (p.read_bytes() for p in paths)
        assert a == b
        assert a != c
        header = [l for l in a.decode().splitlines() if not l.startswith('#')][0]
        assert header == 'layer,rho_theory,rho_mean,rho_std,ipr,entropy'

    def test_depth_assertion(self, tmp_path):
        code = main(['sim', 'depth', '--seed', '3', '--assert-max-dev', '0', '--output', str(tmp_path / 'x.csv')]
                    + self.SMALL)
        assert code == EXIT_ASSERTION

    def test_depth_with_positions(self, capsys):
        assert main(['sim', 'depth', '--seed', '3', '--threads', '1', '--pos-std', '0.5'] + self.SMALL) == 0
        out = capsys.readouterr().out
        assert '# pos_std = 0.5' in out
        # the theory column starts from rho0 / (1 + pos_std^2)
        assert table(out)[0]['rho_theory'] == '0.08'

    def test_parallel_depth(self, tmp_path):
        paths = [tmp_path / 'serial.csv', tmp_path / 'parallel.csv']
        for path, threads in zip(paths, ('1', '2')):
            assert main(['sim', 'depth', '--seed', '3', '--threads', threads, '--output', str(path)] + self.SMALL) == 0
        assert table(paths[0].read_text()) == table(paths[1].read_text())

    def test_sa_phase_uniform_column(self, capsys):
        assert main(['sim', 'sa-phase', '--d', '16', '--seq-len', '32', '--beta-grid', '0', '--rho-grid', '0.3',
                     '--seeds', '1']) == 0
        (row,) = table(capsys.readouterr().out)
        assert float(row['ipr']) == pytest.approx(1 / 32, abs=1e-12)

    def test_ipr(self, capsys):
        assert main(['sim', 'ipr', '--d', '16', '--seq-len', '2000', '--beta-grid', '0', '--seeds', '2',
                     '--chunk', '500']) == 0
        (row,) = table(capsys.readouterr().out)
        assert float(row['ipr_mean']) == pytest.approx(1 / 2000, abs=1e-12)


def test_help_at_every_level(capsys):
    parser = build_parser()
    for argv in (['--help'], ['theory', '--help'], ['sim', 'depth', '--help']):
        with pytest.raises(SystemExit) as e:
            parser.parse_args(argv)
        assert e.value.code == 0
    assert 'usage' in capsys.readouterr().out
