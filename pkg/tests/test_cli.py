import json

from click.testing import CliRunner

from sqrtscore.__main__ import cli


SINGULAR_MODEL = {
        'name': 'collinear',
        'F': [[1.0]], 'G': [[1.0]], 'H': [[1.0], [1.0]], 'Q': [[1.0]],
        'R': [[1e-40, 0.0], [0.0, 1e-40]], 'Pi0': [[1.0]],
        }


def test_score():
    result = CliRunner().invoke(cli, ['score', '--model', 'example3', '--method', 'sqrt'])
    assert result.exit_code == 0, result.output
    lines = result.output.splitlines()
    assert lines[0] == 'method: sqrt'
    assert lines[1].startswith('loglik: ')
    assert lines[2].startswith('gradient: ')
    float(lines[1].split(': ')[1])


def test_score_both_methods():
    result = CliRunner().invoke(cli, ['score', '--N', '20', '--theta', '4.0'])
    assert result.exit_code == 0, result.output
    methods = [line for line in result.output.splitlines() if line.startswith('method: ')]
    assert methods == ['method: sqrt', 'method: conventional']


def test_score_numerical_failure(tmp_path):
    path = tmp_path / 'model.json'
    path.write_text(json.dumps(SINGULAR_MODEL))
    result = CliRunner().invoke(cli, ['score', '--model', str(path), '--N', '3', '--method', 'conventional'])
    assert result.exit_code == 3
    assert 'singular-innovation: step 1' in result.output


def test_argument_errors(tmp_path):
    result = CliRunner().invoke(cli, ['score', '--theta=-1'])
    assert result.exit_code == 2
    assert 'domain: ' in result.output

    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'no_such_key': 1}))
    result = CliRunner().invoke(cli, ['score', '--config', str(path)])
    assert result.exit_code == 2
    assert 'config: ' in result.output

    for args in (['score', '--format', 'xlsx'], ['score', '--theta', 'one'], ['experiment', 'table2']):
        result = CliRunner().invoke(cli, args)
        assert result.exit_code == 2
        lines = result.output.splitlines()
        assert len(lines) == 1 and lines[0].startswith('config: ')


def test_simulate(tmp_path):
    out = tmp_path / 'out'
    result = CliRunner().invoke(cli, ['simulate', '--N', '5', '--seed', '2', '--out', str(out)])
    assert result.exit_code == 0, result.output
    lines = (out / 'trajectory.csv').read_text().splitlines()
    assert lines[0] == 'k,z1,x1,x2'
    assert len(lines) == 6
    assert json.loads((out / 'config.json').read_text())['seed'] == 2

    again = tmp_path / 'again'
    CliRunner().invoke(cli, ['simulate', '--N', '5', '--seed', '2', '--out', str(again)])
    assert (again / 'trajectory.csv').read_text() == (out / 'trajectory.csv').read_text()


def test_precedence(tmp_path):
    path = tmp_path / 'config.json'
    path.write_text(json.dumps({'N': 4, 'seed': 9}))
    out = tmp_path / 'out'
    env = {'SQRTSCORE_N': '3', 'SQRTSCORE_SEED': '1', 'SQRTSCORE_GENERATOR': 'Philox'}

    result = CliRunner().invoke(cli, ['simulate', '--config', str(path), '--seed', '5', '--out', str(out)], env=env)
    assert result.exit_code == 0, result.output
    echoed = json.loads((out / 'config.json').read_text())
    assert echoed['N'] == 4          # file over environment
    assert echoed['seed'] == 5       # command line over file
    assert echoed['generator'] == 'Philox'  # environment over defaults


def test_experiment_table1(tmp_path):
    out = tmp_path / 'out'
    result = CliRunner().invoke(cli, [
        'experiment', 'table1', '--delta-list', '1e-2,1e-4', '--dps', '30',
        '--exec-type', 'local', '--no-progress', '--out', str(out),
        ])
    assert result.exit_code == 0, result.output
    assert 'table1: 2 rows' in result.output
    lines = (out / 'table1.csv').read_text().splitlines()
    assert len(lines) == 3
    assert json.loads((out / 'config.json').read_text())['delta_list'] == [1e-2, 1e-4]


def test_experiment_perf_profile(tmp_path):
    out = tmp_path / 'out'
    result = CliRunner().invoke(cli, [
        'experiment', 'perf-profile', '--delta-list', '1e-2,1e-3', '--dps', '30', '--format', 'md',
        '--exec-type', 'local', '--no-progress', '--out', str(out),
        ])
    assert result.exit_code == 0, result.output
    assert 'perf-profile: 2 problems' in result.output
    assert (out / 'profile.md').exists()
    assert (out / 'profile_sqrt.dat').exists()


def test_experiment_sweep(tmp_path):
    out = tmp_path / 'out'
    result = CliRunner().invoke(cli, [
        'experiment', 'example1-sweep', '--tau-grid', '3,5', '--N', '20',
        '--exec-type', 'local', '--no-progress', '--out', str(out),
        ])
    assert result.exit_code == 0, result.output
    assert 'example1-sweep: 2 points' in result.output
    assert len((out / 'sweep.csv').read_text().splitlines()) == 3
