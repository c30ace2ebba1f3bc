import json

import pytest
from click.testing import CliRunner

import main
from gateway.errors import ProviderUnreachable
from models.conversation import Message, Trajectory
from store.artifacts import read_json, read_jsonl, write_trajectories
from tests.scripted import FLAGSHIP_PLANTS, FlagshipJudge, OracleAgent, scripted_gateway


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tasks_file(tmp_path, flagship_tasks):
    path = tmp_path / 'flagship_tasks.json'
    path.write_text(json.dumps({'domain_id': 'retail', 'tasks': [task.to_dict() for task in flagship_tasks]}),
                    encoding='utf-8')
    return path


@pytest.fixture
def use_gateway(monkeypatch):
    def install(agent=None, judge=None):
        monkeypatch.setattr(main.Gateway, 'from_config',
                            classmethod(lambda cls, config, http_client=None: scripted_gateway(agent, judge)))
    return install


def invoke(runner, *args):
    return runner.invoke(main.cli, [str(arg) for arg in args], catch_exceptions=False)


def test_run_fc_writes_artifacts(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    use_gateway(OracleAgent(flagship_tasks, plants=FLAGSHIP_PLANTS), FlagshipJudge())
    out = tmp_path / 'out'
    result = invoke(runner, 'run', '--method', 'FC', '--tasks', tasks_file, '--out', out)

    assert result.exit_code == 0, result.output
    assert 'pass^1' in result.output
    assert len(read_jsonl(out / 'FC' / 'trajectories.jsonl')) == 6
    metrics = read_json(out / 'FC' / 'metrics.json')
    assert metrics['label'] == 'FC'
    assert metrics['pass_hat'] == {'1': 0.5}
    manifest = read_json(out / 'FC' / 'manifest.json')
    assert manifest['kind'] == 'run' and manifest['finished_at']
    assert (out / 'runs.db').exists()


def test_run_react_uses_the_text_protocol(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    agent = OracleAgent(flagship_tasks)
    use_gateway(agent, FlagshipJudge())
    out = tmp_path / 'out'
    result = invoke(runner, 'run', '--method', 'react', '--tasks', tasks_file, '--out', out)

    assert result.exit_code == 0, result.output
    assert read_json(out / 'ReAct' / 'metrics.json')['pass_hat'] == {'1': 1.0}
    assert all(request.tool_specs is None for request in agent.requests)


def test_run_fama_writes_both_stages(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    use_gateway(OracleAgent(flagship_tasks, plants=FLAGSHIP_PLANTS), FlagshipJudge())
    out = tmp_path / 'out'
    result = invoke(runner, 'run', '--method', 'FAMA', '--tasks', tasks_file, '--out', out)

    assert result.exit_code == 0, result.output
    assert 'retail: stage-3 agents Memory(k=2)+DCE' in result.output
    fama = out / 'FAMA-FC'
    assert len(read_jsonl(fama / 'stage1' / 'trajectories.jsonl')) == 6
    assert len(read_jsonl(fama / 'stage3' / 'trajectories.jsonl')) == 6
    assert len(read_jsonl(fama / 'subsets.jsonl')) == 3
    assert len(read_jsonl(fama / 'reports.jsonl')) == 12
    assert read_json(fama / 'aggregate.json')['subsets']['retail']['label'] == 'Memory(k=2)+DCE'
    metrics = read_json(fama / 'metrics.json')
    assert metrics['stage1']['pass_hat']['1'] == 0.5
    assert metrics['stage3']['pass_hat']['1'] == 1.0


def test_analyze_mitigate_and_report(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    plants = {task_id: FLAGSHIP_PLANTS[task_id] for task_id in ('retail-1', 'retail-3')}
    use_gateway(OracleAgent(flagship_tasks, plants=plants), FlagshipJudge())
    out = tmp_path / 'out'
    assert invoke(runner, 'run', '--method', 'FC', '--tasks', tasks_file, '--out', out).exit_code == 0

    result = invoke(runner, 'analyze', '--trajectories', out / 'FC' / 'trajectories.jsonl',
                    '--domain', main.DEFAULT_DOMAIN)
    assert result.exit_code == 0, result.output
    analysis = out / 'FC' / 'analysis'
    attributions = read_jsonl(analysis / 'attributions.jsonl')
    assert [(a['task_id'], a['main_errors']) for a in attributions] == [('retail-1', ['DPV']),
                                                                        ('retail-3', ['CMH'])]
    assert '2 attributions written' in result.output

    result = invoke(runner, 'mitigate', '--subsets', analysis / 'subsets.jsonl', '--theta', 1.0)
    assert result.exit_code == 0, result.output
    assert 'retail: Memory(k=2)+DCE' in result.output
    assert read_json(analysis / 'aggregate.json')['theta'] == 1.0

    result = invoke(runner, 'report', out)
    assert result.exit_code == 0, result.output
    report_dir = out / 'report'
    for name in ('pass_k.csv', 'accuracy.csv', 'tokens.csv', 'error_histogram.csv', 'recommendations.csv',
                 'runs.csv'):
        assert (report_dir / name).exists(), name
    pass_k = (report_dir / 'pass_k.csv').read_text(encoding='utf-8').splitlines()
    assert pass_k[1].startswith('FC,66.7,')
    histogram = (report_dir / 'error_histogram.csv').read_text(encoding='utf-8')
    assert 'DPV,Domain Policy Violation,50.0' in histogram
    kinds = [line.split(',')[1] for line in (report_dir / 'runs.csv').read_text(encoding='utf-8').splitlines()[1:]]
    assert kinds == ['run', 'analyze', 'mitigate']


def test_analyze_defaults_to_the_retail_policy(runner, tmp_path, tasks_file, flagship_tasks, retail, use_gateway):
    judge = FlagshipJudge()
    use_gateway(OracleAgent(flagship_tasks, plants={'retail-1': FLAGSHIP_PLANTS['retail-1']}), judge)
    out = tmp_path / 'out'
    invoke(runner, 'run', '--method', 'FC', '--tasks', tasks_file, '--out', out)

    result = invoke(runner, 'analyze', '--trajectories', out / 'FC' / 'trajectories.jsonl')
    assert result.exit_code == 0, result.output
    prompts = [request.messages[-1].content for request in judge.requests if request.purpose.startswith('analyze:')]
    assert len(prompts) == 4
    assert all(retail.policy_text in prompt for prompt in prompts)
    assert read_jsonl(out / 'FC' / 'analysis' / 'attributions.jsonl')[0]['main_errors'] == ['DPV']


def test_analyze_rejects_failures_from_unloaded_domains(runner, tmp_path):
    path = tmp_path / 'external' / 'trajectories.jsonl'
    write_trajectories(path, [Trajectory(task_id='a1', method='FC', trial=0, reward=0, domain='airline',
                                         messages=[Message.user('Rebook me.'), Message.assistant('Done.')])])
    result = invoke(runner, 'analyze', '--trajectories', path)
    assert result.exit_code == 2
    assert 'airline' in result.output


def test_analyze_without_failures(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    judge = FlagshipJudge()
    use_gateway(OracleAgent(flagship_tasks), judge)
    out = tmp_path / 'out'
    invoke(runner, 'run', '--method', 'FC', '--tasks', tasks_file, '--out', out)

    result = invoke(runner, 'analyze', '--trajectories', out / 'FC' / 'trajectories.jsonl')
    assert result.exit_code == 0, result.output
    assert 'no failures' in result.output
    assert read_jsonl(out / 'FC' / 'analysis' / 'attributions.jsonl') == []
    assert not [purpose for purpose in judge.purposes if purpose.startswith('analyze:')]


def test_report_refuses_mixed_assets(runner, tmp_path, tasks_file, retail_tasks, use_gateway):
    use_gateway(OracleAgent(retail_tasks), FlagshipJudge())
    out = tmp_path / 'out'
    invoke(runner, 'run', '--method', 'FC', '--tasks', tasks_file, '--out', out)
    invoke(runner, 'run', '--method', 'ReAct', '--out', out)

    result = invoke(runner, 'report', out)
    assert result.exit_code == 2
    assert 'different asset sets' in result.output


def test_malformed_tasks_exit_with_location(runner, tmp_path):
    broken = tmp_path / 'broken.json'
    broken.write_text('{"domain_id": "retail",\n "tasks": [}', encoding='utf-8')
    result = invoke(runner, 'run', '--tasks', broken, '--out', tmp_path / 'out')
    assert result.exit_code == 2
    assert f'{broken}:2:' in result.output


def test_tasks_for_unloaded_domains_are_rejected(runner, tmp_path):
    path = tmp_path / 'airline.json'
    path.write_text(json.dumps({'domain_id': 'airline', 'tasks': [{'id': 'a1', 'scenario': 'fly'}]}),
                    encoding='utf-8')
    result = invoke(runner, 'validate', '--tasks', path)
    assert result.exit_code == 2
    assert 'airline' in result.output


def test_invalid_option_values_exit_2(runner, tmp_path):
    result = invoke(runner, 'run', '--method', 'Telepathy', '--out', tmp_path / 'out')
    assert result.exit_code == 2
    result = invoke(runner, 'run', '--trials', 0, '--out', tmp_path / 'out')
    assert result.exit_code == 2


def test_unreachable_provider_exits_3(runner, tmp_path, tasks_file, use_gateway):
    def unreachable(request, rng):
        raise ProviderUnreachable('http://localhost:8000 unreachable: connection refused')

    use_gateway(unreachable, FlagshipJudge())
    result = invoke(runner, 'run', '--tasks', tasks_file, '--out', tmp_path / 'out')
    assert result.exit_code == 3
    assert 'Provider unreachable' in result.output


def test_ablate_memory(runner, tmp_path, tasks_file, flagship_tasks, use_gateway):
    use_gateway(OracleAgent(flagship_tasks), FlagshipJudge())
    out = tmp_path / 'out'
    result = invoke(runner, 'ablate-memory', '--tasks', tasks_file, '--k', 0, '--k', 2, '--out', out)

    assert result.exit_code == 0, result.output
    sweep = (out / 'ablate-memory' / 'memory_sweep.csv').read_text(encoding='utf-8').splitlines()
    assert sweep[0] == 'k,pass^1,overhead_pct,overflows'
    assert [line.split(',')[0] for line in sweep[1:]] == ['0', '2']
    assert (out / 'ablate-memory' / 'k2' / 'trajectories.jsonl').exists()


def test_memory_k_help_names_the_stage3_rule(runner):
    result = invoke(runner, 'run', '--help')
    assert result.exit_code == 0
    assert 'memory_k_sweep' in result.output


def test_validate(runner, retail):
    result = invoke(runner, 'validate')
    assert result.exit_code == 0, result.output
    assert f'retail: {len(retail.tools)} tools' in result.output
    assert '10 tasks ok' in result.output


def test_replay_app_is_built_from_fixtures():
    client = main.create_app(main.DEFAULT_FIXTURES).test_client()
    response = client.post('/v1/chat/completions', data='[]', content_type='application/json')
    assert response.status_code == 400
    assert client.get('/v1/unknown').status_code == 404
