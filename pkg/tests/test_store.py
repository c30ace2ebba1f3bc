import json
import logging

import pytest

from analysis.judges import FailureAnalysis
from models.analysis import AgentSubset, ErrorAnalysisReport, ErrorCategory, FailureAttribution
from models.conversation import Message, Trajectory
from models.run_config import RunConfig
from store.artifacts import (ArtifactError, MissingArtifacts, MixedManifests, RunManifest, check_same_assets,
                             find_artifact_dirs, read_json, read_jsonl, read_manifest, read_trajectories,
                             write_aggregate, write_analyses, write_jsonl, write_manifest, write_trajectories)


def test_trajectories_survive_a_write_and_read(tmp_path):
    trajectory = Trajectory(task_id='retail-1', method='FC', trial=1, reward=1, assistant_tokens=12,
                            messages=[Message.user('hi', token_count=1), Message.assistant('hello', token_count=1)],
                            domain='retail', matched_steps=2, ideal_steps=3)
    path = write_trajectories(tmp_path / 'run' / 'trajectories.jsonl', [trajectory])
    assert read_trajectories(path) == [trajectory]


def test_external_logs_get_estimated_token_counts(tmp_path, caplog):
    path = tmp_path / 'external.jsonl'
    write_jsonl(path, [{
        'task_id': 'x', 'method': 'FC', 'trial': 0, 'reward': 0, 'termination': 'completed', 'wall_time_s': 1.0,
        'messages': [{'role': 'user', 'content': 'cancel my order'},
                     {'role': 'assistant', 'content': 'done and dusted'}],
    }])
    with caplog.at_level(logging.WARNING, logger='store.artifacts'):
        [trajectory] = read_trajectories(path)

    assert [m.token_count for m in trajectory.messages] == [3, 3]
    assert trajectory.assistant_tokens == 3
    assert trajectory.overhead_tokens == 0
    assert 'estimated' in caplog.text


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(MissingArtifacts):
        read_jsonl(tmp_path / 'nope.jsonl')
    with pytest.raises(MissingArtifacts):
        read_json(tmp_path / 'nope.json')

    path = tmp_path / 'broken.jsonl'
    path.write_text('{"a": 1}\n\n{"b": \n', encoding='utf-8')
    with pytest.raises(ArtifactError) as excinfo:
        read_jsonl(path)
    assert f'{path}:3:' in str(excinfo.value)


def test_manifest_hash_ignores_timestamps_and_versions(tmp_path):
    asset = tmp_path / 'tasks.json'
    asset.write_text('{"tasks": []}', encoding='utf-8')
    config = RunConfig(n_trials=2)

    first = RunManifest.create('run', config, [asset])
    second = RunManifest.create('run', config, [asset]).finished()
    second = second.model_copy(update={'started_at': '1999-01-01T00:00:00+00:00', 'versions': {'python': '0'}})
    assert first.manifest_hash == second.manifest_hash
    assert RunManifest.create('run', RunConfig(n_trials=3), [asset]).manifest_hash != first.manifest_hash
    assert RunManifest.create('analyze', config, [asset]).assets_hash == first.assets_hash


def test_manifest_round_trip(tmp_path):
    asset = tmp_path / 'retail.json'
    asset.write_text('{}', encoding='utf-8')
    manifest = RunManifest.create('run', RunConfig(), [asset]).finished()
    write_manifest(tmp_path / 'out', manifest)

    document = read_json(tmp_path / 'out' / 'manifest.json')
    assert document['manifest_hash'] == manifest.manifest_hash
    assert read_manifest(tmp_path / 'out') == manifest


def test_mixed_assets_are_refused(tmp_path):
    a, b = tmp_path / 'a.json', tmp_path / 'b.json'
    a.write_text('1', encoding='utf-8')
    b.write_text('2', encoding='utf-8')
    same = [RunManifest.create('run', None, [a]), RunManifest.create('analyze', None, [a])]
    assert check_same_assets(same) == same[0].assets_hash
    with pytest.raises(MixedManifests):
        check_same_assets(same + [RunManifest.create('run', None, [b])])


def test_find_artifact_dirs(tmp_path):
    with pytest.raises(MissingArtifacts):
        find_artifact_dirs(tmp_path / 'absent')
    with pytest.raises(MissingArtifacts):
        find_artifact_dirs(tmp_path)
    for name in ('FC', 'FAMA-FC/stage1'):
        write_manifest(tmp_path / name, RunManifest(kind='run'))
    assert find_artifact_dirs(tmp_path) == [tmp_path / 'FAMA-FC' / 'stage1', tmp_path / 'FC']


def test_analysis_outputs(tmp_path):
    reports = [ErrorAnalysisReport(task_id='retail-1', category=category, detected=category is ErrorCategory.DPV,
                                   cause_ids=[2]) for category in ErrorCategory]
    analysis = FailureAnalysis(
        task_id='retail-1', trial=0, domain='retail', reports=reports,
        attribution=FailureAttribution(task_id='retail-1', domain='retail', main_errors=[ErrorCategory.DPV]),
        subset=AgentSubset.of('DCE', 'Memory', memory_k=4),
    )
    write_analyses(tmp_path, [analysis])
    write_aggregate(tmp_path, {'retail': analysis.subset}, theta=0.5, chosen_k=4)

    assert len(read_jsonl(tmp_path / 'reports.jsonl')) == 4
    assert read_jsonl(tmp_path / 'reports.jsonl')[1]['cause_ids'] == []
    assert read_jsonl(tmp_path / 'attributions.jsonl')[0]['main_errors'] == ['DPV']
    assert read_jsonl(tmp_path / 'subsets.jsonl') == [{'task_id': 'retail-1', 'trial': 0, 'domain': 'retail',
                                                       'agents': ['Memory', 'DCE'], 'memory_k': 4}]
    aggregate = json.loads((tmp_path / 'aggregate.json').read_text(encoding='utf-8'))
    assert aggregate == {
        'theta': 0.5,
        'subsets': {'retail': {'agents': ['Memory', 'DCE'], 'memory_k': 4, 'label': 'Memory(k=4)+DCE'}},
        'memory_k_sweep_choice': 4,
    }
