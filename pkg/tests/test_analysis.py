import json
import random

import pytest

from agents.judge import JudgeClient
from analysis.aggregate import (aggregate_recommendations, error_distribution, memory_k_frequency, memory_k_mode,
                                recommendation_frequency)
from analysis.causes import load_all, parse_cause_file
from analysis.judges import (UNPARSEABLE, analyze_all_categories, analyze_error, analyze_failure, fallback_subset,
                             mitigate, orchestrate)
from gateway.client import Gateway
from gateway.scripted import ScriptedBackend
from models.analysis import AgentSubset, ErrorAnalysisReport, ErrorCategory, FailureAttribution
from models.conversation import Message, Trajectory
from models.run_config import Endpoint

DPV, IRC, CMH, IFS = ErrorCategory.DPV, ErrorCategory.IRC, ErrorCategory.CMH, ErrorCategory.IFS


def judge_with(responder=None, script=()):
    backend = ScriptedBackend(script=script, responder=responder, name='judge')
    return JudgeClient(Gateway({'judge': backend}), Endpoint.scripted('judge')), backend


def failed(task_id='retail-1', trial=0):
    return Trajectory(task_id=task_id, method='FC', trial=trial, reward=0, domain='retail', messages=[
        Message.user('Cancel O1, I changed my mind.'),
        Message.assistant('Your order O1 is cancelled.'),
    ])


def reports(*detected):
    return [ErrorAnalysisReport(task_id='retail-1', category=category, detected=category in detected,
                                cause_ids=[1] if category in detected else [], rationale=f'{category.value} seen')
            for category in ErrorCategory]


def reply(document):
    return json.dumps(document)


def test_each_analyst_sees_only_its_own_causes():
    judge, backend = judge_with(responder=lambda request, rng: reply({'detected': False}))
    analyze_all_categories(judge, failed(), policy='Be nice.')
    catalogs = load_all()

    assert sorted(request.purpose for request in backend.requests) == sorted(
        f'analyze:{category.value}' for category in ErrorCategory)
    for request in backend.requests:
        prompt = request.messages[-1].content
        own = ErrorCategory(request.purpose.split(':')[1])
        assert all(cause in prompt for cause in catalogs[own].causes)
        for other, catalog in catalogs.items():
            if other is not own:
                assert not any(cause in prompt for cause in catalog.causes), (own, other)


def test_analyze_keeps_only_valid_cause_ids():
    judge, _ = judge_with(script=[reply({'detected': True, 'cause_ids': [1, 9, 0, 1, 3], 'rationale': 'r'})])
    report = analyze_error(judge, failed(), DPV)
    assert report.detected
    assert report.cause_ids == [1, 3]


def test_analyze_retries_once_then_gives_up():
    judge, backend = judge_with(script=['not json', 'still not json'])
    report = analyze_error(judge, failed(), IRC)
    assert len(backend.requests) == 2
    assert (report.detected, report.rationale) == (False, UNPARSEABLE)


def test_analyze_recovers_on_retry():
    judge, _ = judge_with(script=['oops', reply({'detected': True, 'cause_ids': [2]})])
    assert analyze_error(judge, failed(), CMH).cause_ids == [2]


def test_single_detection_needs_no_orchestrator_call():
    judge, backend = judge_with()
    attribution = orchestrate(judge, reports(IFS), failed())
    assert attribution.main_errors == [IFS]
    assert attribution.rationale == 'IFS seen'
    assert backend.requests == []


def test_orchestrator_picks_among_detected():
    judge, _ = judge_with(script=[reply({'main_errors': ['cmh'], 'rationale': 'the user was misread'})])
    attribution = orchestrate(judge, reports(DPV, CMH), failed(), domain='retail')
    assert attribution.main_errors == [CMH]
    assert attribution.domain == 'retail'
    assert not attribution.overridden


def test_undetected_choice_without_override_is_dropped():
    judge, _ = judge_with(script=[reply({'main_errors': ['IRC', 'DPV'], 'rationale': 'guess'})])
    attribution = orchestrate(judge, reports(DPV, CMH), failed())
    assert attribution.main_errors == [DPV]
    assert not attribution.overridden


def test_only_undetected_choices_fall_back_to_all_detected():
    judge, _ = judge_with(script=[reply({'main_errors': ['IFS'], 'rationale': ''})])
    attribution = orchestrate(judge, reports(DPV, CMH), failed())
    assert attribution.main_errors == [DPV, CMH]


def test_override_with_rationale_is_kept():
    judge, _ = judge_with(script=[reply({'main_errors': ['IFS'], 'override': True,
                                         'rationale': 'the agent stopped before the exchange'})])
    attribution = orchestrate(judge, reports(DPV, CMH), failed())
    assert attribution.main_errors == [IFS]
    assert attribution.overridden


def test_nothing_detected_uses_the_orchestrator_choice():
    judge, _ = judge_with(script=[reply({'main_errors': ['IRC'], 'rationale': 'wrong field read'})])
    attribution = orchestrate(judge, reports(), failed())
    assert attribution.main_errors == [IRC]
    assert attribution.overridden


def test_nothing_detected_and_unparseable_uses_the_default():
    judge, _ = judge_with(script=['?', '?'])
    attribution = orchestrate(judge, reports(), failed(), default_attribution=IFS)
    assert attribution.main_errors == [IFS]
    assert attribution.overridden


def test_orchestrate_needs_one_report_per_category():
    judge, _ = judge_with()
    with pytest.raises(ValueError):
        orchestrate(judge, reports(DPV)[:3], failed())


def attribution_of(*categories):
    return FailureAttribution(task_id='retail-1', main_errors=list(categories))


def test_mitigate_matches_catalog_names_loosely():
    judge, backend = judge_with(script=[reply({'agents': ['dce', 'Oracle', 'memory', 'DCE'], 'memory_k': 4})])
    subset = mitigate(judge, attribution_of(DPV, CMH))
    assert subset == AgentSubset.of('DCE', 'Memory', memory_k=4)
    prompt = backend.requests[0].messages[-1].content
    assert 'Domain Policy Violation' in prompt and 'Contextual Misinterpretation' in prompt


def test_mitigate_without_catalog_agents_uses_the_static_map():
    judge, _ = judge_with(script=[reply({'agents': ['Oracle']})])
    assert mitigate(judge, attribution_of(IFS)) == AgentSubset.of('Memory', 'Planner', memory_k=2)


def test_mitigate_unparseable_uses_the_static_map():
    judge, _ = judge_with(script=['no idea', 'still no idea'])
    assert mitigate(judge, attribution_of(IRC)) == AgentSubset.of('TOR')


def test_mitigate_respects_a_restricted_catalog():
    judge, _ = judge_with(script=[reply({'agents': ['DCE', 'Planner']})])
    assert mitigate(judge, attribution_of(DPV), catalog=['DCE', 'TSA']) == AgentSubset.of('DCE')


def test_fallback_subset():
    assert fallback_subset([DPV, IRC]) == AgentSubset.of('DCE', 'TOR')
    assert fallback_subset([CMH], memory_k=6).memory_k == 6


def test_analyze_failure_refuses_successes():
    judge, _ = judge_with()
    success = failed().model_copy(update={'reward': 1})
    with pytest.raises(ValueError):
        analyze_failure(judge, success)


def test_analyze_failure_end_to_end():
    def responder(request, rng):
        if request.purpose == 'analyze:DPV':
            return reply({'detected': True, 'cause_ids': [1], 'rationale': 'reason outside the policy'})
        if request.purpose.startswith('analyze:'):
            return reply({'detected': False})
        if request.purpose == 'mitigate':
            return reply({'agents': ['DCE']})
        return None

    judge, backend = judge_with(responder=responder)
    analysis = analyze_failure(judge, failed(trial=2), parallel=True)

    assert [report.category for report in analysis.reports] == list(ErrorCategory)
    assert analysis.attribution.main_errors == [DPV]
    assert analysis.subset == AgentSubset.of('DCE')
    assert analysis.subset_record() == {'task_id': 'retail-1', 'trial': 2, 'domain': 'retail',
                                        'agents': ['DCE'], 'memory_k': None}
    assert 'orchestrate' not in [request.purpose for request in backend.requests]


def test_positional_judge_script_is_consumed_in_category_order():
    script = [reply({'detected': True, 'cause_ids': [1]})] + [reply({'detected': False})] * 3
    detected = set()
    for _ in range(25):
        judge, backend = judge_with(script=script)
        found = analyze_all_categories(judge, failed(), parallel=True)
        detected.add(tuple(report.category for report in found if report.detected))
        assert [request.purpose for request in backend.requests] == [
            f'analyze:{category.value}' for category in ErrorCategory]
    assert detected == {(DPV,)}


def test_only_positional_scripts_are_order_sensitive():
    assert judge_with(script=[reply({'detected': False})])[0].order_sensitive
    assert not judge_with(responder=lambda request, rng: None)[0].order_sensitive
    assert not JudgeClient(Gateway(), Endpoint(base_url='http://localhost:8000')).order_sensitive


def test_aggregate_keeps_agents_at_or_above_theta():
    subsets = [
        AgentSubset.of('DCE', 'Memory', memory_k=2),
        AgentSubset.of('Memory', memory_k=4),
        AgentSubset.of('DCE'),
        AgentSubset.of('TOR'),
    ]
    assert aggregate_recommendations(subsets, theta=0.5) == AgentSubset.of('DCE', 'Memory', memory_k=4)
    assert aggregate_recommendations(subsets, theta=0.25) == AgentSubset.of('DCE', 'Memory', 'TOR', memory_k=4)


def test_aggregate_falls_back_to_the_most_frequent_agent():
    subsets = [AgentSubset.of('DCE', 'Memory', memory_k=2), AgentSubset.of('Memory', 'DCE', memory_k=2),
               AgentSubset.of('TOR')]
    assert aggregate_recommendations(subsets, theta=1) == AgentSubset.of('Memory', memory_k=2)


def test_aggregate_is_monotone_in_theta():
    rng = random.Random(11)
    names = ['Memory', 'DCE', 'TSA', 'TOR', 'Planner', 'Verifier']
    for _ in range(30):
        subsets = [AgentSubset.of(*rng.sample(names, rng.randint(1, 4)), memory_k=rng.choice([2, 4]))
                   for _ in range(rng.randint(1, 8))]
        chosen = [aggregate_recommendations(subsets, theta).agents for theta in (0.1, 0.25, 0.5, 0.75, 1.0)]
        assert all(later <= earlier for earlier, later in zip(chosen, chosen[1:]))
        assert all(chosen)


@pytest.mark.parametrize('theta', [0, -0.5, 1.5])
def test_aggregate_rejects_bad_theta(theta):
    with pytest.raises(ValueError):
        aggregate_recommendations([AgentSubset.of('DCE')], theta=theta)


def test_aggregate_needs_subsets():
    with pytest.raises(ValueError):
        aggregate_recommendations([])


def test_frequencies():
    subsets = [AgentSubset.of('Planner', 'Memory', memory_k=6), AgentSubset.of('Memory', memory_k=2),
               AgentSubset.of('Memory', memory_k=6), AgentSubset.of('Verifier')]
    assert list(recommendation_frequency(subsets).items()) == [('Memory', 3), ('Planner', 1), ('Verifier', 1)]
    assert memory_k_frequency(subsets) == {2: 1, 6: 2}
    assert memory_k_mode(subsets) == 6
    assert memory_k_mode([AgentSubset.of('Memory', memory_k=2), AgentSubset.of('Memory', memory_k=4)]) == 4
    assert memory_k_mode([AgentSubset.of('DCE')]) is None


def test_error_distribution():
    attributions = [attribution_of(DPV, IRC), attribution_of(DPV), attribution_of(IRC, IFS)]
    assert error_distribution(attributions) == {DPV: 40.0, IRC: 40.0, CMH: 0.0, IFS: 20.0}
    assert error_distribution([]) == {category: 0.0 for category in ErrorCategory}


def test_cause_file_parsing():
    catalog = parse_cause_file(IFS, '# Stopped early\nThe agent quits.\n\n- gave up\n- forgot a step\n')
    assert catalog.title == 'Stopped early'
    assert catalog.definition == 'The agent quits.'
    assert catalog.cause(2) == 'forgot a step'
    assert catalog.valid_ids([0, 1, '2', 3, None]) == [1, 2]
