"""Failure analysis: per-category analysts, the orchestrator and the mitigation agent."""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from agents.catalog import catalog_names, describe_catalog
from agents.judge import extract_json, format_transcript
from analysis.causes import load_cause_catalog
from models.analysis import (
    AgentKind,
    AgentSubset,
    ErrorAnalysisReport,
    ErrorCategory,
    FailureAttribution,
)

logger = logging.getLogger(__name__)

UNPARSEABLE = 'unparseable'

MITIGATION_FALLBACK = {
    ErrorCategory.DPV: (AgentKind.DCE,),
    ErrorCategory.IRC: (AgentKind.TOR,),
    ErrorCategory.CMH: (AgentKind.MEMORY,),
    ErrorCategory.IFS: (AgentKind.MEMORY, AgentKind.PLANNER),
}


class AnalysisOutput(BaseModel):
    detected: bool
    cause_ids: list[int] = Field(default_factory=list)
    rationale: str = ''


class AttributionOutput(BaseModel):
    main_errors: list[str]
    override: bool = False
    rationale: str = ''


class MitigationOutput(BaseModel):
    agents: list[str]
    memory_k: Optional[int] = Field(default=None, ge=0)
    rationale: str = ''


class FailureAnalysis(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str
    trial: int
    domain: Optional[str] = None
    reports: list[ErrorAnalysisReport]
    attribution: FailureAttribution
    subset: AgentSubset

    def subset_record(self):
        return {'task_id': self.task_id, 'trial': self.trial, 'domain': self.domain, **self.subset.to_dict()}


def _ask_structured(judge, template, purpose, schema, **context):
    """One call plus one retry; None when both replies fail to parse."""
    for attempt in (1, 2):
        response = judge.ask(template, purpose=purpose, **context)
        data = extract_json(response.message.content)
        if isinstance(data, dict):
            try:
                return schema.model_validate(data)
            except ValidationError as e:
                logger.debug('Judge output for %s failed validation: %s', purpose, e)
        logger.warning('Unparseable judge output for %s (attempt %d)', purpose, attempt)
    return None


def analyze_error(judge, trajectory, category, policy=''):
    """One analyst judging one category; it sees only that category's causes."""
    category = ErrorCategory(category)
    catalog = load_cause_catalog(category, judge.prompts)
    output = _ask_structured(
        judge, 'analysis/analyze.j2', f'analyze:{category.value}', AnalysisOutput,
        catalog=catalog, policy=policy, task_id=trajectory.task_id,
        transcript=format_transcript(trajectory.messages),
    )
    if output is None:
        return ErrorAnalysisReport(task_id=trajectory.task_id, trial=trajectory.trial_index, category=category,
                                   detected=False, rationale=UNPARSEABLE)
    return ErrorAnalysisReport(
        task_id=trajectory.task_id,
        trial=trajectory.trial_index,
        category=category,
        detected=output.detected,
        cause_ids=catalog.valid_ids(output.cause_ids) if output.detected else [],
        rationale=output.rationale,
    )


def _categories(codes):
    found = []
    for code in codes:
        try:
            category = ErrorCategory(str(code).strip().upper())
        except ValueError:
            logger.debug('Ignoring unknown category %r', code)
            continue
        if category not in found:
            found.append(category)
    return found


def orchestrate(judge, reports, trajectory, default_attribution=ErrorCategory.CMH, domain=None):
    """Attribute the main failure error(s) from all analyst reports."""
    if sorted(report.category.value for report in reports) != sorted(category.value for category in ErrorCategory):
        raise ValueError('orchestrate needs exactly one report per error category')
    detected = [report.category for report in reports if report.detected]
    base = {'task_id': trajectory.task_id, 'trial': trajectory.trial_index, 'domain': domain}

    if len(detected) == 1:
        only = next(report for report in reports if report.detected)
        return FailureAttribution(**base, main_errors=detected, rationale=only.rationale)

    output = _ask_structured(
        judge, 'analysis/orchestrate.j2', 'orchestrate', AttributionOutput,
        reports=[report.to_dict() for report in reports],
        titles={category.value: category.title for category in ErrorCategory},
        task_id=trajectory.task_id,
        transcript=format_transcript(trajectory.messages),
    )
    if output is None:
        fallback = detected or [ErrorCategory(default_attribution)]
        return FailureAttribution(**base, main_errors=fallback, rationale=f'{UNPARSEABLE}; fallback attribution',
                                  overridden=not detected)

    chosen = _categories(output.main_errors)
    if not detected:
        if not chosen:
            chosen = [ErrorCategory(default_attribution)]
        return FailureAttribution(**base, main_errors=chosen, rationale=output.rationale, overridden=True)

    outside = [category for category in chosen if category not in detected]
    if outside and not (output.override and output.rationale.strip()):
        logger.warning('Orchestrator chose undetected %s for %s without override; dropped',
                       [category.value for category in outside], trajectory.task_id)
        chosen = [category for category in chosen if category in detected]
    if not chosen:
        return FailureAttribution(**base, main_errors=detected, rationale=output.rationale or 'all detected')
    overridden = any(category not in detected for category in chosen)
    return FailureAttribution(**base, main_errors=chosen, rationale=output.rationale, overridden=overridden)


def fallback_subset(main_errors, memory_k=2):
    names = []
    for category in main_errors:
        names.extend(kind.value for kind in MITIGATION_FALLBACK[ErrorCategory(category)])
    return AgentSubset.of(*names, memory_k=memory_k if AgentKind.MEMORY.value in names else None)


def mitigate(judge, attribution, catalog=None, default_memory_k=2):
    """Map the attributed errors to a helper-agent subset."""
    names = list(catalog) if catalog is not None else catalog_names()
    categories = []
    for category in attribution.main_errors:
        cause_catalog = load_cause_catalog(category, judge.prompts)
        categories.append({'code': category.value, 'title': cause_catalog.title,
                           'definition': cause_catalog.definition})
    output = _ask_structured(
        judge, 'analysis/mitigate.j2', 'mitigate', MitigationOutput,
        categories=categories, agents=describe_catalog(names),
    )
    if output is None:
        logger.warning('Mitigation output unparseable for %s; using the static map', attribution.task_id)
        return fallback_subset(attribution.main_errors, default_memory_k)

    chosen = []
    for name in output.agents:
        match = next((known for known in names if known.lower() == str(name).strip().lower()), None)
        if match is None:
            logger.info('Mitigation proposed %r, not in catalog; dropped', name)
        elif match not in chosen:
            chosen.append(match)
    if not chosen:
        logger.warning('Mitigation chose no catalog agent for %s; using the static map', attribution.task_id)
        return fallback_subset(attribution.main_errors, default_memory_k)
    memory_k = output.memory_k if output.memory_k is not None else default_memory_k
    return AgentSubset.of(*chosen, memory_k=memory_k if AgentKind.MEMORY.value in chosen else None)


def analyze_all_categories(judge, trajectory, policy='', parallel=False):
    """One report per category, in category order.

    Positional judge scripts are consumed in that same order, so they run one after another.
    """
    categories = list(ErrorCategory)
    if not parallel or judge.order_sensitive:
        return [analyze_error(judge, trajectory, category, policy) for category in categories]
    with ThreadPoolExecutor(max_workers=len(categories)) as executor:
        futures = [executor.submit(analyze_error, judge, trajectory, category, policy) for category in categories]
        return [future.result() for future in futures]


def analyze_failure(judge, trajectory, policy='', default_attribution=ErrorCategory.CMH, default_memory_k=2,
                    catalog=None, parallel=False):
    """Analysis, orchestration and mitigation for one failed trajectory."""
    if trajectory.reward != 0:
        raise ValueError(f'Trajectory {trajectory.task_id}/{trajectory.trial_index} did not fail')
    reports = analyze_all_categories(judge, trajectory, policy, parallel=parallel)
    attribution = orchestrate(judge, reports, trajectory, default_attribution, domain=trajectory.domain)
    subset = mitigate(judge, attribution, catalog, default_memory_k)
    return FailureAnalysis(task_id=trajectory.task_id, trial=trajectory.trial_index, domain=trajectory.domain,
                           reports=reports, attribution=attribution, subset=subset)
