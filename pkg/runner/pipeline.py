"""Batches of episodes and the three-stage failure-aware pipeline."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from agents.judge import JudgeClient
from analysis.aggregate import aggregate_recommendations
from analysis.judges import analyze_failure
from gateway.errors import ProviderUnreachable
from metrics.scoring import build_report, pass_hat_k_exact, outcomes_from_trajectories
from models.analysis import AgentKind, AgentSubset
from models.run_config import Method
from prompts import library_for
from runner.episode import run_episode

logger = logging.getLogger(__name__)

FAMA_LABEL = 'FAMA'
BASELINES = (Method.FC, Method.REACT, Method.BASE)


def domain_map(domains):
    """Accept one Domain, a list of them or an id mapping."""
    if isinstance(domains, dict):
        return dict(domains)
    if hasattr(domains, 'id'):
        return {domains.id: domains}
    return {domain.id: domain for domain in domains}


def _subset_for(subsets, domain_id):
    if subsets is None:
        return None
    if isinstance(subsets, AgentSubset):
        return subsets
    return subsets.get(domain_id, AgentSubset.empty())


def stage1_label(config):
    return config.base_method.value if config.method is Method.FAMA else config.method.value


def fama_config(config):
    """Helper-enabled settings on the same protocol as stage 1."""
    base_method = config.method if config.method in BASELINES else None
    return config.with_overrides(method=Method.FAMA, base_method=base_method)


def _positional_scripts(config, gateway):
    endpoints = (config.tool_agent_endpoint, config.user_agent_endpoint, config.judge_endpoint)
    return any(gateway.order_sensitive(endpoint) for endpoint in endpoints)


def run_batch(config, domains, tasks, gateway, subsets=None, label=None, prompts=None):
    """Every task n_trials times on a bounded worker pool.

    Results come back in (task order, trial) order regardless of completion order; positional
    scripts make the batch run sequentially.
    """
    domains = domain_map(domains)
    prompts = prompts or library_for(config)
    units = [(order, task, trial) for order, task in enumerate(tasks) for trial in range(config.n_trials)]
    missing = sorted({task.domain_id for _, task, _ in units} - set(domains))
    if missing:
        raise ValueError(f'No domain loaded for {missing}')

    def work(unit):
        order, task, trial = unit
        trajectory = run_episode(config, domains[task.domain_id], task, subset=_subset_for(subsets, task.domain_id),
                                 gateway=gateway, trial=trial, label=label, prompts=prompts)
        return order, trial, trajectory

    if config.workers > 1 and not _positional_scripts(config, gateway):
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(work, units))
    else:
        results = [work(unit) for unit in units]
    results.sort(key=lambda item: (item[0], item[1]))
    trajectories = [trajectory for _, _, trajectory in results]
    logger.info('Batch %s: %d episodes, %d succeeded', label or config.method.value, len(trajectories),
                sum(1 for trajectory in trajectories if trajectory.reward == 1))
    return trajectories


def run_stage1(tasks, config, domains, gateway, prompts=None):
    """Baseline execution; returns the trajectories and the failed ones."""
    trajectories = run_batch(config, domains, tasks, gateway, subsets=AgentSubset.empty(),
                             label=stage1_label(config), prompts=prompts)
    failures = [trajectory for trajectory in trajectories if trajectory.reward == 0]
    logger.info('Stage 1: %d failures out of %d episodes', len(failures), len(trajectories))
    return trajectories, failures


def analyze_failures(failures, config, domains, gateway, prompts=None, parallel=True):
    """Analysis, orchestration and mitigation per failure; records that error out are excluded."""
    domains = domain_map(domains)
    prompts = prompts or library_for(config)
    judge = JudgeClient.from_config(gateway, config, prompts)

    def work(trajectory):
        domain = domains.get(trajectory.domain)
        try:
            return analyze_failure(
                judge.fork(), trajectory,
                policy=domain.policy_text if domain is not None else '',
                default_attribution=config.default_attribution,
                default_memory_k=config.memory_k,
                parallel=parallel,
            )
        except ProviderUnreachable:
            raise
        except Exception as e:
            logger.warning('Analysis of %s trial %d failed (%s); excluded from aggregation',
                           trajectory.task_id, trajectory.trial_index, e)
            return None

    if config.workers > 1 and len(failures) > 1 and not judge.order_sensitive:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            analyses = list(executor.map(work, failures))
    else:
        analyses = [work(trajectory) for trajectory in failures]
    return [analysis for analysis in analyses if analysis is not None]


def aggregate_by_domain(analyses, theta=0.5):
    grouped = {}
    for analysis in analyses:
        grouped.setdefault(analysis.domain, []).append(analysis.subset)
    return {domain: aggregate_recommendations(subsets, theta) for domain, subsets in sorted(grouped.items())}


def with_memory_k(subsets, k):
    return {domain: AgentSubset(agents=subset.agents, memory_k=k) if AgentKind.MEMORY in subset else subset
            for domain, subset in subsets.items()}


def _pass_one(trajectories):
    return pass_hat_k_exact(outcomes_from_trajectories(trajectories), 1)


@dataclass
class FamaResult:
    stage1: list
    failures: list
    analyses: list
    subsets: dict
    stage3: list
    reports: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    chosen_k: Optional[int] = None

    @property
    def attributions(self):
        return [analysis.attribution for analysis in self.analyses]


def run_fama(tasks, config, domains, gateway, prompts=None):
    """Stage 1, failure analysis, per-domain aggregation, then a stage-3 re-run of every task."""
    domains = domain_map(domains)
    prompts = prompts or library_for(config)
    stage1, failures = run_stage1(tasks, config, domains, gateway, prompts)
    analyses = analyze_failures(failures, config, domains, gateway, prompts) if failures else []
    subsets = aggregate_by_domain(analyses, config.theta) if analyses else {}
    for domain_id in sorted({task.domain_id for task in tasks}):
        subsets.setdefault(domain_id, AgentSubset.empty())
        logger.info('Stage 3 subset for %s: %s', domain_id, subsets[domain_id].label)

    stage3_config = fama_config(config)
    sweep = {}
    chosen_k = None
    uses_memory = any(AgentKind.MEMORY in subset for subset in subsets.values())
    if config.memory_k_sweep and uses_memory:
        best = None
        for k in sorted(set(config.memory_k_sweep)):
            trajectories = run_batch(stage3_config, domains, tasks, gateway, subsets=with_memory_k(subsets, k),
                                     label=FAMA_LABEL, prompts=prompts)
            sweep[k] = build_report(f'{FAMA_LABEL}(k={k})', trajectories)
            score = _pass_one(trajectories)
            # strictly better only, so ties keep the smaller k
            if best is None or score > best[0]:
                best = (score, k, trajectories)
        _, chosen_k, stage3 = best
        subsets = with_memory_k(subsets, chosen_k)
        logger.info('Memory sweep kept k=%d', chosen_k)
    else:
        stage3 = run_batch(stage3_config, domains, tasks, gateway, subsets=subsets, label=FAMA_LABEL,
                           prompts=prompts)

    attributions = [analysis.attribution for analysis in analyses]
    reports = {
        'stage1': build_report(stage1_label(config), stage1, attributions=attributions),
        'stage3': build_report(FAMA_LABEL, stage3),
    }
    return FamaResult(stage1=stage1, failures=failures, analyses=analyses, subsets=subsets, stage3=stage3,
                      reports=reports, sweep=sweep, chosen_k=chosen_k)


def run_ablation(tasks, config, domains, gateway, subsets, prompts=None):
    """One batch per fixed agent combination; returns {label: (trajectories, report)}."""
    ablation_config = fama_config(config)
    results = {}
    for subset in subsets:
        label = subset.label
        trajectories = run_batch(ablation_config, domains, tasks, gateway, subsets=subset, label=label,
                                 prompts=prompts)
        results[label] = (trajectories, build_report(label, trajectories))
    return results


def ablate_memory(tasks, config, domains, gateway, k_values, base_subset=None, prompts=None):
    """Memory window sweep; k=0 keeps no user messages and matches the run without Memory."""
    k_values = list(k_values)
    if not k_values or any(k < 0 for k in k_values):
        raise ValueError('k_values must be nonempty and each k >= 0')
    base_subset = base_subset or AgentSubset.of(AgentKind.MEMORY)
    agents = base_subset.agents | {AgentKind.MEMORY.value}
    ablation_config = fama_config(config)
    results = {}
    for k in k_values:
        subset = AgentSubset(agents=agents, memory_k=k)
        trajectories = run_batch(ablation_config, domains, tasks, gateway, subsets=subset,
                                 label=f'Memory(k={k})', prompts=prompts)
        results[k] = (trajectories, build_report(f'Memory(k={k})', trajectories))
    return results
