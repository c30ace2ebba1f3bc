"""Command-line front door: run methods, analyze failures, aggregate, report."""

import functools
import logging
import sys
from pathlib import Path

import click
from pydantic import ValidationError

from analysis.aggregate import (aggregate_recommendations, error_distribution, memory_k_frequency,
                                recommendation_frequency)
from environment.domain import DomainError, load_domain, load_tasks
from gateway.client import Gateway
from gateway.errors import ProviderUnreachable
from metrics.scoring import build_report
from metrics.tables import (
    accuracy_rows,
    format_table,
    frequency_rows,
    histogram_rows,
    memory_sweep_rows,
    pass_k_rows,
    token_rows,
    write_csv,
)
from models.analysis import AgentSubset, FailureAttribution
from models.registry import REGISTRY_FILENAME, RunRegistry
from models.run_config import ConfigError, Method, load_config
from prompts import library_for
from routes.replay import create_app
from runner.pipeline import ablate_memory, analyze_failures, run_batch, run_fama
from store.artifacts import (
    ATTRIBUTIONS_FILENAME,
    MANIFEST_FILENAME,
    METRICS_FILENAME,
    SUBSETS_FILENAME,
    TRAJECTORIES_FILENAME,
    ArtifactError,
    MissingArtifacts,
    RunManifest,
    check_same_assets,
    find_artifact_dirs,
    read_jsonl,
    read_manifest,
    read_trajectories,
    write_aggregate,
    write_analyses,
    write_json,
    write_manifest,
    write_trajectories,
)

logger = logging.getLogger(__name__)

ROOT = Path(__file__).resolve().parent
DEFAULT_DOMAIN = ROOT / 'data' / 'domains' / 'retail.json'
DEFAULT_TASKS = ROOT / 'data' / 'tasks' / 'retail_tasks.json'
DEFAULT_FIXTURES = ROOT / 'fixtures' / 'wire'
DEFAULT_SWEEP = (0, 2, 4, 6)
LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'

EXIT_INVALID = 2
EXIT_UNREACHABLE = 3


def guarded(command):
    """Map configuration, asset and provider failures to exit codes."""
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except (ConfigError, DomainError, ArtifactError, ValidationError) as e:
            click.echo(f'Error: {e}', err=True)
            sys.exit(EXIT_INVALID)
        except ProviderUnreachable as e:
            click.echo(f'Provider unreachable: {e}', err=True)
            sys.exit(EXIT_UNREACHABLE)
    return wrapper


def run_options(command):
    """Flags that override RunConfig fields."""
    options = [
        click.option('--config', 'config_path', type=click.Path(dir_okay=False), help='TOML run configuration.'),
        click.option('--method', type=str, help='FC, ReAct, IRMA, FAMA, SelfReflection or Base.'),
        click.option('--base-method', type=str, help='Protocol FAMA builds on (FC, ReAct or Base).'),
        click.option('--trials', type=int, help='Trials per task.'),
        click.option('--max-turns', type=int),
        click.option('--max-context-tokens', type=int),
        click.option('--memory-k', type=int,
                     help='Memory window for IRMA and when mitigation names none; FAMA stage 3 otherwise keeps '
                          'the recommended window, or searches memory_k_sweep when the config sets it.'),
        click.option('--seed', type=int),
        click.option('--workers', type=int),
        click.option('--theta', type=float, help='Aggregation threshold.'),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def asset_options(command):
    command = click.option('--tasks', 'task_files', multiple=True, type=click.Path(dir_okay=False),
                           help='Task file; repeatable.')(command)
    command = click.option('--domain', 'domain_files', multiple=True, type=click.Path(dir_okay=False),
                           help='Domain file; repeatable.')(command)
    return command


def _config(config_path, method=None, base_method=None, trials=None, max_turns=None, max_context_tokens=None,
            memory_k=None, seed=None, workers=None, theta=None):
    return load_config(config_path, method=method, base_method=base_method, n_trials=trials, max_turns=max_turns,
                       max_context_tokens=max_context_tokens, memory_k=memory_k, seed=seed, workers=workers,
                       theta=theta)


def _load_domains(domain_files):
    paths = [Path(path) for path in domain_files or (DEFAULT_DOMAIN,)]
    domains = {}
    for path in paths:
        domain = load_domain(path)
        domains[domain.id] = domain
    return domains, paths


def _load_assets(domain_files, task_files):
    domains, domain_files = _load_domains(domain_files)
    task_files = [Path(path) for path in task_files or (DEFAULT_TASKS,)]
    tasks = []
    for path in task_files:
        tasks.extend(load_tasks(path))
    unknown = sorted({task.domain_id for task in tasks} - set(domains))
    if unknown:
        raise ConfigError(f'Tasks reference domains that were not loaded: {unknown}')
    return domains, tasks, domain_files + task_files


def _registry_root(start, fallback):
    """Nearest directory at or above start that already holds the run registry."""
    start = Path(start).resolve()
    for directory in (start, *start.parents):
        if (directory / REGISTRY_FILENAME).exists():
            return directory
    return fallback


def _carried_manifest(kind, source_dir, config, fallback_paths, prompts):
    """Keep the producing run's asset hashes so downstream artifacts report together."""
    if (Path(source_dir) / MANIFEST_FILENAME).exists():
        source = read_manifest(source_dir)
        return RunManifest(kind=kind, config=config.snapshot(), assets=source.assets,
                           prompts_digest=prompts.digest())
    return RunManifest.create(kind, config, fallback_paths, prompts)


@click.group()
@click.option('--log-level', default='INFO', envvar='FAMA_LOG_LEVEL', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False))
def cli(log_level):
    """Failure-aware multi-agent tool-use benchmark harness."""
    logging.basicConfig(level=log_level.upper(), format=LOG_FORMAT, force=True)


@cli.command()
@run_options
@asset_options
@click.option('--out', 'out_root', default='out', show_default=True, type=click.Path(file_okay=False))
@guarded
def run(config_path, method, base_method, trials, max_turns, max_context_tokens, memory_k, seed, workers, theta,
        domain_files, task_files, out_root):
    """Run one method over the tasks and write trajectories and metrics."""
    config = _config(config_path, method, base_method, trials, max_turns, max_context_tokens, memory_k, seed,
                     workers, theta)
    domains, tasks, asset_paths = _load_assets(domain_files, task_files)
    prompts = library_for(config)
    gateway = Gateway.from_config(config)
    manifest = RunManifest.create('run', config, asset_paths, prompts)
    out_root = Path(out_root)

    if config.method is Method.FAMA:
        out_dir = out_root / f'FAMA-{config.base_method.value}'
        result = run_fama(tasks, config, domains, gateway, prompts)
        write_trajectories(out_dir / 'stage1' / TRAJECTORIES_FILENAME, result.stage1)
        write_trajectories(out_dir / 'stage3' / TRAJECTORIES_FILENAME, result.stage3)
        write_analyses(out_dir, result.analyses)
        write_aggregate(out_dir, result.subsets, config.theta, result.chosen_k)
        metrics = {stage: report.to_dict() for stage, report in result.reports.items()}
        if result.sweep:
            metrics['memory_sweep'] = {str(k): report.to_dict() for k, report in result.sweep.items()}
            write_csv(out_dir / 'memory_sweep.csv', *memory_sweep_rows(result.sweep))
        write_json(out_dir / METRICS_FILENAME, metrics)
        reports = list(result.reports.values())
        trajectory_count = len(result.stage1) + len(result.stage3)
        failure_count = len(result.failures)
        for domain_id, subset in sorted(result.subsets.items()):
            click.echo(f'{domain_id}: stage-3 agents {subset.label}')
    else:
        label = config.method.value
        out_dir = out_root / label
        trajectories = run_batch(config, domains, tasks, gateway, label=label, prompts=prompts)
        write_trajectories(out_dir / TRAJECTORIES_FILENAME, trajectories)
        report = build_report(label, trajectories)
        write_json(out_dir / METRICS_FILENAME, report.to_dict())
        reports = [report]
        trajectory_count = len(trajectories)
        failure_count = sum(1 for trajectory in trajectories if trajectory.reward == 0)

    manifest = manifest.finished()
    write_manifest(out_dir, manifest)
    registry = RunRegistry(out_root)
    try:
        registry.record('run', manifest, out_dir, method=out_dir.name, domain=','.join(sorted(domains)),
                        trajectory_count=trajectory_count, failure_count=failure_count)
    finally:
        registry.dispose()
    click.echo(format_table(*pass_k_rows(reports)))
    click.echo(f'Artifacts written to {out_dir}')


@cli.command()
@click.option('--trajectories', 'trajectories_path', required=True, type=click.Path(dir_okay=False))
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--domain', 'domain_files', multiple=True, type=click.Path(dir_okay=False),
              help='Domain whose policy the analysts see; repeatable. Defaults to the retail domain.')
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Defaults to the trajectories directory.')
@guarded
def analyze(trajectories_path, config_path, domain_files, out_dir):
    """Attribute failures in a trajectory log and recommend helper agents."""
    config = load_config(config_path)
    trajectories_path = Path(trajectories_path)
    out_dir = Path(out_dir) if out_dir else trajectories_path.parent / 'analysis'
    domains, domain_paths = _load_domains(domain_files)
    prompts = library_for(config)
    trajectories = read_trajectories(trajectories_path)
    failures = [trajectory for trajectory in trajectories if trajectory.reward == 0]
    unknown = sorted({trajectory.domain for trajectory in failures if trajectory.domain} - set(domains))
    if unknown:
        raise ConfigError(f'Trajectories reference domains that were not loaded: {unknown}; pass --domain')
    if failures:
        analyses = analyze_failures(failures, config, domains, Gateway.from_config(config), prompts)
    else:
        click.echo('no failures')
        analyses = []
    write_analyses(out_dir, analyses)
    manifest = _carried_manifest('analyze', trajectories_path.parent, config,
                                 [trajectories_path, *domain_paths], prompts).finished()
    write_manifest(out_dir, manifest)
    registry = RunRegistry(_registry_root(trajectories_path.parent, out_dir.parent))
    try:
        registry.record('analyze', manifest, out_dir, trajectory_count=len(trajectories),
                        failure_count=len(failures))
    finally:
        registry.dispose()
    if analyses:
        distribution = error_distribution([analysis.attribution for analysis in analyses])
        click.echo(format_table(*histogram_rows(distribution)))
    click.echo(f'{len(analyses)} attributions written to {out_dir}')


@cli.command()
@click.option('--subsets', 'subsets_path', required=True, type=click.Path(dir_okay=False))
@click.option('--theta', type=float, default=None, help='Aggregation threshold; defaults to the config value.')
@click.option('--config', 'config_path', type=click.Path(dir_okay=False))
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Defaults to the subsets directory.')
@guarded
def mitigate(subsets_path, theta, config_path, out_dir):
    """Aggregate per-failure recommendations into one subset per domain."""
    config = load_config(config_path, theta=theta)
    subsets_path = Path(subsets_path)
    out_dir = Path(out_dir) if out_dir else subsets_path.parent
    grouped = {}
    for record in read_jsonl(subsets_path):
        grouped.setdefault(record.get('domain'), []).append(AgentSubset.from_dict(record))
    if not grouped:
        raise MissingArtifacts(f'{subsets_path} holds no recommendations')
    aggregated = {domain: aggregate_recommendations(subsets, config.theta) for domain, subsets in grouped.items()}
    write_aggregate(out_dir, aggregated, config.theta)
    manifest = _carried_manifest('mitigate', subsets_path.parent, config, [subsets_path],
                                 library_for(config)).finished()
    if out_dir != subsets_path.parent or not (out_dir / MANIFEST_FILENAME).exists():
        write_manifest(out_dir, manifest)
    registry = RunRegistry(_registry_root(subsets_path.parent, out_dir.parent))
    try:
        registry.record('mitigate', manifest, out_dir, domain=','.join(sorted(str(domain) for domain in grouped)),
                        failure_count=sum(len(subsets) for subsets in grouped.values()))
    finally:
        registry.dispose()
    for domain, subsets in sorted(grouped.items(), key=lambda item: str(item[0])):
        click.echo(f'{domain}: {aggregated[domain].label}')
        click.echo(format_table(*frequency_rows(recommendation_frequency(subsets), memory_k_frequency(subsets))))


@cli.command()
@click.argument('artifact_root', type=click.Path(file_okay=False))
@click.option('--out', 'out_dir', type=click.Path(file_okay=False), help='Defaults to ARTIFACT_ROOT/report.')
@click.option('--max-k', default=5, show_default=True, type=int)
@guarded
def report(artifact_root, out_dir, max_k):
    """Write pass^k, accuracy, token, histogram and recommendation CSVs."""
    artifact_root = Path(artifact_root)
    out_dir = Path(out_dir) if out_dir else artifact_root / 'report'
    artifact_dirs = find_artifact_dirs(artifact_root)
    check_same_assets([read_manifest(path) for path in artifact_dirs])

    reports, attributions, subsets = [], [], []
    for artifact_dir in artifact_dirs:
        for path in sorted(artifact_dir.rglob(TRAJECTORIES_FILENAME)):
            trajectories = read_trajectories(path)
            if not trajectories:
                continue
            label = trajectories[0].method_label
            if path.parent != artifact_dir:
                label = f'{artifact_dir.name}/{path.parent.name}'
            reports.append(build_report(label, trajectories, max_k=max_k))
        if (artifact_dir / ATTRIBUTIONS_FILENAME).exists():
            attributions.extend(FailureAttribution.model_validate(record)
                                for record in read_jsonl(artifact_dir / ATTRIBUTIONS_FILENAME))
        if (artifact_dir / SUBSETS_FILENAME).exists():
            subsets.extend(AgentSubset.from_dict(record) for record in read_jsonl(artifact_dir / SUBSETS_FILENAME))
    if not reports and not attributions:
        raise MissingArtifacts(f'no trajectories or attributions under {artifact_root}')

    if reports:
        write_csv(out_dir / 'pass_k.csv', *pass_k_rows(reports, max_k))
        write_csv(out_dir / 'accuracy.csv', *accuracy_rows(reports))
        write_csv(out_dir / 'tokens.csv', *token_rows(reports))
        click.echo(format_table(*pass_k_rows(reports, max_k)))
        click.echo('')
        click.echo(format_table(*token_rows(reports)))
    if attributions:
        write_csv(out_dir / 'error_histogram.csv', *histogram_rows(error_distribution(attributions)))
    if subsets:
        write_csv(out_dir / 'recommendations.csv',
                  *frequency_rows(recommendation_frequency(subsets), memory_k_frequency(subsets)))
    if (artifact_root / REGISTRY_FILENAME).exists():
        registry = RunRegistry(artifact_root)
        try:
            rows = [record.to_dict() for record in registry.runs()]
        finally:
            registry.dispose()
        headers = ['id', 'kind', 'method', 'domain', 'out_dir', 'manifest_hash', 'assets_hash',
                   'trajectory_count', 'failure_count', 'status', 'created_at']
        write_csv(out_dir / 'runs.csv', headers, [[row[header] for header in headers] for row in rows])
    click.echo(f'Report written to {out_dir}')


@cli.command('ablate-memory')
@run_options
@asset_options
@click.option('--k', 'k_values', multiple=True, type=int, help='Memory window; repeatable. Defaults to 0 2 4 6.')
@click.option('--with-agent', 'extra_agents', multiple=True, help='Agent kept next to Memory; repeatable.')
@click.option('--out', 'out_root', default='out', show_default=True, type=click.Path(file_okay=False))
@guarded
def ablate_memory_command(config_path, method, base_method, trials, max_turns, max_context_tokens, memory_k, seed,
                          workers, theta, domain_files, task_files, k_values, extra_agents, out_root):
    """Run the same tasks once per Memory window size."""
    config = _config(config_path, method, base_method, trials, max_turns, max_context_tokens, memory_k, seed,
                     workers, theta)
    k_values = list(k_values) or list(config.memory_k_sweep or DEFAULT_SWEEP)
    if any(k < 0 for k in k_values):
        raise ConfigError('--k values must be >= 0')
    domains, tasks, asset_paths = _load_assets(domain_files, task_files)
    prompts = library_for(config)
    gateway = Gateway.from_config(config)
    manifest = RunManifest.create('ablate-memory', config, asset_paths, prompts)
    base_subset = AgentSubset.of('Memory', *extra_agents)
    out_dir = Path(out_root) / 'ablate-memory'

    results = ablate_memory(tasks, config, domains, gateway, k_values, base_subset=base_subset, prompts=prompts)
    for k, (trajectories, _) in results.items():
        write_trajectories(out_dir / f'k{k}' / TRAJECTORIES_FILENAME, trajectories)
    sweep = {k: report for k, (_, report) in results.items()}
    write_json(out_dir / METRICS_FILENAME, {str(k): report.to_dict() for k, report in sweep.items()})
    write_csv(out_dir / 'memory_sweep.csv', *memory_sweep_rows(sweep))
    manifest = manifest.finished()
    write_manifest(out_dir, manifest)
    registry = RunRegistry(out_root)
    try:
        registry.record('ablate-memory', manifest, out_dir, method=base_subset.label,
                        domain=','.join(sorted(domains)),
                        trajectory_count=sum(len(trajectories) for trajectories, _ in results.values()))
    finally:
        registry.dispose()
    click.echo(format_table(*memory_sweep_rows(sweep)))


@cli.command()
@asset_options
@guarded
def validate(domain_files, task_files):
    """Check domain and task files against the shipped schemas."""
    domains, tasks, _ = _load_assets(domain_files, task_files)
    for domain in domains.values():
        click.echo(f'{domain.id}: {len(domain.tools)} tools')
    click.echo(f'{len(tasks)} tasks ok')


@cli.command('serve-fixtures')
@click.option('--fixtures', 'fixture_dir', default=str(DEFAULT_FIXTURES), show_default=True,
              type=click.Path(file_okay=False, exists=True))
@click.option('--host', default='127.0.0.1', show_default=True)
@click.option('--port', default=5000, show_default=True, type=int)
def serve_fixtures(fixture_dir, host, port):
    """Serve recorded chat completions on an OpenAI-compatible endpoint."""
    app = create_app(fixture_dir)
    app.run(host=host, port=port)


if __name__ == '__main__':
    cli()
