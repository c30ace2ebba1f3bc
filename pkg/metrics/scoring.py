"""pass^k, accuracy, token and latency statistics."""

import statistics
from collections import OrderedDict
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from math import comb
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from analysis.aggregate import error_distribution
from models.conversation import Termination

DEFAULT_MAX_K = 5


class KMismatch(ValueError):
    """k exceeds the trial count, or tasks ran different trial counts."""


class ZeroTotal(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class TrialOutcomes(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str
    n: int = Field(ge=1)
    c: int = Field(ge=0)

    @model_validator(mode='after')
    def _c_le_n(self):
        if self.c > self.n:
            raise ValueError(f'c={self.c} exceeds n={self.n}')
        return self


def outcomes_from_trajectories(trajectories):
    """Group trials per task, preserving first-seen task order."""
    grouped = OrderedDict()
    for trajectory in trajectories:
        n, c = grouped.get(trajectory.task_id, (0, 0))
        grouped[trajectory.task_id] = (n + 1, c + (1 if trajectory.reward == 1 else 0))
    return [TrialOutcomes(task_id=task_id, n=n, c=c) for task_id, (n, c) in grouped.items()]


def pass_hat_k_exact(outcomes, k):
    outcomes = list(outcomes)
    if not outcomes:
        raise EmptyInput('pass^k needs at least one task')
    if k < 1:
        raise KMismatch(f'k must be >= 1, got {k}')
    trial_counts = {outcome.n for outcome in outcomes}
    if len(trial_counts) > 1:
        raise KMismatch(f'tasks ran different trial counts: {sorted(trial_counts)}')
    n = trial_counts.pop()
    if k > n:
        raise KMismatch(f'k={k} exceeds n={n}')
    total = sum(Fraction(comb(outcome.c, k), comb(n, k)) for outcome in outcomes)
    return total / len(outcomes)


def pass_hat_k(outcomes, k):
    """Mean over tasks of C(c,k)/C(n,k)."""
    return float(pass_hat_k_exact(outcomes, k))


def _ratio(value):
    if isinstance(value, bool):
        return Fraction(int(value))
    if isinstance(value, tuple) and len(value) == 2:
        predicted, expected = value
        return Fraction(int(predicted == expected))
    return Fraction(int(bool(value)))


def end_to_end_accuracy(results):
    """Share of tasks whose final attributes all match; items are booleans or (predicted, expected) pairs."""
    results = list(results)
    if not results:
        return 0.0
    return float(sum(_ratio(result) for result in results) / len(results))


def process_accuracy(n_matched, m):
    if m < 1 or not 0 <= n_matched <= m:
        raise ValueError(f'need 0 <= n <= m and m >= 1, got n={n_matched}, m={m}')
    return Fraction(n_matched, m)


def mean_process_accuracy(pairs):
    pairs = [(n, m) for n, m in pairs if m]
    if not pairs:
        return None
    return float(sum(process_accuracy(n, m) for n, m in pairs) / len(pairs))


def round_one(value):
    return float(Decimal(str(value)).quantize(Decimal('0.1'), rounding=ROUND_HALF_UP))


def token_overhead_pct(assistant_tokens, overhead_tokens):
    """100 * overhead / (assistant + overhead), one decimal."""
    if assistant_tokens < 0 or overhead_tokens < 0:
        raise ValueError('token counts must be >= 0')
    total = Decimal(str(assistant_tokens)) + Decimal(str(overhead_tokens))
    if total == 0:
        raise ZeroTotal('assistant and overhead tokens are both zero')
    pct = Decimal(100) * Decimal(str(overhead_tokens)) / total
    return float(pct.quantize(Decimal('0.1'), rounding=ROUND_HALF_UP))


class TokenStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    min: int
    max: int
    median: float
    avg: float
    assistant_avg: float
    overhead_avg: float
    overhead_pct: Optional[float]


def token_stats(trajectories):
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyInput('token_stats needs at least one trajectory')
    totals = [trajectory.assistant_tokens + trajectory.overhead_tokens for trajectory in trajectories]
    assistant_avg = statistics.fmean(trajectory.assistant_tokens for trajectory in trajectories)
    overhead_avg = statistics.fmean(trajectory.overhead_tokens for trajectory in trajectories)
    try:
        overhead_pct = token_overhead_pct(assistant_avg, overhead_avg)
    except ZeroTotal:
        overhead_pct = None
    return TokenStats(
        min=min(totals),
        max=max(totals),
        median=float(statistics.median(totals)),
        avg=statistics.fmean(totals),
        assistant_avg=assistant_avg,
        overhead_avg=overhead_avg,
        overhead_pct=overhead_pct,
    )


def overflow_count(trajectories):
    return sum(1 for trajectory in trajectories if trajectory.termination is Termination.CONTEXT_OVERFLOW)


def provider_error_count(trajectories):
    return sum(1 for trajectory in trajectories if trajectory.termination is Termination.PROVIDER_ERROR)


class LatencyStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    wall_avg_s: float
    assistant_avg_s: Optional[float]


def latency_stats(trajectories):
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyInput('latency_stats needs at least one trajectory')
    assistant = [t.assistant_time_s for t in trajectories if t.assistant_time_s is not None]
    return LatencyStats(
        wall_avg_s=round(statistics.fmean(t.wall_time for t in trajectories), 6),
        assistant_avg_s=round(statistics.fmean(assistant), 6) if assistant else None,
    )


class MetricsReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    label: str
    domain: Optional[str] = None
    n_tasks: int
    n_trials: int
    pass_hat: dict[int, float]
    e2e_accuracy: Optional[float] = None
    process_accuracy: Optional[float] = None
    tokens: TokenStats
    latency: LatencyStats
    overflow_count: int = 0
    provider_error_count: int = 0
    error_histogram: dict[str, float] = Field(default_factory=dict)

    @model_validator(mode='after')
    def _pass_hat_monotone(self):
        values = [self.pass_hat[k] for k in sorted(self.pass_hat)]
        if any(value < 0 or value > 1 for value in values):
            raise ValueError('pass^k values must lie in [0, 1]')
        if any(later > earlier for earlier, later in zip(values, values[1:])):
            raise ValueError('pass^k must be non-increasing in k')
        return self

    def to_dict(self):
        return self.model_dump(mode='json')


def build_report(label, trajectories, attributions=None, max_k=DEFAULT_MAX_K, domain=None):
    """Every metric for one labelled batch of trajectories."""
    trajectories = list(trajectories)
    if not trajectories:
        raise EmptyInput(f'no trajectories for {label}')
    outcomes = outcomes_from_trajectories(trajectories)
    n = min(outcome.n for outcome in outcomes)
    if any(outcome.n != n for outcome in outcomes):
        # ragged trial counts: score the first n trials of every task
        kept = {}
        trimmed = []
        for trajectory in trajectories:
            if kept.get(trajectory.task_id, 0) < n:
                kept[trajectory.task_id] = kept.get(trajectory.task_id, 0) + 1
                trimmed.append(trajectory)
        outcomes = outcomes_from_trajectories(trimmed)
    pass_hat = {k: pass_hat_k(outcomes, k) for k in range(1, min(n, max_k) + 1)}
    state_checked = [t.state_match for t in trajectories if t.state_match is not None]
    histogram = {}
    if attributions:
        histogram = {category.value: pct for category, pct in error_distribution(attributions).items()}
    return MetricsReport(
        label=label,
        domain=domain,
        n_tasks=len(outcomes),
        n_trials=n,
        pass_hat=pass_hat,
        e2e_accuracy=end_to_end_accuracy(state_checked) if state_checked else None,
        process_accuracy=mean_process_accuracy(
            (t.matched_steps, t.ideal_steps) for t in trajectories
            if t.matched_steps is not None and t.ideal_steps is not None
        ),
        tokens=token_stats(trajectories),
        latency=latency_stats(trajectories),
        overflow_count=overflow_count(trajectories),
        provider_error_count=provider_error_count(trajectories),
        error_histogram=histogram,
    )
