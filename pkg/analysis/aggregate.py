from collections import Counter
from fractions import Fraction

from models.analysis import CATALOG_ORDER, AgentKind, AgentSubset, ErrorCategory

_RANK = {kind.value: position for position, kind in enumerate(CATALOG_ORDER)}


def _catalog_rank(name):
    return (_RANK.get(name, len(_RANK)), name)


def _threshold(theta):
    theta = Fraction(str(theta))
    if not 0 < theta <= 1:
        raise ValueError(f'theta must be in (0, 1], got {theta}')
    return theta


def memory_k_mode(subsets):
    """Most recommended Memory window; ties go to the larger k."""
    counts = Counter(subset.memory_k for subset in subsets
                     if AgentKind.MEMORY in subset and subset.memory_k is not None)
    if not counts:
        return None
    return max(counts, key=lambda k: (counts[k], k))


def aggregate_recommendations(per_task_subsets, theta=0.5):
    """Keep every agent recommended for at least theta of the failures."""
    subsets = list(per_task_subsets)
    if not subsets:
        raise ValueError('aggregate_recommendations needs at least one subset')
    needed = _threshold(theta) * len(subsets)
    counts = recommendation_frequency(subsets)
    chosen = [name for name, count in counts.items() if count >= needed]
    if not chosen and counts:
        top = max(counts.values())
        chosen = [min((name for name, count in counts.items() if count == top), key=_catalog_rank)]
    memory_k = memory_k_mode(subsets) if AgentKind.MEMORY.value in chosen else None
    return AgentSubset.of(*chosen, memory_k=memory_k)


def recommendation_frequency(subsets):
    """Per-agent recommendation counts in catalog order."""
    counts = Counter(name for subset in subsets for name in subset.agents)
    return {name: counts[name] for name in sorted(counts, key=_catalog_rank)}


def memory_k_frequency(subsets):
    counts = Counter(subset.memory_k for subset in subsets
                     if AgentKind.MEMORY in subset and subset.memory_k is not None)
    return dict(sorted(counts.items()))


def error_distribution(attributions):
    """Percentage of attributed incidences per category; all zeros for no input."""
    counts = Counter(category for attribution in attributions for category in attribution.main_errors)
    total = sum(counts.values())
    if not total:
        return {category: 0.0 for category in ErrorCategory}
    return {category: float(Fraction(100 * counts[category], total)) for category in ErrorCategory}
