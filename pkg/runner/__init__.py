from runner.episode import EpisodeLoop, parse_react, resolve_method, run_episode
from runner.pipeline import (
    FamaResult,
    ablate_memory,
    aggregate_by_domain,
    analyze_failures,
    run_ablation,
    run_batch,
    run_fama,
    run_stage1,
)
