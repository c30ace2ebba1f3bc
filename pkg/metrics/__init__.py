from metrics.scoring import (
    EmptyInput,
    KMismatch,
    MetricsReport,
    TrialOutcomes,
    ZeroTotal,
    build_report,
    end_to_end_accuracy,
    overflow_count,
    pass_hat_k,
    process_accuracy,
    token_overhead_pct,
    token_stats,
)
