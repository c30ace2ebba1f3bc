from analysis.aggregate import aggregate_recommendations, error_distribution, recommendation_frequency
from analysis.judges import FailureAnalysis, analyze_error, analyze_failure, mitigate, orchestrate
