from environment.domain import (
    AssetError,
    Domain,
    DomainError,
    EnvState,
    SchemaViolation,
    ToolError,
    UnknownDomain,
    UnknownTool,
    load_domain,
    load_tasks,
    reset,
    step,
)
from environment.scoring import align_process, compute_reward
from environment.user_sim import STOP_TOKEN, Stop, UserSimulator, simulate_user
