from agents.catalog import ContextComposer, compose_context, register_agent
from agents.helpers import (
    extract_domain_constraints,
    memory_window,
    plan,
    reformulate_tool_output,
    suggest_tools,
    verify,
)
from agents.judge import JudgeClient
