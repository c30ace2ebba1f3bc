class GatewayError(Exception):
    """Base class for chat gateway failures."""


class ContextOverflow(GatewayError):
    """Prompt estimate exceeds the context budget; the episode must end as context_overflow."""

    def __init__(self, estimated, budget):
        super().__init__(f'Prompt estimate {estimated} tokens exceeds budget {budget}')
        self.estimated = estimated
        self.budget = budget


class ProviderError(GatewayError):
    """Non-retryable provider response or malformed body."""

    def __init__(self, message, status_code=None):
        super().__init__(message)
        self.status_code = status_code


class ProviderUnreachable(ProviderError):
    """Transport failures persisted through the retry budget."""


class MalformedToolCall(GatewayError):
    """Tool-call arguments failed to parse after the corrective re-ask."""
