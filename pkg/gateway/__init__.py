from gateway.client import Gateway
from gateway.errors import ContextOverflow, GatewayError, MalformedToolCall, ProviderError, ProviderUnreachable
from gateway.scripted import ScriptedBackend
from gateway.tokens import estimate_text_tokens, estimate_tokens
from gateway.wire import ChatRequest, ChatResponse, FinishReason
