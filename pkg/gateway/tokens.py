import json


def estimate_text_tokens(text):
    """Whitespace token approximation used when provider usage is absent."""
    if not text:
        return 0
    return len(text.split())


def estimate_message_tokens(message):
    total = estimate_text_tokens(message.content)
    for call in message.tool_calls or ():
        total += estimate_text_tokens(call.name)
        total += estimate_text_tokens(json.dumps(call.arguments, sort_keys=True, ensure_ascii=False))
    return total


def estimate_tokens(messages):
    """Deterministic and monotone under list extension: every term is nonnegative."""
    return sum(estimate_message_tokens(message) for message in messages)
