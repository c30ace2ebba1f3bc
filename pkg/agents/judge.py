import json
import logging
import re
import threading

from gateway.wire import ChatRequest
from models.conversation import Message, Role
from prompts import default_library

logger = logging.getLogger(__name__)

_FENCE = re.compile(r'```(?:json)?\s*(.*?)```', re.DOTALL)


class JudgeClient:
    """Single-prompt calls against the judge endpoint shared by helpers and analysis agents.

    Tracks the latency of every call so episodes can report wall time.
    """

    def __init__(self, gateway, endpoint, prompts=None, temperature=0.0, seed=None, max_tokens=None):
        self.gateway = gateway
        self.endpoint = endpoint
        self.prompts = prompts or default_library()
        self.temperature = temperature
        self.seed = seed
        self.max_tokens = max_tokens
        self.elapsed_s = 0.0
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, gateway, config, prompts=None):
        return cls(gateway, config.judge_endpoint, prompts=prompts, temperature=config.temperature,
                   seed=config.seed, max_tokens=config.max_tokens)

    @property
    def order_sensitive(self):
        return self.gateway.order_sensitive(self.endpoint)

    def fork(self):
        """Same endpoint and settings, fresh counters."""
        return JudgeClient(self.gateway, self.endpoint, self.prompts, self.temperature, self.seed, self.max_tokens)

    def render(self, template, **context):
        return self.prompts.render(template, **context)

    def ask(self, template, purpose, **context):
        prompt = self.render(template, **context)
        request = ChatRequest(
            messages=[Message.user(prompt)],
            temperature=self.temperature,
            seed=self.seed,
            max_tokens=self.max_tokens,
            purpose=purpose,
        )
        response = self.gateway.chat(self.endpoint, request)
        with self._lock:
            self.elapsed_s += response.latency_s
            self.calls += 1
        return response


def format_call(call):
    return f'{call.name}({json.dumps(call.arguments, sort_keys=True, ensure_ascii=False)})'


def format_transcript(messages, include_system=False):
    """Plain-text rendering of a conversation for judge prompts."""
    lines = []
    for message in messages:
        if message.role is Role.SYSTEM and not include_system:
            continue
        if message.role is Role.TOOL:
            lines.append(f'tool[{message.tool_call_id}]: {message.content}')
            continue
        if message.content:
            lines.append(f'{message.role.value}: {message.content}')
        for call in message.tool_calls or ():
            lines.append(f'{message.role.value} -> [{call.id}] {format_call(call)}')
    return '\n'.join(lines)


def extract_json(text):
    """First JSON object or array in a model reply, fenced or bare; None when absent."""
    if not text:
        return None
    candidates = [match.strip() for match in _FENCE.findall(text)] + [text.strip()]
    for candidate in candidates:
        try:
            return json.loads(candidate)
        except json.JSONDecodeError:
            pass
        for opener, closer in (('{', '}'), ('[', ']')):
            start, end = candidate.find(opener), candidate.rfind(closer)
            if start != -1 and end > start:
                try:
                    return json.loads(candidate[start:end + 1])
                except json.JSONDecodeError:
                    continue
    return None
