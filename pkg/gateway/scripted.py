"""Deterministic scripted chat backend for offline runs and tests."""

import json
import logging
import random
import threading
from pathlib import Path

from gateway.errors import ProviderError
from gateway.tokens import estimate_tokens
from gateway.wire import ChatResponse, fingerprint, response_to_wire
from models.conversation import Role, ToolCall

logger = logging.getLogger(__name__)


class ScriptExhausted(ProviderError):
    """Positional script has no response left for this request."""


def _entry_to_body(entry, request, model):
    if isinstance(entry, dict) and 'choices' in entry:
        return entry
    if isinstance(entry, str):
        entry = ChatResponse.text(entry)
    elif isinstance(entry, dict):
        calls = [
            ToolCall(id=call.get('id') or f'call_{i}', name=call['name'], arguments=call.get('arguments', {}))
            for i, call in enumerate(entry.get('tool_calls') or [])
        ]
        entry = ChatResponse.calls(*calls, content=entry.get('content', '')) if calls \
            else ChatResponse.text(entry.get('content', ''))
    if not isinstance(entry, ChatResponse):
        raise TypeError(f'Unsupported script entry: {entry!r}')
    body = response_to_wire(entry, model=model)
    if not entry.prompt_tokens:
        usage = body['usage']
        usage['prompt_tokens'] = estimate_tokens(request.messages)
        usage['total_tokens'] = usage['prompt_tokens'] + usage['completion_tokens']
    return body


class ScriptRule:
    """Match on request purpose and/or substrings; first matching rule wins."""

    def __init__(self, response, last_contains=None, any_contains=None, purpose=None):
        self.response = response
        self.last_contains = last_contains
        self.any_contains = any_contains
        self.purpose = purpose

    def matches(self, request):
        if self.purpose is not None and not request.purpose.startswith(self.purpose):
            return False
        if self.last_contains is not None:
            last = next((m for m in reversed(request.messages) if m.role is not Role.SYSTEM), None)
            if last is None or self.last_contains not in last.content:
                return False
        if self.any_contains is not None:
            if not any(self.any_contains in message.content for message in request.messages):
                return False
        return True


class ScriptedBackend:
    """Looks up a canned response by fingerprint, then rules, then a responder, then position.

    The same seed and the same request sequence always produce the same responses.
    """

    def __init__(self, script=(), fingerprints=None, rules=(), responder=None, seed=0,
                 latency_s=0.0, name='scripted'):
        self.name = name
        self.seed = seed
        self.latency_s = latency_s
        self.fingerprints = dict(fingerprints or {})
        self.rules = list(rules)
        self.responder = responder
        self._script = list(script)
        self._position = 0
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.requests = []

    @property
    def position(self):
        return self._position

    @property
    def positional(self):
        """Replies are handed out by arrival order."""
        return bool(self._script)

    def complete(self, request, model='scripted'):
        with self._lock:
            self.requests.append(request)
            entry = self._lookup(request)
            return _entry_to_body(entry, request, model)

    def _lookup(self, request):
        key = fingerprint(request.messages)
        if key in self.fingerprints:
            return self.fingerprints[key]
        for rule in self.rules:
            if rule.matches(request):
                return rule.response
        if self.responder is not None:
            entry = self.responder(request, self._rng)
            if entry is not None:
                return entry
        if self._position >= len(self._script):
            raise ScriptExhausted(
                f'Scripted backend {self.name!r} exhausted at position {self._position} ({request.purpose})'
            )
        entry = self._script[self._position]
        self._position += 1
        return entry

    @classmethod
    def from_file(cls, path, name=None):
        path = Path(path)
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
        rules = [
            ScriptRule(
                response=rule['response'],
                last_contains=rule.get('last_contains'),
                any_contains=rule.get('any_contains'),
                purpose=rule.get('purpose'),
            )
            for rule in document.get('rules', [])
        ]
        logger.info('Loaded scripted backend %s from %s (%d rules, %d positional)',
                    name or path.stem, path, len(rules), len(document.get('responses', [])))
        return cls(
            script=document.get('responses', []),
            fingerprints=document.get('fingerprints'),
            rules=rules,
            seed=document.get('seed', 0),
            latency_s=document.get('latency_s', 0.0),
            name=name or path.stem,
        )
