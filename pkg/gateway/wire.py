"""Chat-completions wire shapes: request payloads, canonical encoding, response parsing."""

import hashlib
import json
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from gateway.errors import ProviderError
from gateway.tokens import estimate_message_tokens, estimate_tokens
from models.conversation import Message, Role, ToolCall


class FinishReason(str, Enum):
    STOP = 'stop'
    TOOL_CALLS = 'tool_calls'
    LENGTH = 'length'


class ChatRequest(BaseModel):
    model_config = ConfigDict(frozen=True)

    messages: list[Message]
    tool_specs: Optional[list[dict[str, Any]]] = None
    temperature: Optional[float] = None
    top_p: Optional[float] = None
    max_tokens: Optional[int] = None
    seed: Optional[int] = None
    # prompt budget checked before sending; None disables the check
    context_budget: Optional[int] = None
    purpose: str = 'chat'

    @field_validator('messages')
    @classmethod
    def _nonempty(cls, value):
        if not value:
            raise ValueError('a chat request needs at least one message')
        return value

    def appended(self, *messages):
        return self.model_copy(update={'messages': list(self.messages) + list(messages)})


class ChatResponse(BaseModel):
    model_config = ConfigDict(frozen=True)

    message: Message
    prompt_tokens: int = 0
    completion_tokens: int = 0
    finish_reason: FinishReason = FinishReason.STOP
    latency_s: float = 0.0

    @model_validator(mode='after')
    def _finish_matches_calls(self):
        has_calls = bool(self.message.tool_calls)
        if has_calls != (self.finish_reason is FinishReason.TOOL_CALLS):
            raise ValueError('finish_reason=tool_calls iff the message carries tool calls')
        if self.message.role is not Role.ASSISTANT:
            raise ValueError('responses carry assistant messages')
        return self

    @classmethod
    def text(cls, content, completion_tokens=None):
        message = Message.assistant(content)
        tokens = estimate_message_tokens(message) if completion_tokens is None else completion_tokens
        return cls(message=message.model_copy(update={'token_count': tokens}), completion_tokens=tokens)

    @classmethod
    def calls(cls, *calls, content='', completion_tokens=None):
        tool_calls = [
            call if isinstance(call, ToolCall) else ToolCall(id=f'call_{i}', name=call[0], arguments=call[1])
            for i, call in enumerate(calls)
        ]
        message = Message.assistant(content, tool_calls=tool_calls)
        tokens = estimate_message_tokens(message) if completion_tokens is None else completion_tokens
        return cls(message=message.model_copy(update={'token_count': tokens}), completion_tokens=tokens,
                   finish_reason=FinishReason.TOOL_CALLS)


class ArgumentsParseError(ValueError):
    """A tool call whose arguments are not a JSON object."""

    def __init__(self, name, raw):
        super().__init__(f'Arguments for tool {name!r} are not a JSON object: {raw!r}')
        self.name = name
        self.raw = raw


def tool_spec_to_wire(spec):
    return {
        'type': 'function',
        'function': {
            'name': spec['name'],
            'description': spec.get('description', ''),
            'parameters': spec.get('parameters', {'type': 'object', 'properties': {}}),
        },
    }


def message_to_wire(message):
    data = {'role': message.role.value, 'content': message.content}
    if message.tool_calls:
        data['tool_calls'] = [
            {
                'id': call.id,
                'type': 'function',
                'function': {
                    'name': call.name,
                    'arguments': json.dumps(call.arguments, sort_keys=True, ensure_ascii=False),
                },
            }
            for call in message.tool_calls
        ]
    if message.tool_call_id is not None:
        data['tool_call_id'] = message.tool_call_id
    return data


def build_payload(model, request):
    payload = {'model': model, 'messages': [message_to_wire(message) for message in request.messages]}
    if request.tool_specs:
        payload['tools'] = [tool_spec_to_wire(spec) for spec in request.tool_specs]
        payload['tool_choice'] = 'auto'
    for field in ('temperature', 'top_p', 'max_tokens', 'seed'):
        value = getattr(request, field)
        if value is not None:
            payload[field] = value
    return payload


def canonical_json(document):
    """UTF-8 bytes with sorted keys and no insignificant whitespace."""
    return json.dumps(document, sort_keys=True, ensure_ascii=False, separators=(',', ':')).encode('utf-8')


def fingerprint(messages):
    """Hash of the role sequence plus contents, used to key scripted responses."""
    digest = hashlib.sha256()
    for message in messages:
        digest.update(f'{message.role.value}:{message.content}\n'.encode('utf-8'))
    return digest.hexdigest()


def parse_response(body, prompt_messages=()):
    """Turn a chat-completions body into a ChatResponse.

    Raises ArgumentsParseError when a tool call carries unparseable arguments.
    """
    try:
        choice = body['choices'][0]
        raw_message = choice['message']
    except (KeyError, IndexError, TypeError) as e:
        raise ProviderError(f'Malformed response body: {e!r}') from e

    calls = []
    for i, raw_call in enumerate(raw_message.get('tool_calls') or []):
        function = raw_call.get('function') or {}
        name = function.get('name') or ''
        raw_args = function.get('arguments')
        if isinstance(raw_args, dict):
            arguments = raw_args
        else:
            try:
                arguments = json.loads(raw_args) if raw_args else {}
            except (json.JSONDecodeError, TypeError):
                raise ArgumentsParseError(name, raw_args)
        if not isinstance(arguments, dict):
            raise ArgumentsParseError(name, raw_args)
        calls.append(ToolCall(id=raw_call.get('id') or f'call_{i}', name=name, arguments=arguments))

    message = Message.assistant(raw_message.get('content') or '', tool_calls=calls)
    usage = body.get('usage') or {}
    completion_tokens = usage.get('completion_tokens')
    if completion_tokens is None:
        completion_tokens = estimate_message_tokens(message)
    prompt_tokens = usage.get('prompt_tokens')
    if prompt_tokens is None:
        prompt_tokens = estimate_tokens(prompt_messages)

    if calls:
        finish = FinishReason.TOOL_CALLS
    elif choice.get('finish_reason') == FinishReason.LENGTH.value:
        finish = FinishReason.LENGTH
    else:
        finish = FinishReason.STOP
    return ChatResponse(
        message=message.model_copy(update={'token_count': completion_tokens}),
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        finish_reason=finish,
    )


def response_to_wire(response, model='scripted'):
    message = {'role': 'assistant', 'content': response.message.content or None}
    if response.message.tool_calls:
        message['tool_calls'] = message_to_wire(response.message)['tool_calls']
    return {
        'id': 'chatcmpl-scripted',
        'object': 'chat.completion',
        'model': model,
        'choices': [{'index': 0, 'message': message, 'finish_reason': response.finish_reason.value}],
        'usage': {
            'prompt_tokens': response.prompt_tokens,
            'completion_tokens': response.completion_tokens,
            'total_tokens': response.prompt_tokens + response.completion_tokens,
        },
    }
