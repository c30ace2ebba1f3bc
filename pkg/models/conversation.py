import json
from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field


class Role(str, Enum):
    SYSTEM = 'system'
    USER = 'user'
    ASSISTANT = 'assistant'
    TOOL = 'tool'


class Termination(str, Enum):
    COMPLETED = 'completed'
    MAX_TURNS = 'max_turns'
    CONTEXT_OVERFLOW = 'context_overflow'
    PROVIDER_ERROR = 'provider_error'


class ToolCall(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    name: str
    arguments: dict[str, Any] = Field(default_factory=dict)

    def to_dict(self):
        return {'id': self.id, 'name': self.name, 'arguments': self.arguments}


class Message(BaseModel):
    model_config = ConfigDict(frozen=True)

    role: Role
    content: str = ''
    tool_calls: Optional[list[ToolCall]] = None
    tool_call_id: Optional[str] = None
    token_count: int = Field(default=0, ge=0)

    @classmethod
    def system(cls, content, token_count=0):
        return cls(role=Role.SYSTEM, content=content, token_count=token_count)

    @classmethod
    def user(cls, content, token_count=0):
        return cls(role=Role.USER, content=content, token_count=token_count)

    @classmethod
    def assistant(cls, content='', tool_calls=None, token_count=0):
        return cls(role=Role.ASSISTANT, content=content, tool_calls=tool_calls or None, token_count=token_count)

    @classmethod
    def tool(cls, tool_call_id, content, token_count=0):
        return cls(role=Role.TOOL, content=content, tool_call_id=tool_call_id, token_count=token_count)

    def to_dict(self):
        data = {'role': self.role.value, 'content': self.content, 'token_count': self.token_count}
        if self.tool_calls:
            data['tool_calls'] = [call.to_dict() for call in self.tool_calls]
        if self.tool_call_id is not None:
            data['tool_call_id'] = self.tool_call_id
        return data


class Trajectory(BaseModel):
    """One episode record; serialized as a single JSONL line."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    task_id: str
    method_label: str = Field(alias='method')
    trial_index: int = Field(alias='trial', ge=0)
    messages: list[Message] = Field(default_factory=list)
    reward: int = 0
    termination: Termination = Termination.COMPLETED
    assistant_tokens: int = 0
    overhead_tokens: int = 0
    wall_time: float = Field(default=0.0, alias='wall_time_s')
    # optional extras; external logs may omit them
    domain: Optional[str] = None
    assistant_time_s: Optional[float] = None
    peak_prompt_tokens: Optional[int] = None
    matched_steps: Optional[int] = None
    ideal_steps: Optional[int] = None
    state_match: Optional[bool] = None

    def to_dict(self):
        data = {
            'task_id': self.task_id,
            'method': self.method_label,
            'trial': self.trial_index,
            'messages': [message.to_dict() for message in self.messages],
            'reward': self.reward,
            'termination': self.termination.value,
            'assistant_tokens': self.assistant_tokens,
            'overhead_tokens': self.overhead_tokens,
            'wall_time_s': self.wall_time,
        }
        extras = {
            'domain': self.domain,
            'assistant_time_s': self.assistant_time_s,
            'peak_prompt_tokens': self.peak_prompt_tokens,
            'matched_steps': self.matched_steps,
            'ideal_steps': self.ideal_steps,
            'state_match': self.state_match,
        }
        data.update({key: value for key, value in extras.items() if value is not None})
        return data

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)

    @classmethod
    def from_dict(cls, data):
        return cls.model_validate(data)

    @property
    def total_tokens(self):
        return self.assistant_tokens + self.overhead_tokens

    def executed_calls(self):
        """Tool calls issued by the assistant, in order."""
        calls = []
        for message in self.messages:
            if message.role is Role.ASSISTANT and message.tool_calls:
                calls.extend(message.tool_calls)
        return calls


class IdealAction(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    arguments: dict[str, Any] = Field(default_factory=dict)


class Task(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: str
    domain_id: str
    scenario: str
    ideal_actions: list[IdealAction] = Field(default_factory=list)
    expected_outputs: list[str] = Field(default_factory=list)
    expected_state: Optional[str] = None
    user_script: Optional[list[str]] = None
    persona: Optional[str] = None

    @property
    def ideal_step_count(self):
        return len(self.ideal_actions)

    def to_dict(self):
        return self.model_dump(exclude_none=True)


class Violation(BaseModel):
    model_config = ConfigDict(frozen=True)

    index: Optional[int]
    code: str
    detail: str


def canonical_value(value):
    if isinstance(value, str):
        return value.strip().casefold()
    if isinstance(value, dict):
        return tuple(sorted((str(key), canonical_value(item)) for key, item in value.items()))
    if isinstance(value, (list, tuple)):
        return tuple(canonical_value(item) for item in value)
    return value


def canonical_args(arguments):
    """Keys sorted, strings trimmed and case-folded, numbers compared exactly."""
    return canonical_value(dict(arguments or {}))


def validate_trajectory(trajectory):
    """Return one Violation per broken invariant; an empty list means well-formed."""
    violations = []
    pending = set()
    seen_ids = set()
    awaiting_results = False

    for index, message in enumerate(trajectory.messages):
        if message.tool_calls and message.role is not Role.ASSISTANT:
            violations.append(Violation(index=index, code='tool_calls_role',
                                        detail=f'{message.role.value} message carries tool calls'))
        if message.role is Role.TOOL:
            if message.tool_call_id is None:
                violations.append(Violation(index=index, code='missing_tool_call_id',
                                            detail='tool message without tool_call_id'))
            elif not awaiting_results or message.tool_call_id not in pending:
                violations.append(Violation(index=index, code='no_pending_call',
                                            detail=f'tool result {message.tool_call_id!r} resolves no pending call'))
            else:
                pending.discard(message.tool_call_id)
            continue

        if message.tool_call_id is not None:
            violations.append(Violation(index=index, code='unexpected_tool_call_id',
                                        detail=f'{message.role.value} message carries tool_call_id'))
        if pending:
            violations.append(Violation(index=index, code='unresolved_tool_call',
                                        detail=f'calls {sorted(pending)} unresolved before this message'))
        pending = set()
        awaiting_results = False

        if message.role is Role.ASSISTANT and message.tool_calls:
            for call in message.tool_calls:
                if call.id in seen_ids:
                    violations.append(Violation(index=index, code='duplicate_call_id',
                                                detail=f'tool call id {call.id!r} reused'))
                seen_ids.add(call.id)
                pending.add(call.id)
            awaiting_results = True

    if pending:
        violations.append(Violation(index=len(trajectory.messages) - 1, code='unresolved_tool_call',
                                    detail=f'calls {sorted(pending)} never resolved'))
    if trajectory.reward not in (0, 1):
        violations.append(Violation(index=None, code='reward_range',
                                    detail=f'reward {trajectory.reward} outside {{0, 1}}'))
    if trajectory.termination is Termination.CONTEXT_OVERFLOW and trajectory.reward != 0:
        violations.append(Violation(index=None, code='overflow_reward',
                                    detail='context overflow must count as a failure'))
    return violations


def count_user_turns(trajectory_or_messages):
    messages = getattr(trajectory_or_messages, 'messages', trajectory_or_messages)
    return sum(1 for message in messages if message.role is Role.USER)
