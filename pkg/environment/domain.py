"""Domain definitions, episode state and tool execution."""

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import jsonschema
from pydantic import ValidationError

from gateway.tokens import estimate_text_tokens
from gateway.wire import canonical_json
from models.conversation import IdealAction, Message, Task, ToolCall

logger = logging.getLogger(__name__)

SCHEMA_DIR = Path(__file__).resolve().parent.parent / 'schemas'

_HANDLERS: dict[tuple[str, str], Callable] = {}


class DomainError(Exception):
    """Base class for environment errors."""


class UnknownDomain(DomainError):
    pass


class UnknownTool(DomainError):
    pass


class SchemaViolation(DomainError):
    pass


class ToolError(DomainError):
    """Raised by handlers; surfaced to the agent as an in-band error result."""


class AssetError(DomainError):
    """A domain or task file failed to parse or validate."""

    def __init__(self, path, message, line=None, column=None):
        location = f'{path}:{line}:{column}' if line is not None else str(path)
        super().__init__(f'{location}: {message}')
        self.path = path
        self.line = line
        self.column = column


def tool_handler(domain_id, name):
    """Register a handler for a tool of a domain."""
    def decorator(fn):
        _HANDLERS[(domain_id, name)] = fn
        return fn
    return decorator


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    parameters: dict
    write: bool
    handler: Callable

    def to_schema(self):
        return {'name': self.name, 'description': self.description, 'parameters': self.parameters}


@dataclass(frozen=True)
class Domain:
    id: str
    policy_text: str
    tools: dict[str, ToolSpec]
    initial_db: dict
    finish_tools: tuple[str, ...] = ()
    source_hash: str = ''

    def tool_specs(self):
        return [tool.to_schema() for tool in self.tools.values()]

    @property
    def tool_names(self):
        return list(self.tools)


@dataclass
class EnvState:
    domain: Domain
    db: dict
    executed_calls: list = field(default_factory=list)

    def db_hash(self):
        return db_hash(self.db)


def db_hash(db):
    return hashlib.sha256(canonical_json(db)).hexdigest()


def _read_json(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise AssetError(path, f'cannot read file: {e}') from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise AssetError(path, e.msg, line=e.lineno, column=e.colno) from e


def _load_schema(name):
    with open(SCHEMA_DIR / name, encoding='utf-8') as f:
        return json.load(f)


def validate_document(document, schema_name, path='<document>'):
    """Return schema errors as 'json/path: message' strings."""
    validator = jsonschema.Draft7Validator(_load_schema(schema_name))
    errors = []
    for error in sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path)):
        location = '/'.join(str(part) for part in error.absolute_path) or '<root>'
        errors.append(f'{path}: {location}: {error.message}')
    return errors


def build_domain(document, source_hash=''):
    # importing registers the shipped handlers
    import environment.retail  # noqa: F401

    domain_id = document['id']
    tools = {}
    for raw in document['tools']:
        name = raw['name']
        if name in tools:
            raise AssetError('<domain>', f'duplicate tool name {name!r}')
        handler = _HANDLERS.get((domain_id, raw.get('handler', name)))
        if handler is None:
            raise AssetError('<domain>', f'no handler registered for {domain_id}.{name}')
        tools[name] = ToolSpec(
            name=name,
            description=raw.get('description', ''),
            parameters=raw.get('parameters', {'type': 'object', 'properties': {}}),
            write=bool(raw.get('write', False)),
            handler=handler,
        )
    return Domain(
        id=domain_id,
        policy_text=document['policy'],
        tools=tools,
        initial_db=document['db'],
        finish_tools=tuple(document.get('finish_tools', [])),
        source_hash=source_hash,
    )


def load_domain(path):
    path = Path(path)
    document = _read_json(path)
    errors = validate_document(document, 'domain.schema.json', path)
    if errors:
        raise AssetError(path, '; '.join(errors))
    return build_domain(document, source_hash=hashlib.sha256(path.read_bytes()).hexdigest())


def _is_external_record(record):
    return 'instruction' in record or 'actions' in record


def ingest_external_task(record, domain_id, index):
    """Adapt a tau-bench style task record into a Task."""
    actions = [
        IdealAction(name=action['name'], arguments=action.get('kwargs', action.get('arguments', {})))
        for action in record.get('actions', [])
    ]
    return Task(
        id=str(record.get('id', record.get('task_id', f'{domain_id}-{index}'))),
        domain_id=record.get('domain_id', domain_id),
        scenario=record.get('instruction', record.get('scenario', '')),
        ideal_actions=actions,
        expected_outputs=[str(output) for output in record.get('outputs', [])],
        expected_state='replay' if actions else None,
        persona=record.get('persona'),
        user_script=record.get('user_script'),
    )


def load_tasks(path, domain_id=None):
    """Load a task file: native Task records or externally supplied benchmark records."""
    path = Path(path)
    document = _read_json(path)
    if isinstance(document, dict):
        domain_id = document.get('domain_id', domain_id)
        records = document.get('tasks', [])
    else:
        records = document
    errors = validate_document({'domain_id': domain_id or '', 'tasks': records}, 'tasks.schema.json', path)
    if errors:
        raise AssetError(path, '; '.join(errors))
    tasks = []
    for index, record in enumerate(records):
        try:
            if _is_external_record(record):
                tasks.append(ingest_external_task(record, domain_id, index))
            else:
                tasks.append(Task.model_validate({'domain_id': domain_id, **record}))
        except ValidationError as e:
            raise AssetError(path, f'task #{index}: {e}') from e
    return tasks


def reset(domain, task):
    if task.domain_id != domain.id:
        raise UnknownDomain(f'Task {task.id} targets domain {task.domain_id!r}, not {domain.id!r}')
    return EnvState(domain=domain, db=copy.deepcopy(domain.initial_db))


def _result_message(call, payload):
    content = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return Message.tool(call.id, content, token_count=estimate_text_tokens(content))


def execute(state, call):
    """Apply one tool call and return its payload. Failed writes leave the db untouched."""
    tool = state.domain.tools.get(call.name)
    if tool is None:
        raise UnknownTool(f'Unknown tool {call.name!r}')
    errors = list(jsonschema.Draft7Validator(tool.parameters).iter_errors(call.arguments))
    if errors:
        raise SchemaViolation('; '.join(error.message for error in errors))
    working = copy.deepcopy(state.db)
    result = tool.handler(working, **call.arguments)
    if tool.write:
        state.db = working
    return result


def step(state, call):
    """Execute a tool call and return the tool message the agent observes."""
    try:
        payload = execute(state, call)
    except UnknownTool as e:
        payload = {'error': str(e), 'type': 'unknown_tool'}
    except SchemaViolation as e:
        payload = {'error': f'Invalid arguments for {call.name}: {e}', 'type': 'schema_violation'}
    except ToolError as e:
        payload = {'error': str(e), 'type': 'tool_error'}
    except Exception as e:
        logger.exception('Handler for %s crashed', call.name)
        payload = {'error': f'{call.name} failed: {e}', 'type': 'handler_error'}
    state.executed_calls.append((call, payload))
    return _result_message(call, payload)


def replay_actions(domain, task, actions=None):
    """State reached by applying actions (ideal ones by default) from a fresh reset."""
    state = reset(domain, task)
    for i, action in enumerate(task.ideal_actions if actions is None else actions):
        if isinstance(action, IdealAction):
            action = ToolCall(id=f'replay_{i}', name=action.name, arguments=action.arguments)
        step(state, action)
    return state


def is_finish_call(domain, call):
    return call.name in domain.finish_tools


def tool_payload(message):
    """Decode a tool message body; non-JSON bodies come back as raw text."""
    try:
        return json.loads(message.content)
    except (json.JSONDecodeError, TypeError):
        return message.content
