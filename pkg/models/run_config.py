import os
import re
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from models.analysis import ErrorCategory

SCRIPTED_SCHEME = 'scripted://'
_PLACEHOLDER = re.compile(r'\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}')


class ConfigError(Exception):
    """Invalid or unreadable run configuration."""


class Method(str, Enum):
    FC = 'FC'
    REACT = 'ReAct'
    IRMA = 'IRMA'
    FAMA = 'FAMA'
    SELF_REFLECTION = 'SelfReflection'
    BASE = 'Base'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        lowered = str(value).strip().lower().replace('-', '').replace('_', '')
        for member in cls:
            if member.value.lower() == lowered:
                return member
        raise ConfigError(f'Unknown method {value!r}; expected one of {[m.value for m in cls]}')

    @property
    def uses_react_protocol(self):
        return self is Method.REACT


class Endpoint(BaseModel):
    model_config = ConfigDict(frozen=True)

    base_url: str
    model: str = 'scripted'
    api_key_env: str = 'OPENAI_API_KEY'
    timeout_s: float = Field(default=120.0, gt=0)
    max_retries: int = Field(default=3, ge=0)

    @property
    def is_scripted(self):
        return self.base_url.startswith(SCRIPTED_SCHEME)

    @property
    def script_name(self):
        return self.base_url[len(SCRIPTED_SCHEME):] if self.is_scripted else None

    @classmethod
    def scripted(cls, name):
        return cls(base_url=f'{SCRIPTED_SCHEME}{name}', model=name)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    method: Method = Method.FC
    base_method: Method = Method.FC
    tool_agent_endpoint: Endpoint = Endpoint.scripted('tool_agent')
    user_agent_endpoint: Endpoint = Endpoint.scripted('user_agent')
    judge_endpoint: Endpoint = Endpoint.scripted('judge')
    n_trials: int = Field(default=1, ge=1)
    max_turns: int = Field(default=30, ge=1)
    max_context_tokens: int = Field(default=32768, ge=1)
    memory_k: int = Field(default=2, ge=0)
    memory_k_sweep: Optional[list[int]] = None
    temperature: float = Field(default=0.0, ge=0.0)
    top_p: Optional[float] = Field(default=None, gt=0.0, le=1.0)
    max_tokens: Optional[int] = Field(default=None, ge=1)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    theta: float = Field(default=0.5, gt=0.0, le=1.0)
    tor_threshold: int = Field(default=200, ge=1)
    default_attribution: ErrorCategory = ErrorCategory.CMH
    prompt_dir: Optional[Path] = None
    scripts: dict[str, Path] = Field(default_factory=dict)

    @field_validator('method', 'base_method', mode='before')
    @classmethod
    def _parse_method(cls, value):
        return Method.parse(value)

    @field_validator('base_method')
    @classmethod
    def _baseline_only(cls, value):
        if value not in (Method.FC, Method.REACT, Method.BASE):
            raise ValueError('base_method must be FC, ReAct or Base')
        return value

    @field_validator('memory_k_sweep')
    @classmethod
    def _sweep_nonnegative(cls, value):
        if value is not None and (not value or any(k < 0 for k in value)):
            raise ValueError('memory_k_sweep must be a nonempty list of k >= 0')
        return value

    def with_overrides(self, **overrides):
        values = {key: value for key, value in overrides.items() if value is not None}
        if not values:
            return self
        try:
            return RunConfig.model_validate({**self.model_dump(), **values})
        except ValidationError as e:
            raise ConfigError(str(e)) from e

    def snapshot(self):
        return self.model_dump(mode='json')


def interpolate(value, environ=None):
    """Expand ${VAR} and ${VAR:-default} placeholders recursively."""
    environ = os.environ if environ is None else environ
    if isinstance(value, str):
        def replace(match):
            name, default = match.group(1), match.group(2)
            if name in environ:
                return environ[name]
            if default is not None:
                return default
            raise ConfigError(f'Environment variable {name} is not set')
        return _PLACEHOLDER.sub(replace, value)
    if isinstance(value, dict):
        return {key: interpolate(item, environ) for key, item in value.items()}
    if isinstance(value, list):
        return [interpolate(item, environ) for item in value]
    return value


def _endpoint_fields(raw):
    endpoints = raw.pop('endpoints', {}) or {}
    mapping = {'tool_agent': 'tool_agent_endpoint', 'user_agent': 'user_agent_endpoint', 'judge': 'judge_endpoint'}
    for key, field in mapping.items():
        if key in endpoints:
            raw[field] = endpoints[key]
    return raw


def load_config(path=None, **overrides):
    """Load a TOML run configuration, interpolate secrets, then apply CLI overrides."""
    load_dotenv()
    raw = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        base_dir = path.parent
        try:
            with open(path, 'rb') as f:
                raw = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError(f'Config file not found: {path}') from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f'{path}: {e}') from e
    raw = _endpoint_fields(interpolate(raw))
    run_section = raw.pop('run', {}) or {}
    raw.update(run_section)
    scripts = raw.get('scripts') or {}
    raw['scripts'] = {name: str((base_dir / script).resolve()) for name, script in scripts.items()}
    if raw.get('prompt_dir'):
        raw['prompt_dir'] = str((base_dir / raw['prompt_dir']).resolve())
    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e
    return config.with_overrides(**overrides)
