from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ErrorCategory(str, Enum):
    DPV = 'DPV'
    IRC = 'IRC'
    CMH = 'CMH'
    IFS = 'IFS'

    @property
    def title(self):
        return CATEGORY_TITLES[self]


CATEGORY_TITLES = {
    ErrorCategory.DPV: 'Domain Policy Violation',
    ErrorCategory.IRC: 'Incorrect Retrieval from Complex Tool Outputs',
    ErrorCategory.CMH: 'Contextual Misinterpretation and Hallucination',
    ErrorCategory.IFS: 'Incomplete Fulfillment or Early Stopping',
}


class AgentKind(str, Enum):
    DCE = 'DCE'
    TSA = 'TSA'
    TOR = 'TOR'
    PLANNER = 'Planner'
    VERIFIER = 'Verifier'
    MEMORY = 'Memory'


# Fixed pre-decision injection order; the Verifier acts after the decision.
PRE_DECISION_ORDER = (AgentKind.MEMORY, AgentKind.DCE, AgentKind.TSA, AgentKind.TOR, AgentKind.PLANNER)
CATALOG_ORDER = PRE_DECISION_ORDER + (AgentKind.VERIFIER,)


class AgentSubset(BaseModel):
    """A set of helper-agent names; Memory carries its window size k."""

    model_config = ConfigDict(frozen=True)

    agents: frozenset[str] = frozenset()
    memory_k: Optional[int] = Field(default=None, ge=0)

    @model_validator(mode='after')
    def _memory_k_only_with_memory(self):
        if AgentKind.MEMORY.value not in self.agents and self.memory_k is not None:
            object.__setattr__(self, 'memory_k', None)
        return self

    @classmethod
    def of(cls, *names, memory_k=None):
        values = frozenset(name.value if isinstance(name, AgentKind) else str(name) for name in names)
        if AgentKind.MEMORY.value in values and memory_k is None:
            memory_k = 2
        return cls(agents=values, memory_k=memory_k)

    @classmethod
    def empty(cls):
        return cls()

    @classmethod
    def full_catalog(cls, memory_k=2, extensions=()):
        names = [kind.value for kind in CATALOG_ORDER] + list(extensions)
        return cls(agents=frozenset(names), memory_k=memory_k)

    def __contains__(self, name):
        return (name.value if isinstance(name, AgentKind) else name) in self.agents

    def __len__(self):
        return len(self.agents)

    def __bool__(self):
        return bool(self.agents)

    def ordered(self):
        """Agent names in catalog order, extensions last in name order."""
        builtin = [kind.value for kind in CATALOG_ORDER if kind.value in self.agents]
        extra = sorted(name for name in self.agents if name not in {kind.value for kind in CATALOG_ORDER})
        return builtin + extra

    def union(self, other):
        k_values = [k for k in (self.memory_k, other.memory_k) if k is not None]
        return AgentSubset(agents=self.agents | other.agents, memory_k=max(k_values) if k_values else None)

    def issubset(self, names):
        return self.agents <= set(names)

    @property
    def label(self):
        if not self.agents:
            return 'none'
        parts = []
        for name in self.ordered():
            parts.append(f'Memory(k={self.memory_k})' if name == AgentKind.MEMORY.value else name)
        return '+'.join(parts)

    def to_dict(self):
        return {'agents': self.ordered(), 'memory_k': self.memory_k}

    @classmethod
    def from_dict(cls, data):
        return cls(agents=frozenset(data.get('agents', [])), memory_k=data.get('memory_k'))


class ContextFragment(BaseModel):
    model_config = ConfigDict(frozen=True)

    source: str
    text: str = ''
    token_count: int = Field(default=0, ge=0)
    cached: bool = False


class VerdictStatus(str, Enum):
    PASS = 'PASS'
    RECHECK = 'RECHECK'


class VerifierVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    status: VerdictStatus
    rationale: str = ''
    suggested_fix: Optional[str] = None
    completion_tokens: int = 0

    @model_validator(mode='after')
    def _recheck_carries_fix(self):
        if self.status is VerdictStatus.RECHECK and not self.suggested_fix:
            object.__setattr__(self, 'suggested_fix', self.rationale or 'Re-examine the proposed action.')
        return self


class ErrorAnalysisReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str
    trial: int = 0
    category: ErrorCategory
    detected: bool
    cause_ids: list[int] = Field(default_factory=list)
    rationale: str = ''

    @model_validator(mode='after')
    def _no_causes_when_clean(self):
        if not self.detected and self.cause_ids:
            object.__setattr__(self, 'cause_ids', [])
        return self

    def to_dict(self):
        return {
            'task_id': self.task_id,
            'trial': self.trial,
            'category': self.category.value,
            'detected': self.detected,
            'cause_ids': list(self.cause_ids),
            'rationale': self.rationale,
        }


class FailureAttribution(BaseModel):
    model_config = ConfigDict(frozen=True)

    task_id: str
    trial: int = 0
    domain: Optional[str] = None
    main_errors: list[ErrorCategory]
    rationale: str = ''
    overridden: bool = False

    @model_validator(mode='after')
    def _nonempty(self):
        if not self.main_errors:
            raise ValueError('main_errors must not be empty')
        return self

    def to_dict(self):
        return {
            'task_id': self.task_id,
            'trial': self.trial,
            'domain': self.domain,
            'main_errors': [category.value for category in self.main_errors],
            'rationale': self.rationale,
            'overridden': self.overridden,
        }
