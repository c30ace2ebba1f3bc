"""Helper-agent catalog and the per-episode context composer."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from agents import helpers
from agents.judge import format_transcript
from models.analysis import AgentKind, AgentSubset
from models.conversation import Message, Role

logger = logging.getLogger(__name__)

# fragment is rebuilt when its trigger key changes
TRIGGER_USER = 'user'
TRIGGER_TOOL = 'tool'
TRIGGER_ALWAYS = 'always'


@dataclass(frozen=True)
class ComposeInputs:
    transcript: list
    domain: object
    judge: object
    memory_k: int = 2
    tor_threshold: int = 200


@dataclass(frozen=True)
class AgentSpec:
    name: str
    description: str
    position: int
    trigger: str
    build: Optional[Callable] = None
    template: Optional[str] = None
    pre_decision: bool = True

    def produce(self, inputs):
        if self.build is not None:
            return self.build(inputs)
        response = inputs.judge.ask(
            self.template, purpose=f'helper:{self.name}',
            transcript=format_transcript(inputs.transcript),
            policy=inputs.domain.policy_text,
            tools=inputs.domain.tool_specs(),
        )
        return helpers.make_fragment(self.name, response.message.content, response.completion_tokens)


def _last_tool_message(transcript):
    return next((message for message in reversed(transcript) if message.role is Role.TOOL), None)


def _build_memory(inputs):
    return helpers.memory_window(inputs.transcript, inputs.memory_k)


def _build_dce(inputs):
    return helpers.extract_domain_constraints(inputs.judge, inputs.domain.policy_text, inputs.transcript)


def _build_tsa(inputs):
    return helpers.suggest_tools(inputs.judge, inputs.transcript, inputs.domain.tool_specs())


def _build_tor(inputs):
    last = _last_tool_message(inputs.transcript)
    if last is None:
        return None
    return helpers.reformulate_tool_output(inputs.judge, last, helpers.current_goal(inputs.transcript),
                                           threshold=inputs.tor_threshold)


def _build_planner(inputs):
    return helpers.plan(inputs.judge, inputs.transcript)


_CATALOG: dict[str, AgentSpec] = {}


def register_agent(name, description, template=None, position=None, trigger=TRIGGER_USER, build=None,
                   pre_decision=True):
    """Add an agent to the catalog. Extensions render `template` through the judge endpoint."""
    if build is None and template is None:
        raise ValueError('an agent needs either a build function or a prompt template')
    if position is None:
        position = max((spec.position for spec in _CATALOG.values()), default=0) + 10
    spec = AgentSpec(name=name, description=description, position=position, trigger=trigger, build=build,
                     template=template, pre_decision=pre_decision)
    _CATALOG[name] = spec
    return spec


def unregister_agent(name):
    _CATALOG.pop(name, None)


def catalog():
    return dict(_CATALOG)


def catalog_names():
    return [spec.name for spec in sorted(_CATALOG.values(), key=lambda spec: spec.position)]


register_agent(AgentKind.MEMORY.value, 'User Context Manager: keeps the k most recent user requests verbatim '
               'so earlier requirements are not lost.', position=10, trigger=TRIGGER_ALWAYS, build=_build_memory)
register_agent(AgentKind.DCE.value, 'Domain Constraints Extractor: lists the policy rules that apply to the '
               'current user request.', position=20, build=_build_dce)
register_agent(AgentKind.TSA.value, 'Tool Suggestion Agent: proposes up to five tools likely needed for the '
               'next step.', position=30, build=_build_tsa)
register_agent(AgentKind.TOR.value, 'Tool Output Reformulator: condenses long tool outputs into the facts '
               'relevant to the current goal.', position=40, trigger=TRIGGER_TOOL, build=_build_tor)
register_agent(AgentKind.PLANNER.value, 'Planner: writes a numbered step plan for the current request.',
               position=50, build=_build_planner)
register_agent(AgentKind.VERIFIER.value, 'Decision Verifier: checks each proposed action before it runs and '
               'asks for one re-decision when it finds a problem.', position=60, build=None,
               template='agents/verifier.j2', pre_decision=False)


def _trigger_key(trigger, transcript):
    if trigger == TRIGGER_USER:
        return sum(1 for message in transcript if message.role is Role.USER)
    if trigger == TRIGGER_TOOL:
        return sum(1 for message in transcript if message.role is Role.TOOL)
    return None


@dataclass
class Composition:
    fragments: list = field(default_factory=list)
    fresh_tokens: int = 0

    def fragment(self, source):
        return next((fragment for fragment in self.fragments if fragment.source == source), None)


class ContextComposer:
    """Builds the pre-decision fragments for one episode.

    Fragments are cached per agent and regenerated only when the agent's
    trigger changes; only freshly generated fragments count as overhead.
    """

    def __init__(self, subset, domain, judge, memory_k=None, tor_threshold=200, workers=1):
        unknown = [name for name in subset.agents if name not in _CATALOG]
        if unknown:
            raise ValueError(f'Agents not in catalog: {sorted(unknown)}')
        self.subset = subset
        self.domain = domain
        self.judge = judge
        self.memory_k = subset.memory_k if memory_k is None else memory_k
        self.tor_threshold = tor_threshold
        self.workers = workers
        self._cache = {}
        self.specs = [spec for spec in sorted(_CATALOG.values(), key=lambda spec: spec.position)
                      if spec.name in subset and spec.pre_decision]

    @property
    def verifier_active(self):
        return AgentKind.VERIFIER in self.subset

    def _due(self, spec, transcript):
        key = _trigger_key(spec.trigger, transcript)
        cached = self._cache.get(spec.name)
        if spec.trigger != TRIGGER_ALWAYS and cached is not None and cached[0] == key:
            return key, False
        return key, True

    def _produce(self, spec, inputs):
        try:
            return spec.produce(inputs)
        except Exception as e:
            logger.warning('Helper %s failed (%s); continuing without its fragment', spec.name, e)
            return None

    def compose(self, transcript):
        inputs = ComposeInputs(transcript=list(transcript), domain=self.domain, judge=self.judge,
                               memory_k=self.memory_k or 0, tor_threshold=self.tor_threshold)
        due = {}
        for spec in self.specs:
            key, stale = self._due(spec, transcript)
            if stale:
                due[spec.name] = key
        produced = {}
        pending = [spec for spec in self.specs if spec.name in due]
        if self.workers > 1 and len(pending) > 1 and not self.judge.order_sensitive:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                futures = {spec.name: executor.submit(self._produce, spec, inputs) for spec in pending}
                produced = {name: future.result() for name, future in futures.items()}
        else:
            produced = {spec.name: self._produce(spec, inputs) for spec in pending}

        composition = Composition()
        for spec in self.specs:
            if spec.name in produced:
                fragment = produced[spec.name]
                if fragment is None:
                    self._cache.pop(spec.name, None)
                    continue
                self._cache[spec.name] = (due[spec.name], fragment)
                composition.fresh_tokens += fragment.token_count
            else:
                fragment = self._cache[spec.name][1].model_copy(update={'cached': True})
            composition.fragments.append(fragment)
        return composition


def compose_context(active_subset, transcript, domain, judge, memory_k=None, tor_threshold=200):
    """Fragments of the active agents in fixed order; one-shot, no caching."""
    composer = ContextComposer(active_subset, domain, judge, memory_k=memory_k, tor_threshold=tor_threshold)
    return composer.compose(transcript).fragments


def context_message(fragments, prompts):
    """System message carrying the non-empty fragments, or None."""
    visible = [fragment for fragment in fragments if fragment.text.strip()]
    if not visible:
        return None
    return Message.system(prompts.render('agents/context.j2', fragments=visible))


def describe_catalog(names=None):
    specs = sorted(_CATALOG.values(), key=lambda spec: spec.position)
    return [{'name': spec.name, 'description': spec.description} for spec in specs
            if names is None or spec.name in names]


def subset_from_names(names, memory_k=None):
    known = [name for name in names if name in _CATALOG]
    return AgentSubset.of(*known, memory_k=memory_k)
