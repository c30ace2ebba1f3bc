"""One episode: simulated user, optional helper context, tool agent, environment."""

import json
import logging
import re
from dataclasses import dataclass

from agents.catalog import ContextComposer, context_message
from agents.helpers import describe_action, verify
from agents.judge import JudgeClient, extract_json, format_transcript
from environment.domain import is_finish_call, reset, step
from environment.scoring import align_process, evaluate
from environment.user_sim import Stop, UserSimulator, simulate_user
from gateway.errors import ContextOverflow, GatewayError, ProviderUnreachable
from gateway.tokens import estimate_text_tokens, estimate_tokens
from gateway.wire import ChatRequest
from models.analysis import AgentKind, AgentSubset, VerdictStatus
from models.conversation import Message, Role, Termination, ToolCall, Trajectory
from models.run_config import Method
from prompts import library_for

logger = logging.getLogger(__name__)

RESPOND_ACTION = 'respond'
_ACTION = re.compile(r'Action\s*:\s*', re.IGNORECASE)
_THOUGHT = re.compile(r'^\s*Thought\s*:\s*', re.IGNORECASE)


@dataclass(frozen=True)
class ReactStep:
    thought: str
    name: str
    arguments: dict


def parse_react(text):
    """Split `Thought: ... Action: {json}` output; None when no well-formed action is present."""
    match = _ACTION.search(text or '')
    if match is None:
        return None
    payload = extract_json(text[match.end():])
    if not isinstance(payload, dict) or not payload.get('name'):
        return None
    arguments = payload.get('arguments') or {}
    if not isinstance(arguments, dict):
        return None
    thought = _THOUGHT.sub('', text[:match.start()]).strip()
    return ReactStep(thought=thought, name=str(payload['name']), arguments=arguments)


def _react_action_text(name, arguments):
    return 'Action: ' + json.dumps({'name': name, 'arguments': arguments}, sort_keys=True, ensure_ascii=False)


def react_view(messages):
    """Render a transcript for the text-only ReAct protocol."""
    view = []
    for message in messages:
        if message.role is Role.TOOL:
            view.append(Message.user(f'Observation: {message.content}', token_count=message.token_count))
        elif message.role is Role.ASSISTANT and message.tool_calls:
            lines = [f'Thought: {message.content}'] if message.content else []
            lines.extend(_react_action_text(call.name, call.arguments) for call in message.tool_calls)
            view.append(Message.assistant('\n'.join(lines), token_count=message.token_count))
        elif message.role is Role.ASSISTANT:
            text = _react_action_text(RESPOND_ACTION, {'content': message.content})
            view.append(Message.assistant(text, token_count=message.token_count))
        else:
            view.append(message)
    return view


def resolve_method(config, subset=None):
    """(protocol, reflect, subset) for the configured method."""
    method = config.method
    if method is Method.IRMA:
        return Method.FC, False, AgentSubset.full_catalog(memory_k=config.memory_k)
    if method is Method.FAMA:
        protocol = Method.REACT if config.base_method is Method.REACT else Method.FC
        return protocol, False, subset or AgentSubset.empty()
    if method is Method.SELF_REFLECTION:
        return Method.FC, True, subset or AgentSubset.empty()
    if method is Method.REACT:
        return Method.REACT, False, subset or AgentSubset.empty()
    return Method.FC, False, subset or AgentSubset.empty()


class EpisodeLoop:
    def __init__(self, config, domain, task, gateway, subset=None, trial=0, label=None, prompts=None):
        self.config = config
        self.domain = domain
        self.task = task
        self.gateway = gateway
        self.trial = trial
        self.protocol, self.reflect, self.subset = resolve_method(config, subset)
        self.label = label or config.method.value
        self.prompts = prompts or library_for(config)
        self.judge = JudgeClient.from_config(gateway, config, self.prompts)
        self.composer = ContextComposer(self.subset, domain, self.judge, tor_threshold=config.tor_threshold)
        self.user = UserSimulator(gateway, config.user_agent_endpoint, task, seed=config.seed + trial,
                                  temperature=config.temperature, prompts=self.prompts)
        self.assistant_tokens = 0
        self.overhead_tokens = 0
        self.assistant_time = 0.0
        self.peak_prompt_tokens = 0
        self.decisions = 0
        self._call_ids = set()

    @property
    def react(self):
        return self.protocol is Method.REACT

    def system_prompt(self):
        if self.react:
            return self.prompts.render('agents/tool_agent_react.j2', policy=self.domain.policy_text,
                                       tools=self.domain.tool_specs(), respond_action=RESPOND_ACTION)
        return self.prompts.render('agents/tool_agent.j2', policy=self.domain.policy_text)

    def run(self):
        state = reset(self.domain, self.task)
        prompt = self.system_prompt()
        messages = [Message.system(prompt, token_count=estimate_text_tokens(prompt))]
        logger.info('Episode %s trial %d (%s) started', self.task.id, self.trial, self.label)
        try:
            termination = self._loop(state, messages)
        except ContextOverflow as e:
            logger.warning('Episode %s trial %d overflowed: %s', self.task.id, self.trial, e)
            termination = Termination.CONTEXT_OVERFLOW
        except ProviderUnreachable:
            raise
        except GatewayError as e:
            logger.warning('Episode %s trial %d aborted by provider error: %s', self.task.id, self.trial, e)
            termination = Termination.PROVIDER_ERROR
        except Exception:
            logger.exception('Episode %s trial %d crashed', self.task.id, self.trial)
            termination = Termination.PROVIDER_ERROR
        return self._finish(state, messages, termination)

    def _loop(self, state, messages):
        turn = simulate_user(self.user, messages)
        if isinstance(turn, Stop):
            return Termination.COMPLETED
        messages.append(turn)
        while True:
            if self.decisions >= self.config.max_turns:
                return Termination.MAX_TURNS
            action = self._decide(messages)
            messages.append(action)
            if action.tool_calls:
                finished = False
                for call in action.tool_calls:
                    messages.append(step(state, call))
                    finished = finished or is_finish_call(self.domain, call)
                if finished:
                    return Termination.COMPLETED
                continue
            turn = simulate_user(self.user, messages)
            if isinstance(turn, Stop):
                return Termination.COMPLETED
            messages.append(turn)

    def _decide(self, messages):
        composition = self.composer.compose(messages)
        self.overhead_tokens += composition.fresh_tokens
        context = context_message(composition.fragments, self.prompts)
        action = self._propose(messages, context)
        if self.reflect:
            action = self._reflect(messages, context, action)
        if self.composer.verifier_active:
            action = self._verified(messages, context, action, composition.fragment(AgentKind.PLANNER.value))
        self.decisions += 1
        return self._unique_call_ids(action)

    def _prompt(self, messages, context, extra=()):
        head = [messages[0]] + ([context] if context is not None else [])
        prompt = head + list(messages[1:]) + list(extra)
        return react_view(prompt) if self.react else prompt

    def _call_agent(self, prompt, purpose, with_tools=True):
        request = ChatRequest(
            messages=prompt,
            tool_specs=self.domain.tool_specs() if with_tools and not self.react else None,
            temperature=self.config.temperature,
            top_p=self.config.top_p,
            max_tokens=self.config.max_tokens,
            seed=self.config.seed,
            context_budget=self.config.max_context_tokens,
            purpose=purpose,
        )
        response = self.gateway.chat(self.config.tool_agent_endpoint, request)
        self.peak_prompt_tokens = max(self.peak_prompt_tokens, estimate_tokens(prompt))
        self.assistant_tokens += response.completion_tokens
        self.assistant_time += response.latency_s
        return response

    def _propose(self, messages, context, extra=()):
        response = self._call_agent(self._prompt(messages, context, extra), purpose=f'agent:{self.task.id}')
        if not self.react:
            return response.message
        return self._from_react(response.message.content, response.completion_tokens)

    def _from_react(self, text, tokens):
        parsed = parse_react(text)
        if parsed is None:
            # no usable action: treat the text as a reply to the user
            return Message.assistant(_THOUGHT.sub('', text).strip(), token_count=tokens)
        if parsed.name == RESPOND_ACTION:
            return Message.assistant(str(parsed.arguments.get('content', '')), token_count=tokens)
        call = ToolCall(id=f'react_{self.decisions}', name=parsed.name, arguments=parsed.arguments)
        return Message.assistant(parsed.thought, tool_calls=[call], token_count=tokens)

    def _reflect(self, messages, context, draft):
        critique_prompt = self.prompts.render(
            'agents/reflect_critique.j2', policy=self.domain.policy_text,
            transcript=format_transcript(messages), action=describe_action(draft),
        )
        critique = self._call_agent([Message.user(critique_prompt)], purpose=f'reflect:{self.task.id}',
                                    with_tools=False)
        note = Message.system(self.prompts.render('agents/reflect_revise.j2', action=describe_action(draft),
                                                  critique=critique.message.content))
        return self._propose(messages, context, extra=(note,))

    def _verified(self, messages, context, action, plan_fragment):
        verdict = verify(self.judge, action, plan_fragment, messages)
        self.overhead_tokens += verdict.completion_tokens
        if verdict.status is VerdictStatus.PASS:
            return action
        logger.info('Verifier RECHECK on %s: %s', self.task.id, verdict.rationale)
        note = Message.system(self.prompts.render('agents/recheck.j2', rationale=verdict.rationale,
                                                  fix=verdict.suggested_fix))
        revised = self._propose(messages, context, extra=(note,))
        second = verify(self.judge, revised, plan_fragment, messages)
        self.overhead_tokens += second.completion_tokens
        if second.status is VerdictStatus.RECHECK:
            logger.info('Second RECHECK on %s ignored; executing the revised action', self.task.id)
        return revised

    def _unique_call_ids(self, action):
        if not action.tool_calls:
            return action
        calls = []
        for call in action.tool_calls:
            call_id, suffix = call.id, 1
            while call_id in self._call_ids:
                call_id = f'{call.id}_{suffix}'
                suffix += 1
            self._call_ids.add(call_id)
            calls.append(call if call_id == call.id else call.model_copy(update={'id': call_id}))
        return action.model_copy(update={'tool_calls': calls})

    def _finish(self, state, messages, termination):
        scored = Trajectory(task_id=self.task.id, method=self.label, trial=self.trial, messages=messages)
        breakdown = evaluate(state, scored, self.task)
        reward = breakdown.reward if termination is Termination.COMPLETED else 0
        wall = self.assistant_time + self.judge.elapsed_s + self.user.elapsed_s
        trajectory = Trajectory(
            task_id=self.task.id,
            method=self.label,
            trial=self.trial,
            messages=messages,
            reward=reward,
            termination=termination,
            assistant_tokens=self.assistant_tokens,
            overhead_tokens=self.overhead_tokens,
            wall_time_s=round(wall, 6),
            domain=self.domain.id,
            assistant_time_s=round(self.assistant_time, 6),
            peak_prompt_tokens=self.peak_prompt_tokens,
            matched_steps=align_process(scored, self.task),
            ideal_steps=self.task.ideal_step_count,
            state_match=breakdown.state_match,
        )
        logger.info('Episode %s trial %d (%s) finished: reward=%d termination=%s', self.task.id, self.trial,
                    self.label, reward, termination.value)
        return trajectory


def run_episode(config, domain, task, subset=None, gateway=None, trial=0, label=None, prompts=None):
    """Run one task once and return its trajectory."""
    if gateway is None:
        raise ValueError('run_episode needs a gateway')
    return EpisodeLoop(config, domain, task, gateway, subset=subset, trial=trial, label=label,
                       prompts=prompts).run()
