"""The built-in helper agents. Each returns a ContextFragment for the tool agent."""

import logging
import re

from agents.judge import extract_json, format_call, format_transcript
from gateway.errors import GatewayError
from gateway.tokens import estimate_message_tokens, estimate_text_tokens
from models.analysis import AgentKind, ContextFragment, VerdictStatus, VerifierVerdict
from models.conversation import Role

logger = logging.getLogger(__name__)

MAX_SUGGESTED_TOOLS = 5
_STEP_PREFIX = re.compile(r'^\s*(?:\d+[.)]|[-*])\s*')
_VERDICT = re.compile(r'^\s*\**\s*(PASS|RECHECK)\b\**\s*[;:,.-]?\s*(.*)$', re.IGNORECASE | re.DOTALL)
_FIX = re.compile(r'[;\n]\s*fix\s*:\s*(.*)$', re.IGNORECASE | re.DOTALL)


def make_fragment(kind, text, token_count=None, strip=True):
    if strip:
        text = text.strip()
    if token_count is None:
        token_count = estimate_text_tokens(text)
    return ContextFragment(source=kind.value if isinstance(kind, AgentKind) else kind, text=text,
                           token_count=token_count)


def _user_messages(transcript):
    return [message for message in transcript if message.role is Role.USER]


def current_goal(transcript):
    users = _user_messages(transcript)
    return users[-1].content if users else ''


def policy_clauses(policy_text):
    return [line.strip() for line in policy_text.splitlines() if line.strip()]


def extract_domain_constraints(judge, policy_text, transcript):
    """Policy clauses relevant to what the user is asking for."""
    if not policy_text.strip():
        raise ValueError('policy_text must not be empty')
    if not _user_messages(transcript):
        return make_fragment(AgentKind.DCE, '\n'.join(policy_clauses(policy_text)))
    response = judge.ask('agents/dce.j2', purpose='helper:DCE', policy=policy_text,
                         transcript=format_transcript(transcript))
    return make_fragment(AgentKind.DCE, response.message.content, response.completion_tokens)


def _tool_names(registry):
    if isinstance(registry, dict):
        return list(registry)
    return [spec['name'] if isinstance(spec, dict) else spec.name for spec in registry]


def _proposed_names(text):
    parsed = extract_json(text)
    if isinstance(parsed, dict):
        parsed = parsed.get('tools', [])
    if isinstance(parsed, list):
        return [str(item.get('name') if isinstance(item, dict) else item).strip() for item in parsed]
    return [_STEP_PREFIX.sub('', part).strip().strip('`') for part in re.split(r'[,\n]', text)]


def suggest_tools(judge, transcript, registry):
    """At most five tool names from the registry, in proposal order."""
    names = _tool_names(registry)
    if not names:
        raise ValueError('tool registry must not be empty')
    tools = registry.values() if isinstance(registry, dict) else registry
    specs = [spec if isinstance(spec, dict) else spec.to_schema() for spec in tools]
    response = judge.ask('agents/tsa.j2', purpose='helper:TSA', tools=specs,
                         transcript=format_transcript(transcript))
    suggested = []
    for name in _proposed_names(response.message.content):
        if name in names and name not in suggested:
            suggested.append(name)
        elif name and name not in names:
            logger.debug('TSA proposed unknown tool %r; dropped', name)
    suggested = suggested[:MAX_SUGGESTED_TOOLS]
    text = f'Candidate tools for the next step: {", ".join(suggested)}' if suggested else ''
    return make_fragment(AgentKind.TSA, text, response.completion_tokens)


def reformulate_tool_output(judge, raw_tool_message, current_goal_text, threshold=200):
    """Distill a long tool result; short results pass through unchanged."""
    if raw_tool_message.role is not Role.TOOL:
        raise ValueError('reformulate_tool_output expects a tool message')
    raw_tokens = raw_tool_message.token_count or estimate_message_tokens(raw_tool_message)
    if raw_tokens <= threshold:
        return make_fragment(AgentKind.TOR, raw_tool_message.content, raw_tokens)
    response = judge.ask('agents/tor.j2', purpose='helper:TOR', output=raw_tool_message.content,
                         goal=current_goal_text)
    text = response.message.content.strip()
    tokens = response.completion_tokens
    if estimate_text_tokens(text) >= raw_tokens or tokens >= raw_tokens:
        logger.warning('TOR summary (%d tokens) not shorter than raw output (%d); truncating',
                       estimate_text_tokens(text), raw_tokens)
        text = ' '.join(text.split()[:threshold])
        tokens = estimate_text_tokens(text)
    return make_fragment(AgentKind.TOR, text, tokens)


def parse_plan(text):
    steps = []
    for line in text.splitlines():
        step = _STEP_PREFIX.sub('', line).strip()
        if step:
            steps.append(step)
    return steps


def plan(judge, transcript):
    """Numbered step list for the current request."""
    response = judge.ask('agents/planner.j2', purpose='helper:Planner',
                         transcript=format_transcript(transcript))
    steps = parse_plan(response.message.content)
    text = '\n'.join(f'{i}. {step}' for i, step in enumerate(steps, 1))
    return make_fragment(AgentKind.PLANNER, text, response.completion_tokens)


def describe_action(message):
    if message.tool_calls:
        return '; '.join(format_call(call) for call in message.tool_calls)
    return f'reply to user: {message.content}'


def parse_verdict(text, completion_tokens=0):
    """Accepts `STATUS; rationale; fix: ...` lines and JSON objects. None when neither."""
    parsed = extract_json(text)
    if isinstance(parsed, dict) and 'status' in parsed:
        status = str(parsed['status']).strip().upper()
        if status in VerdictStatus.__members__:
            return VerifierVerdict(
                status=VerdictStatus(status),
                rationale=str(parsed.get('rationale', '')).strip(),
                suggested_fix=parsed.get('suggested_fix') or parsed.get('fix'),
                completion_tokens=completion_tokens,
            )
    match = _VERDICT.match(text or '')
    if match is None:
        return None
    rest = match.group(2).strip()
    fix = None
    fix_match = _FIX.search(rest)
    if fix_match:
        fix = fix_match.group(1).strip()
        rest = rest[:fix_match.start()].strip()
    return VerifierVerdict(status=VerdictStatus(match.group(1).upper()), rationale=rest.strip(' ;'),
                           suggested_fix=fix, completion_tokens=completion_tokens)


def verify(judge, proposed_action, plan_fragment, transcript):
    """Check the candidate action; gateway errors and unreadable verdicts fail open to PASS."""
    plan_text = plan_fragment.text if plan_fragment is not None else ''
    try:
        response = judge.ask('agents/verifier.j2', purpose='helper:Verifier',
                             action=describe_action(proposed_action), plan=plan_text,
                             transcript=format_transcript(transcript))
    except GatewayError as e:
        logger.warning('Verifier call failed (%s); passing the action through', e)
        return VerifierVerdict(status=VerdictStatus.PASS, rationale=f'verifier unavailable: {e}')
    verdict = parse_verdict(response.message.content, response.completion_tokens)
    if verdict is None:
        logger.warning('Unreadable verifier verdict %r; passing the action through',
                       response.message.content[:80])
        return VerifierVerdict(status=VerdictStatus.PASS, rationale='unparseable verdict',
                               completion_tokens=response.completion_tokens)
    return verdict


def memory_window(transcript, k):
    """The k most recent user messages, verbatim and in order."""
    if k < 0:
        raise ValueError('k must be >= 0')
    users = _user_messages(transcript)
    kept = users[-k:] if k else []
    return make_fragment(AgentKind.MEMORY, "\n".join(message.content for message in kept), strip=False)
