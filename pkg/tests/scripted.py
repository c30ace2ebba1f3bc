"""Scripted model behaviours shared by the test modules."""

import json
from collections import namedtuple

from gateway.client import Gateway
from gateway.scripted import ScriptedBackend
from models.conversation import Role

# index of the ideal action to corrupt, the arguments to use instead, and the
# text whose presence in a system message cures the mistake
Plant = namedtuple('Plant', 'index arguments cure')

FLAGSHIP_PLANTS = {
    'retail-1': Plant(2, {'reason': 'changed my mind'}, '[DCE]'),
    'retail-3': Plant(3, {'new_item_id': 'I99'}, '[Memory]'),
    'retail-4': Plant(1, {'address': '99 Nowhere Blvd'}, '[Memory]'),
}

DCE_CONSTRAINT = 'Cancellation reason must be "no longer needed" or "ordered by mistake".'


def system_text(request):
    return '\n'.join(message.content for message in request.messages if message.role is Role.SYSTEM)


def observations(request):
    """Tool results seen so far, in either protocol."""
    if request.tool_specs is None:
        return sum(1 for message in request.messages
                   if message.role is Role.USER and message.content.startswith('Observation:'))
    return sum(1 for message in request.messages if message.role is Role.TOOL)


def react_text(name, arguments, thought='Next step.'):
    return f'Thought: {thought}\nAction: ' + json.dumps({'name': name, 'arguments': arguments})


class OracleAgent:
    """Walks each task's ideal actions, then reports the expected outputs.

    Planted mistakes are repeated until their cure shows up in a system message.
    Works for native tool calls and for the text protocol.
    """

    def __init__(self, tasks, plants=None, fail_replies=None):
        self.tasks = {task.id: task for task in tasks}
        self.plants = dict(plants or {})
        # task id -> number of episodes whose final reply omits the expected outputs
        self.fail_replies = dict(fail_replies or {})
        self.requests = []

    def __call__(self, request, rng):
        if not request.purpose.startswith('agent:'):
            return None
        self.requests.append(request)
        task = self.tasks[request.purpose.split(':', 1)[1]]
        react = request.tool_specs is None
        n = observations(request)
        if n < len(task.ideal_actions):
            action = task.ideal_actions[n]
            arguments = dict(action.arguments)
            plant = self.plants.get(task.id)
            if plant is not None and plant.index == n and plant.cure not in system_text(request):
                arguments.update(plant.arguments)
            if react:
                return react_text(action.name, arguments)
            return {'tool_calls': [{'id': f'call_{n}', 'name': action.name, 'arguments': arguments}]}
        reply = 'All set: ' + '; '.join(task.expected_outputs) + '.'
        if self.fail_replies.get(task.id, 0) > 0 and n == len(task.ideal_actions) and self._first_reply(request):
            self.fail_replies[task.id] -= 1
            reply = 'Sorry, I could not find that.'
        if react:
            return react_text('respond', {'content': reply}, thought='Done.')
        return reply

    @staticmethod
    def _first_reply(request):
        return not any(message.role is Role.ASSISTANT and not message.tool_calls and message.content
                       and not message.content.startswith('Thought') for message in request.messages)


def analysis_json(detected, rationale=''):
    return json.dumps({'detected': detected, 'cause_ids': [1] if detected else [], 'rationale': rationale})


class FlagshipJudge:
    """Detects the planted DPV and CMH signatures and recommends DCE plus Memory."""

    def __init__(self, mitigation=None):
        self.mitigation = mitigation or {'agents': ['DCE', 'Memory'], 'memory_k': 2,
                                         'rationale': 'policy reminders and user memory'}
        self.purposes = []
        self.requests = []

    def __call__(self, request, rng):
        self.purposes.append(request.purpose)
        self.requests.append(request)
        prompt = request.messages[-1].content
        purpose = request.purpose
        if purpose == 'analyze:DPV':
            return analysis_json('changed my mind' in prompt, 'cancellation reason outside the policy')
        if purpose == 'analyze:CMH':
            return analysis_json('I99' in prompt or 'Nowhere' in prompt, 'value not given by the user')
        if purpose.startswith('analyze:'):
            return analysis_json(False)
        if purpose == 'orchestrate':
            return json.dumps({'main_errors': ['CMH'], 'override': False, 'rationale': 'dominant error'})
        if purpose == 'mitigate':
            return json.dumps(self.mitigation)
        if purpose == 'helper:DCE':
            return DCE_CONSTRAINT
        if purpose == 'helper:TSA':
            return json.dumps({'tools': ['find_user', 'get_order']})
        if purpose == 'helper:TOR':
            return 'Relevant facts only.'
        if purpose == 'helper:Planner':
            return '1. Authenticate the user\n2. Look up the order\n3. Act and confirm'
        if purpose == 'helper:Verifier':
            return 'PASS; consistent with the policy'
        return None


def scripted_gateway(agent=None, judge=None, user=None):
    backends = {
        'tool_agent': ScriptedBackend(responder=agent, name='tool_agent'),
        'judge': ScriptedBackend(responder=judge, name='judge'),
    }
    if user is not None:
        backends['user_agent'] = ScriptedBackend(responder=user, name='user_agent')
    return Gateway(backends=backends)
