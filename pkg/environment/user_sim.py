"""LLM-driven (or scripted) customer that drives each episode."""

import logging

from pydantic import BaseModel, ConfigDict

from gateway.tokens import estimate_text_tokens
from gateway.wire import ChatRequest
from models.conversation import Message, Role
from prompts import default_library

logger = logging.getLogger(__name__)

STOP_TOKEN = '###STOP###'
OPENING_GREETING = 'Hi! How can I help you today?'


class Stop(BaseModel):
    """The simulated user ended the conversation."""

    model_config = ConfigDict(frozen=True)

    reason: str = 'satisfied'


class UserSimulator:
    """Plays the customer of one task.

    Tasks that ship a user_script are replayed line by line when the user
    endpoint is scripted; otherwise every turn is one call to the user model
    with the roles of the transcript flipped.
    """

    def __init__(self, gateway, endpoint, task, seed=0, temperature=0.0, prompts=None):
        self.gateway = gateway
        self.endpoint = endpoint
        self.task = task
        self.seed = seed
        self.temperature = temperature
        self.prompts = prompts or default_library()
        self.elapsed_s = 0.0

    @property
    def scenario(self):
        return self.task.scenario

    @property
    def persona(self):
        return self.task.persona

    @property
    def scripted(self):
        return self.task.user_script is not None and self.endpoint.is_scripted

    def system_prompt(self):
        return self.prompts.render(
            'user_simulator.j2', scenario=self.scenario, persona=self.persona, stop_token=STOP_TOKEN,
        )

    def respond(self, transcript):
        if self.scripted:
            return self._scripted_turn(transcript)
        return self._model_turn(transcript)

    def _scripted_turn(self, transcript):
        index = sum(1 for message in transcript if message.role is Role.USER)
        if index >= len(self.task.user_script):
            return Stop(reason='script finished')
        line = self.task.user_script[index]
        if STOP_TOKEN in line:
            return Stop()
        return Message.user(line, token_count=estimate_text_tokens(line))

    def flipped(self, transcript):
        """The user model sees the assistant as its interlocutor."""
        messages = [Message.system(self.system_prompt()), Message.user(OPENING_GREETING)]
        for message in transcript:
            if message.role is Role.USER:
                messages.append(Message.assistant(message.content))
            elif message.role is Role.ASSISTANT and message.content and not message.tool_calls:
                messages.append(Message.user(message.content))
        return messages

    def _model_turn(self, transcript):
        request = ChatRequest(
            messages=self.flipped(transcript),
            temperature=self.temperature,
            seed=self.seed,
            purpose=f'user:{self.task.id}',
        )
        response = self.gateway.chat(self.endpoint, request)
        self.elapsed_s += response.latency_s
        content = response.message.content.strip()
        if STOP_TOKEN in content:
            return Stop()
        if not content:
            logger.warning('User model returned an empty message for %s; ending the episode', self.task.id)
            return Stop(reason='empty user message')
        return Message.user(content, token_count=response.completion_tokens or estimate_text_tokens(content))


def simulate_user(sim, transcript) -> Message | Stop:
    """One user message consistent with the scenario, or Stop."""
    return sim.respond(list(transcript))
