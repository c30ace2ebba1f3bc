"""Episode reward and ideal-process alignment."""

import re
from dataclasses import dataclass

from environment.domain import db_hash, replay_actions
from models.conversation import Role, canonical_args

_SHA256 = re.compile(r'^[0-9a-f]{64}$')


def normalize_output(text):
    """Case-insensitive, thousands separators removed."""
    return text.replace(',', '').casefold()


def outputs_found(trajectory, expected_outputs):
    said = [normalize_output(message.content) for message in trajectory.messages
            if message.role is Role.ASSISTANT and message.content]
    return [any(normalize_output(output) in text for text in said) for output in expected_outputs]


def expected_db_hash(domain, task):
    if task.expected_state is None:
        return None
    if _SHA256.match(task.expected_state):
        return task.expected_state
    return db_hash(replay_actions(domain, task).db)


@dataclass(frozen=True)
class RewardBreakdown:
    reward: int
    state_match: bool | None
    outputs: list


def evaluate(state, trajectory, task):
    expected = expected_db_hash(state.domain, task)
    state_match = None if expected is None else state.db_hash() == expected
    found = outputs_found(trajectory, task.expected_outputs)
    ok = state_match is not False and all(found)
    return RewardBreakdown(reward=int(ok), state_match=state_match, outputs=found)


def compute_reward(state, trajectory, task):
    """1 iff the end state matches the ideal replay (when checked) and every expected output was said."""
    return evaluate(state, trajectory, task).reward


def align_process(trajectory, task):
    """Length of the longest prefix of the ideal actions found, in order, among the executed calls."""
    ideal = [(action.name, canonical_args(action.arguments)) for action in task.ideal_actions]
    matched = 0
    for call in trajectory.executed_calls():
        if matched == len(ideal):
            break
        if (call.name, canonical_args(call.arguments)) == ideal[matched]:
            matched += 1
    return matched
