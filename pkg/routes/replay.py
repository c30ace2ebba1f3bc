"""Chat-completions replay server backed by recorded request/response pairs."""

import json
import logging
from pathlib import Path

from flask import Blueprint, Flask, current_app, jsonify, request

from gateway.wire import canonical_json

logger = logging.getLogger(__name__)

replay_bp = Blueprint('replay', __name__)

REQUEST_SUFFIX = '.request.json'
RESPONSE_SUFFIX = '.response.json'


def request_key(payload):
    """Only the conversation, tools and tool choice decide which recording answers."""
    return canonical_json({
        'messages': payload.get('messages', []),
        'tools': payload.get('tools'),
        'tool_choice': payload.get('tool_choice'),
    })


def load_fixtures(fixture_dir):
    """{request key: (fixture name, response body)} for every *.request.json with a matching response."""
    fixture_dir = Path(fixture_dir)
    recordings = {}
    for request_path in sorted(fixture_dir.glob(f'*{REQUEST_SUFFIX}')):
        name = request_path.name[:-len(REQUEST_SUFFIX)]
        response_path = fixture_dir / f'{name}{RESPONSE_SUFFIX}'
        if not response_path.exists():
            logger.warning('Fixture %s has no recorded response; skipped', name)
            continue
        payload = json.loads(request_path.read_text(encoding='utf-8'))
        recordings[request_key(payload)] = (name, json.loads(response_path.read_text(encoding='utf-8')))
    logger.info('Loaded %d replay fixtures from %s', len(recordings), fixture_dir)
    return recordings


@replay_bp.route('/v1/chat/completions', methods=['POST'])
def chat_completions():
    payload = request.get_json(silent=True)
    if not isinstance(payload, dict):
        return jsonify({'error': {'message': 'Request body must be a JSON object', 'type': 'invalid_request_error'}}), 400
    recording = current_app.config['REPLAY_FIXTURES'].get(request_key(payload))
    if recording is None:
        logger.warning('No recording matches a request with %d messages', len(payload.get('messages', [])))
        return jsonify({'error': {'message': 'No recorded response for this request', 'type': 'not_found'}}), 404
    name, body = recording
    logger.debug('Replaying fixture %s', name)
    return jsonify(body)


@replay_bp.route('/v1/models', methods=['GET'])
def list_models():
    models = sorted({body.get('model', 'replay-model') for _, body in current_app.config['REPLAY_FIXTURES'].values()})
    return jsonify({'object': 'list', 'data': [{'id': model, 'object': 'model'} for model in models]})


def create_app(fixture_dir):
    app = Flask(__name__)
    app.config['REPLAY_FIXTURES'] = load_fixtures(fixture_dir)
    app.register_blueprint(replay_bp)

    @app.errorhandler(404)
    def not_found(error):
        return jsonify({'error': {'message': 'Endpoint not found', 'type': 'not_found'}}), 404

    @app.errorhandler(500)
    def internal_error(error):
        return jsonify({'error': {'message': 'Internal server error', 'type': 'server_error'}}), 500

    return app
