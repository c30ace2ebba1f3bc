import logging
import os
import threading
import time

import openai

from gateway.errors import ContextOverflow, MalformedToolCall, ProviderError, ProviderUnreachable
from gateway.scripted import ScriptedBackend
from gateway.tokens import estimate_tokens
from gateway.wire import ArgumentsParseError, build_payload, parse_response
from models.conversation import Message

logger = logging.getLogger(__name__)

REASK_TEMPLATE = (
    'Your previous call to tool {name!r} had arguments that are not a valid JSON object: {raw}. '
    'Issue the call again with a JSON object as arguments.'
)


def _api_base(base_url):
    base = base_url.rstrip('/')
    return base if base.endswith('/v1') else f'{base}/v1'


def _is_context_length_error(error):
    code = getattr(error, 'code', None) or ''
    text = str(error).lower()
    return code == 'context_length_exceeded' or 'maximum context length' in text or 'context length' in text


class Gateway:
    """Uniform chat interface over OpenAI-compatible HTTP endpoints and scripted backends.

    Safe for concurrent use; each request is independent.
    """

    def __init__(self, backends=None, http_client=None):
        self._backends = dict(backends or {})
        self._http_client = http_client
        self._clients = {}
        self._lock = threading.Lock()

    @classmethod
    def from_config(cls, config, http_client=None):
        backends = {name: ScriptedBackend.from_file(path, name=name) for name, path in config.scripts.items()}
        return cls(backends=backends, http_client=http_client)

    def register(self, name, backend):
        self._backends[name] = backend
        return backend

    def backend(self, name):
        return self._backends[name]

    def order_sensitive(self, endpoint):
        """Whether concurrent requests to endpoint could receive each other's replies."""
        if not endpoint.is_scripted:
            return False
        backend = self._backends.get(endpoint.script_name)
        return backend is not None and backend.positional

    def chat(self, endpoint, request):
        """Send one chat request; retries and the single corrective re-ask happen here."""
        self._check_budget(request)
        body, latency = self._send(endpoint, request)
        try:
            response = parse_response(body, request.messages)
        except ArgumentsParseError as e:
            logger.warning('Malformed tool-call arguments from %s (%s); re-asking once', endpoint.model, e.name)
            first_tokens = (body.get('usage') or {}).get('completion_tokens') or 0
            retry = request.appended(Message.system(REASK_TEMPLATE.format(name=e.name, raw=e.raw)))
            self._check_budget(retry)
            body, retry_latency = self._send(endpoint, retry)
            latency += retry_latency
            try:
                response = parse_response(body, retry.messages)
            except ArgumentsParseError as again:
                raise MalformedToolCall(str(again)) from again
            total = response.completion_tokens + first_tokens
            response = response.model_copy(update={
                'completion_tokens': total,
                'message': response.message.model_copy(update={'token_count': total}),
            })
        return response.model_copy(update={'latency_s': latency})

    def _check_budget(self, request):
        if request.context_budget is None:
            return
        estimated = estimate_tokens(request.messages)
        if estimated > request.context_budget:
            logger.warning('Context overflow for %s: %d > %d', request.purpose, estimated, request.context_budget)
            raise ContextOverflow(estimated, request.context_budget)

    def _send(self, endpoint, request):
        if endpoint.is_scripted:
            backend = self._backends.get(endpoint.script_name)
            if backend is None:
                raise ProviderError(f'No scripted backend registered as {endpoint.script_name!r}')
            return backend.complete(request, model=endpoint.model), backend.latency_s
        return self._send_http(endpoint, request)

    def _client_for(self, endpoint):
        key = (endpoint.base_url, endpoint.api_key_env, endpoint.timeout_s, endpoint.max_retries)
        with self._lock:
            client = self._clients.get(key)
            if client is None:
                client = openai.OpenAI(
                    base_url=_api_base(endpoint.base_url),
                    api_key=os.environ.get(endpoint.api_key_env) or 'EMPTY',
                    timeout=endpoint.timeout_s,
                    max_retries=endpoint.max_retries,
                    http_client=self._http_client,
                )
                self._clients[key] = client
            return client

    def _send_http(self, endpoint, request):
        client = self._client_for(endpoint)
        payload = build_payload(endpoint.model, request)
        start = time.perf_counter()
        try:
            completion = client.chat.completions.create(**payload)
        except openai.APIConnectionError as e:
            raise ProviderUnreachable(f'{endpoint.base_url} unreachable: {e}') from e
        except openai.BadRequestError as e:
            if _is_context_length_error(e):
                raise ContextOverflow(estimate_tokens(request.messages), request.context_budget or 0) from e
            raise ProviderError(str(e), status_code=e.status_code) from e
        except openai.APIStatusError as e:
            raise ProviderError(str(e), status_code=e.status_code) from e
        except openai.APIError as e:
            raise ProviderError(str(e)) from e
        return completion.model_dump(), time.perf_counter() - start
