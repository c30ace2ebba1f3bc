"""Prompt templates shipped with the harness, overridable from a config directory."""

import hashlib
import json
from pathlib import Path

from jinja2 import ChoiceLoader, Environment, FileSystemLoader, StrictUndefined

PROMPT_DIR = Path(__file__).resolve().parent
TEMPLATE_SUFFIXES = ('.j2', '.txt')


def _pretty_json(value):
    return json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False)


class PromptLibrary:
    """Renders named templates; files in override_dir shadow the shipped ones."""

    def __init__(self, override_dir=None):
        self.override_dir = Path(override_dir) if override_dir else None
        search = [str(self.override_dir)] if self.override_dir else []
        search.append(str(PROMPT_DIR))
        self.env = Environment(
            loader=ChoiceLoader([FileSystemLoader(path) for path in search]),
            undefined=StrictUndefined,
            trim_blocks=True,
            lstrip_blocks=True,
            autoescape=False,
        )
        self.env.filters['pretty_json'] = _pretty_json

    def render(self, name, **context):
        return self.env.get_template(name).render(**context).strip()

    def source(self, name):
        source, _, _ = self.env.loader.get_source(self.env, name)
        return source

    def names(self):
        return sorted(name for name in self.env.list_templates() if name.endswith(TEMPLATE_SUFFIXES))

    def digest(self):
        """Content hash of the effective template set, overrides included."""
        digest = hashlib.sha256()
        for name in self.names():
            digest.update(name.encode('utf-8'))
            digest.update(self.source(name).encode('utf-8'))
        return digest.hexdigest()


_default = None


def default_library():
    global _default
    if _default is None:
        _default = PromptLibrary()
    return _default


def library_for(config):
    if config is not None and config.prompt_dir:
        return PromptLibrary(config.prompt_dir)
    return default_library()
