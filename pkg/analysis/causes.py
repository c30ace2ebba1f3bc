from dataclasses import dataclass

from models.analysis import ErrorCategory
from prompts import default_library


@dataclass(frozen=True)
class CauseCatalog:
    category: ErrorCategory
    title: str
    definition: str
    causes: tuple[str, ...]

    def cause(self, cause_id):
        """Causes are numbered from 1."""
        return self.causes[cause_id - 1]

    def valid_ids(self, cause_ids):
        ids = set()
        for value in cause_ids:
            try:
                value = int(value)
            except (TypeError, ValueError):
                continue
            if 1 <= value <= len(self.causes):
                ids.add(value)
        return sorted(ids)


def parse_cause_file(category, text):
    title = category.title
    definition, causes = [], []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            title = line.lstrip('#').strip() or title
        elif line.startswith('- '):
            causes.append(line[2:].strip())
        else:
            definition.append(line)
    return CauseCatalog(category=category, title=title, definition='\n'.join(definition), causes=tuple(causes))


def load_cause_catalog(category, prompts=None):
    category = ErrorCategory(category)
    prompts = prompts or default_library()
    return parse_cause_file(category, prompts.source(f'causes/{category.value}.txt'))


def load_all(prompts=None):
    return {category: load_cause_catalog(category, prompts) for category in ErrorCategory}
