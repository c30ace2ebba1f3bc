import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from environment.domain import load_domain, load_tasks  # noqa: E402
from models.run_config import RunConfig  # noqa: E402

RETAIL_DOMAIN = ROOT / 'data' / 'domains' / 'retail.json'
RETAIL_TASKS = ROOT / 'data' / 'tasks' / 'retail_tasks.json'


@pytest.fixture(scope='session')
def retail():
    return load_domain(RETAIL_DOMAIN)


@pytest.fixture(scope='session')
def retail_tasks():
    return load_tasks(RETAIL_TASKS)


@pytest.fixture
def tasks_by_id(retail_tasks):
    return {task.id: task for task in retail_tasks}


@pytest.fixture
def flagship_tasks(retail_tasks):
    return retail_tasks[:6]


@pytest.fixture
def make_config():
    def factory(**fields):
        return RunConfig(**fields)
    return factory
