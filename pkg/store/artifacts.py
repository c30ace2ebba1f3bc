"""JSONL stores and run manifests."""

import hashlib
import json
import logging
import platform
import threading
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from gateway.tokens import estimate_message_tokens
from gateway.wire import canonical_json
from models.conversation import Message, Role, Trajectory

logger = logging.getLogger(__name__)

MANIFEST_FILENAME = 'manifest.json'
TRAJECTORIES_FILENAME = 'trajectories.jsonl'
REPORTS_FILENAME = 'reports.jsonl'
ATTRIBUTIONS_FILENAME = 'attributions.jsonl'
SUBSETS_FILENAME = 'subsets.jsonl'
AGGREGATE_FILENAME = 'aggregate.json'
METRICS_FILENAME = 'metrics.json'

TRACKED_PACKAGES = ('openai', 'httpx', 'pydantic', 'jinja2', 'jsonschema', 'click', 'sqlalchemy', 'flask')

_write_locks = {}
_locks_guard = threading.Lock()


class ArtifactError(Exception):
    pass


class MissingArtifacts(ArtifactError):
    pass


class MixedManifests(ArtifactError):
    """Artifacts produced from different assets cannot be reported together."""


def _lock_for(path):
    with _locks_guard:
        return _write_locks.setdefault(str(Path(path).resolve()), threading.Lock())


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps(record, sort_keys=True, ensure_ascii=False) for record in records]
    with _lock_for(path):
        with open(path, 'w', encoding='utf-8') as f:
            for line in lines:
                f.write(line + '\n')
    return path


def read_jsonl(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifacts(f'{path} not found')
    records = []
    with open(path, encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise ArtifactError(f'{path}:{number}: {e.msg}') from e
    return records


def write_json(path, document):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with _lock_for(path):
        path.write_text(json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False) + '\n', encoding='utf-8')
    return path


def read_json(path):
    path = Path(path)
    if not path.exists():
        raise MissingArtifacts(f'{path} not found')
    return json.loads(path.read_text(encoding='utf-8'))


def write_trajectories(path, trajectories):
    return write_jsonl(path, [trajectory.to_dict() for trajectory in trajectories])


def _fill_token_counts(record):
    """Estimate counts an external log left out. Returns True when anything was estimated."""
    estimated = False
    messages = []
    for raw in record.get('messages', []):
        if raw.get('token_count') is None:
            raw = {**raw, 'token_count': estimate_message_tokens(Message.model_validate({**raw, 'token_count': 0}))}
            estimated = True
        messages.append(raw)
    record = {**record, 'messages': messages}
    if record.get('assistant_tokens') is None:
        record['assistant_tokens'] = sum(m['token_count'] for m in messages if m.get('role') == Role.ASSISTANT.value)
        estimated = True
    if record.get('overhead_tokens') is None:
        record['overhead_tokens'] = 0
        estimated = True
    return record, estimated


def read_trajectories(path):
    """Load trajectories, estimating token counts missing from external logs."""
    trajectories = []
    estimated_any = 0
    for record in read_jsonl(path):
        record, estimated = _fill_token_counts(record)
        estimated_any += estimated
        trajectories.append(Trajectory.from_dict(record))
    if estimated_any:
        logger.warning('%s: %d trajectories lacked token counts; estimated them', path, estimated_any)
    return trajectories


def file_hash(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def package_versions():
    versions = {'python': platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def _now():
    return datetime.now(timezone.utc).isoformat(timespec='seconds')


class RunManifest(BaseModel):
    """What produced an artifact directory: config, asset hashes, timestamps, versions."""

    model_config = ConfigDict(frozen=True)

    kind: str
    config: dict = Field(default_factory=dict)
    assets: dict[str, str] = Field(default_factory=dict)
    prompts_digest: Optional[str] = None
    started_at: str = Field(default_factory=_now)
    finished_at: Optional[str] = None
    versions: dict[str, Optional[str]] = Field(default_factory=package_versions)

    @classmethod
    def create(cls, kind, config=None, asset_paths=(), prompts=None):
        assets = {Path(path).name: file_hash(path) for path in asset_paths}
        return cls(
            kind=kind,
            config=config.snapshot() if config is not None else {},
            assets=dict(sorted(assets.items())),
            prompts_digest=prompts.digest() if prompts is not None else None,
        )

    @property
    def assets_hash(self):
        return hashlib.sha256(canonical_json({'assets': self.assets, 'prompts': self.prompts_digest})).hexdigest()

    @property
    def manifest_hash(self):
        """Identity of the run inputs; timestamps and tool versions are excluded."""
        return hashlib.sha256(canonical_json({
            'kind': self.kind, 'config': self.config, 'assets': self.assets, 'prompts': self.prompts_digest,
        })).hexdigest()

    def finished(self):
        return self.model_copy(update={'finished_at': _now()})

    def to_dict(self):
        return {**self.model_dump(mode='json'), 'manifest_hash': self.manifest_hash, 'assets_hash': self.assets_hash}


def write_manifest(out_dir, manifest):
    return write_json(Path(out_dir) / MANIFEST_FILENAME, manifest.to_dict())


def read_manifest(out_dir):
    data = read_json(Path(out_dir) / MANIFEST_FILENAME)
    data.pop('manifest_hash', None)
    data.pop('assets_hash', None)
    return RunManifest.model_validate(data)


def find_artifact_dirs(root):
    """Directories under root holding a manifest, sorted."""
    root = Path(root)
    if not root.exists():
        raise MissingArtifacts(f'{root} does not exist')
    found = sorted({path.parent for path in root.rglob(MANIFEST_FILENAME)})
    if not found:
        raise MissingArtifacts(f'no {MANIFEST_FILENAME} under {root}')
    return found


def check_same_assets(manifests):
    hashes = {manifest.assets_hash for manifest in manifests}
    if len(hashes) > 1:
        raise MixedManifests(f'artifacts come from {len(hashes)} different asset sets; report them separately')
    return hashes.pop() if hashes else None


def write_analyses(out_dir, analyses):
    """reports.jsonl, attributions.jsonl and subsets.jsonl for a batch of failure analyses."""
    out_dir = Path(out_dir)
    write_jsonl(out_dir / REPORTS_FILENAME,
                [report.to_dict() for analysis in analyses for report in analysis.reports])
    write_jsonl(out_dir / ATTRIBUTIONS_FILENAME, [analysis.attribution.to_dict() for analysis in analyses])
    write_jsonl(out_dir / SUBSETS_FILENAME, [analysis.subset_record() for analysis in analyses])
    return out_dir


def write_aggregate(out_dir, subsets, theta, chosen_k=None):
    document = {
        'theta': theta,
        'subsets': {domain: {**subset.to_dict(), 'label': subset.label} for domain, subset in sorted(subsets.items())},
    }
    if chosen_k is not None:
        document['memory_k_sweep_choice'] = chosen_k
    return write_json(Path(out_dir) / AGGREGATE_FILENAME, document)
