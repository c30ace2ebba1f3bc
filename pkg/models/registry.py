from datetime import datetime, timezone
from pathlib import Path

from sqlalchemy import Column, DateTime, Integer, String, Text, create_engine, func, select
from sqlalchemy.orm import declarative_base, sessionmaker

Base = declarative_base()

REGISTRY_FILENAME = 'runs.db'


def _utcnow():
    return datetime.now(timezone.utc).replace(tzinfo=None)


class RunRecord(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    kind = Column(String(32), nullable=False)  # run, analyze, mitigate, ablate-memory
    method = Column(String(32), nullable=True)
    domain = Column(String(64), nullable=True)
    out_dir = Column(Text, nullable=False)
    manifest_hash = Column(String(64), nullable=False)
    assets_hash = Column(String(64), nullable=False)
    trajectory_count = Column(Integer, default=0)
    failure_count = Column(Integer, default=0)
    status = Column(String(16), default='completed')
    created_at = Column(DateTime, default=_utcnow)

    def __repr__(self):
        return f'<RunRecord {self.kind} {self.method} {self.out_dir}>'

    def to_dict(self):
        return {
            'id': self.id,
            'kind': self.kind,
            'method': self.method,
            'domain': self.domain,
            'out_dir': self.out_dir,
            'manifest_hash': self.manifest_hash,
            'assets_hash': self.assets_hash,
            'trajectory_count': self.trajectory_count,
            'failure_count': self.failure_count,
            'status': self.status,
            'created_at': self.created_at.isoformat() if self.created_at else None,
        }


class RunRegistry:
    """SQLite index of every artifact-writing invocation under one artifact root."""

    def __init__(self, root):
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        self.path = root / REGISTRY_FILENAME
        self.engine = create_engine(f'sqlite:///{self.path}')
        Base.metadata.create_all(self.engine)
        self.Session = sessionmaker(bind=self.engine, expire_on_commit=False)

    def record(self, kind, manifest, out_dir, method=None, domain=None,
               trajectory_count=0, failure_count=0, status='completed'):
        with self.Session() as session:
            # re-running into the same directory replaces the previous entry
            existing = session.execute(
                select(RunRecord).filter_by(kind=kind, out_dir=str(out_dir), method=method)
            ).scalars().all()
            for record in existing:
                session.delete(record)
            record = RunRecord(
                kind=kind,
                method=method,
                domain=domain,
                out_dir=str(out_dir),
                manifest_hash=manifest.manifest_hash,
                assets_hash=manifest.assets_hash,
                trajectory_count=trajectory_count,
                failure_count=failure_count,
                status=status,
            )
            session.add(record)
            session.commit()
            return record

    def runs(self):
        with self.Session() as session:
            return session.execute(select(RunRecord).order_by(RunRecord.id)).scalars().all()

    def assets_hashes(self):
        with self.Session() as session:
            rows = session.execute(
                select(RunRecord.assets_hash, func.count(RunRecord.id)).group_by(RunRecord.assets_hash)
            ).all()
        return {assets_hash: count for assets_hash, count in rows}

    def dispose(self):
        self.engine.dispose()
