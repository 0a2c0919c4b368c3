import json
import os
from datetime import datetime, timezone

from sqlalchemy import Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.orm import DeclarativeBase, Session, sessionmaker

import config


class Base(DeclarativeBase):
    pass


class RunRecord(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True)
    command = Column(String, nullable=False)
    config_digest = Column(String, nullable=False, index=True)
    config_path = Column(String, nullable=False)
    artifacts_json = Column(Text, nullable=False, default="[]")
    version = Column(String, nullable=False)
    duration_s = Column(Float, nullable=False, default=0.0)
    exit_code = Column(Integer, nullable=False, default=0)
    created_at = Column(DateTime, default=lambda: datetime.now(timezone.utc))


engine = create_engine(config.DATABASE_URL)
SessionLocal = sessionmaker(bind=engine)


def init_db():
    db_url = config.DATABASE_URL
    if db_url.startswith("sqlite:///"):
        db_path = db_url.replace("sqlite:///", "")
        os.makedirs(os.path.dirname(db_path) or ".", exist_ok=True)
    Base.metadata.create_all(engine)


def get_session() -> Session:
    return SessionLocal()


def record_run(manifest: dict, exit_code: int) -> int:
    """Store one CLI run from its manifest and return the row id."""
    init_db()
    session = get_session()
    run = RunRecord(
        command=manifest["command"],
        config_digest=manifest["config_digest"],
        config_path=manifest.get("config_path", ""),
        artifacts_json=json.dumps(manifest.get("artifacts", [])),
        version=manifest["version"],
        duration_s=manifest.get("duration_s", 0.0),
        exit_code=exit_code,
    )
    session.add(run)
    session.commit()
    run_id = run.id
    session.close()
    return run_id


def recent_runs(limit: int = 20) -> list[RunRecord]:
    init_db()
    session = get_session()
    runs = session.query(RunRecord).order_by(RunRecord.id.desc()).limit(limit).all()
    session.close()
    return runs
