"""Runs router - schedules minimizing-movement runs and lists the run registry."""

import logging
from typing import List

from fastapi import APIRouter, BackgroundTasks, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from app.dependencies import get_db, get_session_factory
from app.models import SimulationRun
from app.schemas import RunConfig, RunOut
from app.services.campaigns import cmd_run, register_run, run_directory
from app.services.errors import PhaseFieldError

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/runs", tags=["Runs"])


def _execute_run(run_id: int, config: RunConfig, session_factory) -> None:
    db = session_factory()
    try:
        row = db.query(SimulationRun).filter(SimulationRun.id == run_id).first()
        cmd_run(config, db, registry=row)
    except PhaseFieldError as exc:
        # cmd_run already marked the registry row as failed
        logger.warning("background run %d failed: %s", run_id, exc)
    finally:
        db.close()


@router.post("/", response_model=RunOut, status_code=202)
def create_run(
    config: RunConfig,
    background_tasks: BackgroundTasks,
    db: Session = Depends(get_db),
    session_factory=Depends(get_session_factory),
):
    """Register a run and execute it in the background."""
    row = register_run(db, "run", config, str(run_directory(config)))
    background_tasks.add_task(_execute_run, row.id, config, session_factory)
    return row


@router.get("/", response_model=List[RunOut])
def list_runs(
    db: Session = Depends(get_db),
    status: str = Query(None, description="Filter by status: running, completed, failed"),
    command: str = Query(None, description="Filter by command: run, gamma-sweep, gibbs-sweep, verify"),
    limit: int = Query(100, ge=1, le=1000),
):
    """Registry entries, newest first."""
    query = db.query(SimulationRun)
    if status:
        query = query.filter(SimulationRun.status == status)
    if command:
        query = query.filter(SimulationRun.command == command)
    return query.order_by(SimulationRun.id.desc()).limit(limit).all()


@router.get("/{run_id}", response_model=RunOut)
def get_run(run_id: int, db: Session = Depends(get_db)):
    run = db.query(SimulationRun).filter(SimulationRun.id == run_id).first()
    if not run:
        raise HTTPException(status_code=404, detail="Run not found")
    return run
