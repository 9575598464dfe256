"""Sweeps router - eps sweeps for the energy limit and the Gibbs-Thomson coefficient."""

from fastapi import APIRouter, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from app.dependencies import get_db
from app.schemas import GammaSweepReport, GibbsSweepReport, SweepRequest
from app.services.campaigns import cmd_gamma_sweep, cmd_gibbs_sweep
from app.services.errors import PhaseFieldError

router = APIRouter(prefix="/sweeps", tags=["Sweeps"])


@router.post("/gamma", response_model=GammaSweepReport)
def gamma_sweep(
    request: SweepRequest,
    db: Session = Depends(get_db),
    max_workers: int = Query(1, ge=1, le=32),
):
    """Recovery-sequence energies against both sharp-limit constants."""
    try:
        return cmd_gamma_sweep(request.config, request.eps_list, db, max_workers=max_workers)
    except PhaseFieldError as exc:
        raise HTTPException(status_code=422, detail=str(exc))


@router.post("/gibbs", response_model=GibbsSweepReport)
def gibbs_sweep(
    request: SweepRequest,
    db: Session = Depends(get_db),
    max_workers: int = Query(1, ge=1, le=32),
):
    """Measured Gibbs-Thomson coefficient per eps (circle_2d only)."""
    try:
        return cmd_gibbs_sweep(request.config, request.eps_list, db, max_workers=max_workers)
    except PhaseFieldError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
