from typing import Optional

from fastapi import APIRouter, Depends, HTTPException, Query
from sqlalchemy.orm import Session

from app.dependencies import get_db
from app.schemas import RunConfig, VerifyReport
from app.services.campaigns import cmd_verify
from app.services.errors import PhaseFieldError

router = APIRouter(prefix="/verify", tags=["Verification"])


@router.post("/", response_model=VerifyReport)
def verify(
    config: Optional[RunConfig] = None,
    steps: int = Query(20, ge=1, le=1000),
    db: Session = Depends(get_db),
):
    """Run the invariant suite; the report lists every check with value and threshold."""
    try:
        return cmd_verify(config, db, steps=steps)
    except PhaseFieldError as exc:
        raise HTTPException(status_code=422, detail=str(exc))
