import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from app import __version__
from app.config import get_settings
from app.database import init_db
from app.routers import runs, sweeps, verify

settings = get_settings()


def configure_logging(level: str = settings.log_level) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# ------------------------------
# Lifespan: logging + DB init
# ------------------------------
@asynccontextmanager
async def lifespan(app: FastAPI):
    configure_logging()
    init_db()
    logging.getLogger(__name__).info("phase-field lab API started (output dir %s)", settings.output_dir)
    yield


# ------------------------------
# FastAPI App
# ------------------------------
app = FastAPI(title="Phase-Field Gradient Flow Lab", version=__version__, lifespan=lifespan)


# ------------------------------
# CORS
# ------------------------------
app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.allowed_origins,
    allow_credentials=True,
    allow_methods=["GET", "POST"],
    allow_headers=["*"],
)


# ------------------------------
# API Routers (/api)
# ------------------------------
app.include_router(runs.router, prefix="/api")
app.include_router(sweeps.router, prefix="/api")
app.include_router(verify.router, prefix="/api")


@app.get("/api/health")
def health():
    return {"status": "ok", "version": __version__}
