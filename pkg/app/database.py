import logging
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker, declarative_base

from app.config import get_settings

logger = logging.getLogger(__name__)

# ------------------------------
# Create engine
# ------------------------------
settings = get_settings()
DATABASE_URL = settings.database_url

# Use SQLite locally if DATABASE_URL points to sqlite
if DATABASE_URL.startswith("sqlite"):
    engine = create_engine(DATABASE_URL, connect_args={"check_same_thread": False}, echo=settings.database_echo)
else:
    # PostgreSQL or any other server database
    engine = create_engine(
        DATABASE_URL,
        echo=settings.database_echo,
        pool_size=5,
        max_overflow=10,
        pool_pre_ping=True,
        pool_timeout=30
    )

# ------------------------------
# ORM Session and Base
# ------------------------------
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()

# ------------------------------
# Initialize Database
# ------------------------------
def init_db(bind=None):
    """Create all tables in the database."""
    from app import models  # noqa: F401  registers the tables on Base

    try:
        Base.metadata.create_all(bind=bind or engine)
    except Exception as e:
        logger.warning("DB init failed: %s", e)
