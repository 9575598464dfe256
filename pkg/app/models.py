from sqlalchemy import Column, Integer, String, Float, DateTime, Text
from datetime import datetime
from app.database import Base


class SimulationRun(Base):
    """One invocation of run / gamma-sweep / gibbs-sweep / verify."""
    __tablename__ = "simulation_runs"
    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, nullable=False, index=True)  # run, gamma-sweep, gibbs-sweep, verify
    scenario = Column(String, nullable=True)
    config_hash = Column(String, nullable=False, index=True)
    config_json = Column(Text, nullable=False)
    status = Column(String, default="running", index=True)  # running, completed, failed
    output_dir = Column(String, nullable=True)
    steps = Column(Integer, nullable=True)
    energy_initial = Column(Float, nullable=True)
    energy_final = Column(Float, nullable=True)
    message = Column(Text, nullable=True)
    created_at = Column(DateTime, default=datetime.utcnow)
    finished_at = Column(DateTime, nullable=True)
