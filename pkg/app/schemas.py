import hashlib
from datetime import datetime
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import get_settings

# ============ Grid ============

class GridSpec(BaseModel):
    """Tensor-product Neumann grid on the box [0, L_1] x ... x [0, L_dim]."""

    model_config = ConfigDict(frozen=True)

    dim: int = Field(2, ge=1, le=3)
    lengths: Tuple[float, ...] = (1.0, 1.0)
    counts: Tuple[int, ...] = (128, 128)

    @model_validator(mode="after")
    def _check_axes(self):
        if len(self.lengths) != self.dim or len(self.counts) != self.dim:
            raise ValueError(f"lengths and counts must have {self.dim} entries")
        if any(n < 8 for n in self.counts):
            raise ValueError("every axis needs at least 8 nodes")
        if any(not np.isfinite(L) or L <= 0 for L in self.lengths):
            raise ValueError("domain lengths must be positive")
        return self

    @classmethod
    def create(cls, counts, lengths=None) -> "GridSpec":
        counts = tuple(int(n) for n in np.atleast_1d(counts))
        if lengths is None:
            lengths = (1.0,) * len(counts)
        lengths = tuple(float(L) for L in np.atleast_1d(lengths))
        if len(lengths) == 1 and len(counts) > 1:
            lengths = lengths * len(counts)
        return cls(dim=len(counts), lengths=lengths, counts=counts)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.counts)

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> Tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def axis_nodes(self, axis: int) -> np.ndarray:
        """Cosine-collocation nodes x_j = L (j + 1/2) / N along one axis."""
        n, L = self.counts[axis], self.lengths[axis]
        return L * (np.arange(n) + 0.5) / n

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*(self.axis_nodes(a) for a in range(self.dim)), indexing="ij"))

    def refined(self, factor: int) -> "GridSpec":
        return GridSpec(dim=self.dim, lengths=self.lengths, counts=tuple(n * factor for n in self.counts))

# ============ Enumerations ============

class Scenario(str, Enum):
    profile_1d = "profile_1d"
    stripe_2d = "stripe_2d"
    circle_2d = "circle_2d"
    random_2d = "random_2d"


class SurfaceTensionMode(str, Enum):
    paper_cw = "PaperCW"
    modica_mortola = "ModicaMortola"

# ============ Run configuration ============

class RunConfig(BaseModel):
    scenario: Scenario = Scenario.circle_2d
    grid: GridSpec = GridSpec()
    eps: float = Field(0.05, gt=0.0, lt=1.0)
    tau: float = Field(1e-4, gt=0.0)
    s: float = Field(1.0, ge=1.0)
    t_end: float = Field(0.01, gt=0.0)
    surface_tension: SurfaceTensionMode = SurfaceTensionMode.modica_mortola

    # Tolerances (defaults from PHASEFIELD_* settings)
    tol_newton: float = Field(default_factory=lambda: get_settings().tol_newton, gt=0.0)
    max_newton_iters: int = Field(default_factory=lambda: get_settings().max_newton_iters, ge=1)
    ledger_tol: float = Field(default_factory=lambda: get_settings().ledger_tol, ge=0.0)
    mean_tol: float = Field(default_factory=lambda: get_settings().mean_tol, gt=0.0)
    max_retries: int = Field(default_factory=lambda: get_settings().max_retries, ge=0)

    # Output
    output_dir: str = Field(default_factory=lambda: get_settings().output_dir)
    snapshot_every: Optional[int] = Field(100, ge=1)   # steps
    snapshot_interval: Optional[float] = Field(None, gt=0.0)  # simulated time
    diagnostics_every: int = Field(10, ge=1)
    seed: int = 0

    # Scenario geometry
    radius: float = Field(0.2, gt=0.0)
    stripe_halfwidth: float = Field(0.2, gt=0.0)
    center: Optional[Tuple[float, ...]] = None
    sigma0: float = 0.0
    random_amplitude: float = Field(0.1, ge=0.0)
    dealias: bool = False

    @model_validator(mode="after")
    def _check_scenario(self):
        if self.scenario == Scenario.profile_1d and self.grid.dim != 1:
            raise ValueError("scenario profile_1d needs a 1D grid")
        if self.scenario != Scenario.profile_1d and self.grid.dim != 2:
            raise ValueError(f"scenario {self.scenario.value} needs a 2D grid")
        if self.center is not None and len(self.center) != self.grid.dim:
            raise ValueError("center must have one coordinate per axis")
        return self

    def config_hash(self) -> str:
        payload = self.model_dump_json(exclude={"output_dir"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]

# ============ Ledger / energies ============

class EnergyBreakdown(BaseModel):
    m_eps: float
    m_gradient: float
    m_potential: float
    f_coupling: float
    f_sigma_l2: float
    f_as: float
    total: float


class AprioriBounds(BaseModel):
    sigma_hs_squared: float
    m_eps: float
    u_l4_fourth: float
    dissipation_total: float


class StepReport(BaseModel):
    t: float
    tau: float
    energy_before: float
    energy_after: float
    diss_sigma: float
    diss_phi: float
    newton_iters_sigma: int
    newton_iters_phi: int
    residual_sigma: float
    residual_phi: float


class LedgerRow(BaseModel):
    config_hash: str
    step: int
    t: float
    E_eps: float
    M_eps: float
    F: float
    diss_sigma_cum: float
    diss_phi_cum: float
    mean_phi: float
    mean_sigma: float
    newton_iters: int
    residual_sigma: float
    residual_phi: float


class DiagnosticsRow(BaseModel):
    config_hash: str
    t: float
    R: Optional[float] = None
    contour_length: Optional[float] = None
    kappa_mean: Optional[float] = None
    v_mean: Optional[float] = None
    coef: Optional[float] = None
    equipartition_defect: Optional[float] = None
    energy_density: Optional[float] = None
    bulk_residual: Optional[float] = None
    theta: Optional[float] = None
    regime: Optional[str] = None


class OracleRow(BaseModel):
    config_hash: str
    t: float
    R: float
    jump: float
    R_dot_oracle: float
    R_dot_measured: Optional[float] = None
    relative_gap: Optional[float] = None
    energy_rate_sharp: Optional[float] = None
    energy_rate_measured: Optional[float] = None
    energy_rate_gap: Optional[float] = None

# ============ Campaign reports ============

class RunSummary(BaseModel):
    config_hash: str
    output_dir: str
    steps: int
    retries: int
    energy_initial: float
    energy_final: float
    dissipation_total: float
    mean_drift: float
    wall_time: float
    gibbs_thomson_correlation: Optional[float] = None


class SweepRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    eps_list: List[float] = Field(default_factory=lambda: [0.08, 0.04, 0.02, 0.01], min_length=1)


class GammaSweepRow(BaseModel):
    config_hash: str
    eps: float
    n: int
    E_eps: float
    M_eps: float
    E0_modica_mortola: float
    E0_paper_cw: float
    gap_modica_mortola: float
    gap_paper_cw: float
    ratio: float


class GammaSweepReport(BaseModel):
    scenario: Scenario
    rows: List[GammaSweepRow]
    converging: Optional[bool] = None  # None when a single eps was requested
    message: str


class GibbsSweepRow(BaseModel):
    config_hash: str
    eps: float
    n: int
    coef: float
    kappa_mean: float
    v_mean: float
    cauchy_difference: Optional[float] = None
    relative_to_modica_mortola_half: float
    relative_to_paper_cw: float
    bulk_residual: Optional[float] = None


class GibbsSweepReport(BaseModel):
    rows: List[GibbsSweepRow]
    cauchy_decreasing: Optional[bool] = None
    message: str


class VerificationCheck(BaseModel):
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


class VerifyReport(BaseModel):
    config_hash: str
    passed: bool
    checks: List[VerificationCheck]

# ============ Run registry ============

class RunOut(BaseModel):
    id: int
    command: str
    scenario: Optional[str] = None
    config_hash: str
    status: str
    output_dir: Optional[str] = None
    steps: Optional[int] = None
    energy_initial: Optional[float] = None
    energy_final: Optional[float] = None
    message: Optional[str] = None
    created_at: datetime
    finished_at: Optional[datetime] = None

    class Config:
        from_attributes = True
