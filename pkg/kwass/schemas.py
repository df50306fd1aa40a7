"""
Pydantic Schemas for Scenario Validation

These schemas define the structure of scenario files (TOML or JSON).
Pydantic validates types and ranges; a failing field is reported with its
dotted path, e.g. `sim.dt`. The full schema is documented in
kwass/scenarios/README.md.
"""

from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from kwass.config import settings
from kwass.fields import KernelSpec, make_kernel
from kwass.measures import CostSpec
from kwass.models import BoundKind, CostVariant, PairKind, SimMode, SolverKind, WeightVariant
from kwass.transport import WeightFunction


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelConfig(_Section):
    """
    Interaction kernel by registry name.

    - zero: no interaction
    - single_mode: needs B
    - sum_of_modes: needs coeffs
    """
    name: Literal["zero", "single_mode", "sum_of_modes"] = "zero"
    B: Optional[float] = Field(None, ge=0.0)
    coeffs: Optional[List[float]] = None

    @model_validator(mode="after")
    def _check_params(self) -> "KernelConfig":
        if self.name == "single_mode" and self.B is None:
            raise ValueError("single_mode kernel needs B")
        if self.name == "sum_of_modes" and not self.coeffs:
            raise ValueError("sum_of_modes kernel needs coeffs")
        return self

    def build(self) -> KernelSpec:
        if self.name == "single_mode":
            return make_kernel("single_mode", B=self.B)
        if self.name == "sum_of_modes":
            return make_kernel("sum_of_modes", coeffs=self.coeffs)
        return make_kernel("zero")


class InitialData(_Section):
    """
    Initial ensemble μ₀: positions with density 1 + alpha·cos(2π·k·x₁),
    velocities Gaussian with mean v_mean and standard deviation v_std.
    """
    d: int = Field(1, ge=1, le=3)
    alpha: float = Field(0.0, ge=0.0, lt=1.0)
    k: int = Field(1, ge=1)
    v_mean: float = 0.0
    v_std: float = Field(1.0, ge=0.0)


class SimConfig(_Section):
    """
    Time integration of one ensemble or a pair.

    `eps` and `grid` are used in poisson mode only; `kernel` in kernel mode.
    """
    mode: SimMode = SimMode.FREE
    N: int = Field(1000, ge=1, le=100_000)
    dt: float = Field(0.01, gt=0.0)
    t_end: float = Field(1.0, ge=0.0)
    integrator: Literal["leapfrog"] = "leapfrog"
    eps: float = Field(1.0, gt=0.0)
    grid: int = Field(64, ge=4)
    kernel: KernelConfig = KernelConfig()
    seed: int = 0
    snap_every: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_mode(self) -> "SimConfig":
        if self.mode == SimMode.POISSON and self.eps > 1.0:
            raise ValueError(f"poisson mode requires eps <= 1 (got {self.eps})")
        return self


class PairSpec(_Section):
    """
    How ν₀ derives from μ₀.

    - velocity_shift: v ← v + delta (every component)
    - position_shift: x ← x + delta (every component, wrapped)
    - resample: an independent draw with seed `seed` (default sim.seed + 1)
    """
    kind: PairKind = PairKind.VELOCITY_SHIFT
    delta: float = 1e-3
    seed: Optional[int] = None


class DistanceSpec(_Section):
    """
    A distance measured at every snapshot.

    For the shifted variant the shift time is the snapshot time. Setting
    `weight` measures the nonlinear distance W_{Φ,p} instead (plain cost).
    """
    variant: CostVariant = CostVariant.PLAIN
    p: float = Field(1.0, ge=1.0)
    lam: float = Field(1.0, gt=0.0)
    a: float = 1.0
    b: float = 0.0
    c: float = 1.0
    solver: Optional[SolverKind] = None
    eta: Optional[float] = Field(None, gt=0.0)
    weight: Optional[WeightVariant] = None

    @model_validator(mode="after")
    def _check_cost(self) -> "DistanceSpec":
        self.cost(0.0)
        return self

    def cost(self, t: float) -> CostSpec:
        if self.variant == CostVariant.ANISOTROPIC:
            return CostSpec.anisotropic(self.lam, self.p)
        if self.variant == CostVariant.QUADRATIC:
            return CostSpec.quadratic(self.a, self.b, self.c, self.p)
        if self.variant == CostVariant.SHIFTED:
            return CostSpec.shifted(t, self.p, self.lam)
        return CostSpec.plain(self.p)

    def weight_function(self, eps: float) -> Optional[WeightFunction]:
        if self.weight is None:
            return None
        return WeightFunction(variant=self.weight, eps=eps)

    @property
    def column(self) -> str:
        """CSV column name, unique per distance spec."""
        if self.weight is not None:
            return f"W{self.p:g}_{self.weight.value}"
        if self.variant == CostVariant.SHIFTED:
            label = f"lam={self.lam:g}" if self.lam != 1.0 else ""
        else:
            label = self.cost(0.0).params_label()
        base = f"W{self.p:g}_{self.variant.value}"
        return f"{base}[{label}]" if label else base


class BoundSpec(_Section):
    """
    A bound curve evaluated on the snapshot times.

    Missing constants fall back to the run: B from the kernel, eps from the
    simulation, C_d and c0 from settings. `verify` includes the curve in the
    verdict.
    """
    kind: BoundKind
    B: Optional[float] = Field(None, ge=0.0)
    C: float = Field(1.0, gt=0.0)
    c_d: float = Field(1.0, gt=0.0)
    C_d: Optional[float] = Field(None, gt=0.0)
    c0: Optional[float] = Field(None, gt=0.0)
    allowance: Optional[float] = Field(None, ge=0.0)
    verify: bool = True

    @property
    def constants(self) -> dict:
        return {
            "C_d": settings.C_D if self.C_d is None else self.C_d,
            "c0": settings.C0 if self.c0 is None else self.c0,
        }


class SweepSpec(_Section):
    eps: List[float] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_eps(self) -> "SweepSpec":
        for e in self.eps:
            if not 0.0 < e <= 1.0:
                raise ValueError(f"sweep eps values must lie in (0, 1] (got {e})")
        return self


class Scenario(_Section):
    """Complete experiment: simulate a pair, measure distances, evaluate and verify bounds."""
    name: str
    description: str = ""
    sim: SimConfig = SimConfig()
    initial: InitialData = InitialData()
    pair: PairSpec = PairSpec()
    distances: List[DistanceSpec] = Field(default_factory=lambda: [DistanceSpec()])
    bounds: List[BoundSpec] = Field(default_factory=list)
    sweep: Optional[SweepSpec] = None
    output: Optional[str] = None
    bootstrap: bool = True
