"""
Shared enumerations.

String-valued so they serialize directly into scenario files, CSV columns
and the run manifest.
"""

import enum


class CostVariant(str, enum.Enum):
    """
    Phase-space ground costs.

    - PLAIN: |Δx|^p + |Δv|^p
    - ANISOTROPIC: λ|Δx|^p + |Δv|^p
    - QUADRATIC: (a|Δx|² + 2bΔx·Δv + c|Δv|²)^(p/2)
    - SHIFTED: λ|Δx − tΔv|^p + |Δv|^p (λ = 1 unless combined)
    """
    PLAIN = "plain"
    ANISOTROPIC = "anisotropic"
    QUADRATIC = "quadratic"
    SHIFTED = "shifted"


class SolverKind(str, enum.Enum):
    EXACT = "exact"
    ENTROPIC = "entropic"
    BRUTE_FORCE = "brute_force"


class WeightVariant(str, enum.Enum):
    """Decreasing weights Φ used by the nonlinear distance."""
    LOG_EPS = "log_eps"
    CAPPED_PHI = "capped_phi"


class SimMode(str, enum.Enum):
    FREE = "free"
    KERNEL = "kernel"
    POISSON = "poisson"


class PairKind(str, enum.Enum):
    """How the second initial ensemble is derived from the first."""
    VELOCITY_SHIFT = "velocity_shift"
    POSITION_SHIFT = "position_shift"
    RESAMPLE = "resample"


class BoundKind(str, enum.Enum):
    DOBRUSHIN = "dobrushin"
    IMPROVED_FREE_FLOW = "improved_free_flow"
    COMBINED = "combined"
    LOEPER_CLASSICAL = "loeper_classical"
    LOEPER_IMPROVED = "loeper_improved"
    R_OF_T = "R_of_t"
    GRONWALL = "gronwall"


class Verdict(str, enum.Enum):
    PASS = "pass"
    FAIL = "fail"
