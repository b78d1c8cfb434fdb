from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

from ..conic import ConicSettings
from ..violation import ViolationConfig

DAMPED_BFGS = "damped-bfgs"
EXACT_GERSHGORIN = "exact-gershgorin"
EXACT_MIRRORED = "exact-mirrored"
EXACT_MIN_FROBENIUS = "exact-min-frobenius"
HESSIAN_MODES = (DAMPED_BFGS, EXACT_GERSHGORIN, EXACT_MIRRORED, EXACT_MIN_FROBENIUS)


@dataclass(frozen=True)
class SqpConfig:
    eps_opt: float = 1e-4
    eps_feas: float = 1e-6
    s_phi: float = 2.0
    s_theta: float = 0.9
    delta: float = 1.0
    rho_armijo: float = 1e-4
    gamma_f: float = 1e-5
    gamma_theta: float = 1e-5
    eta: float = 1e-4
    rho_min: float = 0.01
    rho_max: float = 1.0
    alpha_min: float = 1e-4
    theta_min_factor: float = 1e-4
    theta_max_factor: float = 1e4
    max_iter: int = 100
    max_restoration_iter: int = 50
    hessian: str = DAMPED_BFGS
    hessian_init_scale: float = 1.0
    soc: bool = True
    violation: ViolationConfig = field(default_factory=ViolationConfig)
    subproblem_tol: float = 1e-9

    def __post_init__(self):
        positive = ("eps_opt", "eps_feas", "s_phi", "s_theta", "delta", "rho_armijo", "gamma_f",
                    "gamma_theta", "eta", "rho_min", "rho_max", "alpha_min", "theta_min_factor",
                    "theta_max_factor", "hessian_init_scale", "subproblem_tol")
        for name in positive:
            v = getattr(self, name)
            if not v > 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")
        if not self.s_theta < 1:
            raise ValueError("s_theta must lie in (0, 1)")
        if not self.rho_min < self.rho_max:
            raise ValueError("rho_min must be smaller than rho_max")
        if not self.alpha_min < 1 or not self.eta < 1:
            raise ValueError("alpha_min and eta must be below 1")
        if self.max_iter < 1 or self.max_restoration_iter < 1:
            raise ValueError("iteration limits must be positive")
        if self.hessian not in HESSIAN_MODES:
            raise ValueError(f"unknown hessian mode {self.hessian!r}; choose from {HESSIAN_MODES}")

    @property
    def exact_hessian(self) -> bool:
        return self.hessian != DAMPED_BFGS

    def conic_settings(self) -> ConicSettings:
        t = self.subproblem_tol
        return ConicSettings(tol_feas=t, tol_gap_abs=t, tol_gap_rel=t)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SqpConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("violation"), dict):
            data["violation"] = ViolationConfig(**data["violation"])
        return cls(**data)

    def with_(self, **changes) -> "SqpConfig":
        return replace(self, **changes)
