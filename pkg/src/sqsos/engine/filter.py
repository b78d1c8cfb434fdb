"""Filter bookkeeping and the acceptance tests of the line search."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import SqpConfig


@dataclass(frozen=True)
class Filter:
    """Non-dominated ``(f, theta)`` pairs plus an upper bound on the violation."""
    entries: tuple[tuple[float, float], ...] = ()
    theta_max: float = math.inf

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def filter_acceptable(f: float, theta: float, flt: Filter) -> bool:
    if theta >= flt.theta_max:
        return False
    return all(f < fl or theta < tl for fl, tl in flt.entries)


def dominates(a: tuple[float, float], b: tuple[float, float]) -> bool:
    """``a`` forbids at least the region ``b`` forbids."""
    return a[0] <= b[0] and a[1] <= b[1]


def augment_filter(flt: Filter, theta: float, f: float) -> Filter:
    new = (float(f), float(theta))
    if any(dominates(e, new) for e in flt.entries):
        return flt
    kept = tuple(e for e in flt.entries if not dominates(new, e))
    return Filter(tuple(sorted(kept + (new,))), flt.theta_max)


def f_type_switch(grad_dot_d: float, alpha: float, theta_k: float, cfg: SqpConfig) -> bool:
    if grad_dot_d >= 0:
        return False
    return alpha * (-grad_dot_d) ** cfg.s_phi > cfg.delta * theta_k**cfg.s_theta


def armijo(f_k: float, f_trial: float, grad_dot_d: float, alpha: float, cfg: SqpConfig) -> bool:
    return f_trial <= f_k + alpha * cfg.rho_armijo * grad_dot_d


def envelope_progress(theta_k: float, f_k: float, f_trial: float, theta_trial: float,
                      cfg: SqpConfig) -> bool:
    return theta_trial <= (1 - cfg.gamma_theta) * theta_k or f_trial <= f_k - cfg.gamma_f * theta_k


def restoration_penalty(theta_k: float, cfg: SqpConfig) -> float:
    if theta_k < 0:
        raise ValueError("violation must be nonnegative")
    if theta_k <= cfg.eps_feas:
        return cfg.rho_max
    return cfg.eps_feas / theta_k + cfg.rho_min
