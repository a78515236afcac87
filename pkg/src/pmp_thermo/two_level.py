"""Closed-form optimal isotherms and the maximum-power engine for a driven two-level system.

The system has Hamiltonian u(t)|1><1| and relaxes toward the instantaneous
Gibbs state of the active bath at total rate gamma.  Along a rate-optimal
arc the excited population p, the costate scalar q and the control u are
linked algebraically through the conserved emission rate K <= 0.  All arcs
are parametrized by x = exp(beta*u/2); durations and heats follow from the
implicit integrals chi(x) and xi(x), so no ODE is ever solved here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize_scalar

__all__ = [
    "Baths",
    "Branch",
    "COLD",
    "HOT",
    "COLD_NEG",
    "HOT_NEG",
    "EngineSolution",
    "IsothermSegment",
    "NoJumpPoints",
    "SolverError",
    "DirectionViolation",
    "mu",
    "isotherm_p",
    "isotherm_x_of_p",
    "isotherm_u_of_p",
    "isotherm_q_of_p",
    "chi",
    "xi",
    "isotherm_time",
    "isotherm_heat",
    "quasi_static_heat",
    "binary_entropy",
    "adiabatic_f",
    "adiabatic_f_min",
    "find_jump_points",
    "tangency_residual",
    "solve_engine",
    "engine_residuals",
    "lambert_w0",
    "asymptotic_limit",
    "make_segment",
    "segment_from_populations",
]


class NoJumpPoints(Exception):
    """No admissible branch-switch populations exist at this K."""


class SolverError(Exception):
    """Engine solver failed to converge; carries the final residuals."""

    def __init__(self, message: str, residuals: tuple[float, float] | None = None):
        super().__init__(message)
        self.residuals = residuals


class DirectionViolation(ValueError):
    """Segment endpoints ordered against the flow direction of its branch."""


@dataclass(frozen=True)
class Baths:
    """Two-reservoir setting: inverse temperatures and the total coupling rate."""

    beta_c: float = 1.0
    beta_h: float = 0.3
    gamma: float = 1.0

    def __post_init__(self):
        if not (self.beta_c >= self.beta_h > 0.0):
            raise ValueError(f"need beta_c >= beta_h > 0, got {self.beta_c}, {self.beta_h}")
        if not self.gamma > 0.0:
            raise ValueError(f"total rate must be positive, got {self.gamma}")

    @property
    def z(self) -> float:
        return self.beta_h / self.beta_c

    def beta(self, kind: str) -> float:
        if kind == "cold":
            return self.beta_c
        if kind == "hot":
            return self.beta_h
        raise ValueError(f"unknown bath kind {kind!r}")

    @classmethod
    def from_ratio(cls, z: float, beta_c: float = 1.0, gamma: float = 1.0) -> "Baths":
        if not 0.0 < z < 1.0:
            raise ValueError(f"temperature ratio must lie in (0, 1), got {z}")
        return cls(beta_c=beta_c, beta_h=z * beta_c, gamma=gamma)


@dataclass(frozen=True)
class Branch:
    """Arc type: which bath is active and the sign of the admissible gap."""

    kind: str  # "cold" | "hot"
    gap_sign: str = "nonneg"  # "nonneg" | "neg"

    def __post_init__(self):
        if self.kind not in ("cold", "hot"):
            raise ValueError(f"branch kind must be 'cold' or 'hot', got {self.kind!r}")
        if self.gap_sign not in ("nonneg", "neg"):
            raise ValueError(f"gap_sign must be 'nonneg' or 'neg', got {self.gap_sign!r}")

    @property
    def mu_sign(self) -> float:
        # cold carries mu < 0 and hot mu > 0 for non-negative gaps; swapped otherwise
        s = -1.0 if self.kind == "cold" else +1.0
        return s if self.gap_sign == "nonneg" else -s


COLD = Branch("cold")
HOT = Branch("hot")
COLD_NEG = Branch("cold", "neg")
HOT_NEG = Branch("hot", "neg")


def mu(K: float, beta: float, branch: Branch, gamma: float = 1.0) -> float:
    """Dimensionless rate parameter of an optimal arc, mu = sign * sqrt(-beta*K/gamma)."""
    if K > 0.0:
        raise ValueError(f"conserved rate must satisfy K <= 0, got {K}")
    if beta <= 0.0 or gamma <= 0.0:
        raise ValueError("beta and gamma must be positive")
    return branch.mu_sign * math.sqrt(-beta * K / gamma)


def isotherm_p(x: float, mu_val: float) -> float:
    """Excited population along an optimal arc, p = (1 - mu*x) / (1 + x^2)."""
    if x <= 0.0:
        raise ValueError(f"x = exp(beta*u/2) must be positive, got {x}")
    p = (1.0 - mu_val * x) / (1.0 + x * x)
    if p < -1e-12 or p > 1.0 + 1e-12:
        raise ValueError(f"population {p} outside [0, 1]: x={x} beyond the admissible range")
    return min(max(p, 0.0), 1.0)


def isotherm_x_of_p(p: float, mu_val: float) -> float:
    """Invert the arc population relation; unique positive root of p*x^2 + mu*x + p - 1 = 0."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"inversion is singular at p in {{0, 1}}, got p={p}")
    delta = math.sqrt(mu_val * mu_val + 4.0 * p * (1.0 - p))
    if mu_val <= 0.0:
        return (delta - mu_val) / (2.0 * p)
    # equivalent form that avoids cancellation when mu > 0
    return 2.0 * (1.0 - p) / (delta + mu_val)


def isotherm_u_of_p(p: float, mu_val: float, beta: float) -> float:
    """Gap value on the arc at population p, u = (2/beta) ln x(p)."""
    return (2.0 / beta) * math.log(isotherm_x_of_p(p, mu_val))


def isotherm_q_of_p(p: float, mu_val: float, beta: float) -> float:
    """Costate scalar on the arc, from 2q + u = (mu/beta)(1 + x^2)/x."""
    x = isotherm_x_of_p(p, mu_val)
    u = (2.0 / beta) * math.log(x)
    return 0.5 * ((mu_val / beta) * (1.0 + x * x) / x - u)


def chi(x: float, mu_val: float) -> float:
    """Time potential of an arc: gamma*t = chi(x) up to a constant."""
    if mu_val == 0.0:
        raise ZeroDivisionError("chi is singular at mu = 0 (quasi-static limit)")
    return -(2.0 / mu_val) * math.atan(x) + math.log((x * x + 1.0) / x)


def xi(x: float, mu_val: float) -> float:
    """Heat potential of an arc: beta*Q = xi(x1) - xi(x0)."""
    x2 = x * x
    return (
        -2.0 * mu_val * math.atan(x)
        + (2.0 * x * (x + mu_val) / (1.0 + x2)) * math.log(x)
        - math.log(1.0 + x2)
    )


def isotherm_time(x0: float, x1: float, mu_val: float, gamma: float = 1.0) -> float:
    """Arc duration between control points x0 -> x1 (time order)."""
    if mu_val == 0.0:
        return math.inf if x0 != x1 else 0.0
    dt = (chi(x1, mu_val) - chi(x0, mu_val)) / gamma
    if dt < -1e-12:
        raise DirectionViolation(
            f"negative duration {dt}: endpoints ({x0}, {x1}) run against the branch flow"
        )
    return max(dt, 0.0)


def isotherm_heat(x0: float, x1: float, mu_val: float, beta: float) -> float:
    """Heat released by the system along the arc x0 -> x1 (time order)."""
    if mu_val != 0.0:
        # reuse the duration sign check: same direction criterion for both integrals
        isotherm_time(x0, x1, mu_val)
    return (xi(x1, mu_val) - xi(x0, mu_val)) / beta


def binary_entropy(p: float) -> float:
    """Shannon entropy of a biased bit, natural log."""
    if p < 0.0 or p > 1.0:
        raise ValueError(f"probability outside [0, 1]: {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log(p) - (1.0 - p) * math.log(1.0 - p)


def quasi_static_heat(p0: float, p1: float, beta: float) -> float:
    """Reversible-limit heat released between populations, [H(p0) - H(p1)] / beta."""
    if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0):
        raise ValueError("populations must lie strictly inside (0, 1)")
    return (binary_entropy(p0) - binary_entropy(p1)) / beta


def _mu_pair(K: float, baths: Baths) -> tuple[float, float]:
    return (
        mu(K, baths.beta_c, COLD, baths.gamma),
        mu(K, baths.beta_h, HOT, baths.gamma),
    )


def _adiabatic_f_array(p: np.ndarray, K: float, baths: Baths) -> np.ndarray:
    """Vectorized switch condition over an array of populations."""
    mu_c_val, mu_h_val = _mu_pair(K, baths)
    four_pq = 4.0 * p * (1.0 - p)
    delta_c = np.sqrt(mu_c_val * mu_c_val + four_pq)
    delta_h = np.sqrt(mu_h_val * mu_h_val + four_pq)
    x_c = (delta_c - mu_c_val) / (2.0 * p)
    x_h = 2.0 * (1.0 - p) / (delta_h + mu_h_val)
    r = x_c / x_h
    root_bb = math.sqrt(baths.beta_c * baths.beta_h)
    return r - 1.0 / r + 2.0 * root_bb * (
        np.log(x_c) / baths.beta_c - np.log(x_h) / baths.beta_h
    )


def adiabatic_f(p: float, K: float, baths: Baths) -> float:
    """Branch-switch condition: costate continuity across a gap quench holds iff f = 0.

    Written in terms of x_c(p) and x_h(p), which keeps the hot-branch factor
    stable where delta_h - mu_h would cancel for small p.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"population must lie in (0, 1), got {p}")
    if K >= 0.0:
        raise ValueError(f"branch switches require K < 0, got {K}")
    mu_c_val, mu_h_val = _mu_pair(K, baths)
    four_pq = 4.0 * p * (1.0 - p)
    delta_c = math.sqrt(mu_c_val * mu_c_val + four_pq)
    delta_h = math.sqrt(mu_h_val * mu_h_val + four_pq)
    x_c = (delta_c - mu_c_val) / (2.0 * p)
    x_h = 2.0 * (1.0 - p) / (delta_h + mu_h_val)
    r = x_c / x_h
    root_bb = math.sqrt(baths.beta_c * baths.beta_h)
    return r - 1.0 / r + 2.0 * root_bb * (
        math.log(x_c) / baths.beta_c - math.log(x_h) / baths.beta_h
    )


_P_LO = 1e-6
_P_HI = 1.0 - 1e-6
_SCAN_NODES = 1000


def adiabatic_f_min(K: float, baths: Baths, xatol: float = 1e-13) -> tuple[float, float]:
    """Minimum of f(., K) over p and its location: coarse scan plus bounded refine."""
    grid = np.linspace(_P_LO, _P_HI, _SCAN_NODES + 1)
    vals = _adiabatic_f_array(grid, K, baths)
    i = int(np.argmin(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, _SCAN_NODES)]
    res = minimize_scalar(
        lambda p: adiabatic_f(p, K, baths), bounds=(a, b), method="bounded",
        options={"xatol": xatol},
    )
    if res.fun < vals[i]:
        return float(res.fun), float(res.x)
    return float(vals[i]), float(grid[i])


# |f at its minimum| below this counts as tangency (coincident switch points)
_TANGENT_FTOL = 1e-9


def find_jump_points(K: float, baths: Baths, xtol: float = 1e-13) -> tuple[float, float]:
    """The two populations where a branch switch preserves state and costate.

    Returns (p_ad1, p_ad2) with p_ad1 <= p_ad2.  Raises NoJumpPoints when the
    switch condition has no zero (K below the root-merging threshold).  At
    the threshold itself both values coincide.
    """
    fmin, pm = adiabatic_f_min(K, baths)
    if fmin > _TANGENT_FTOL:
        raise NoJumpPoints(f"f stays positive (min {fmin:.3e} at p={pm:.6f}) for K={K}")
    if abs(fmin) <= _TANGENT_FTOL:
        return pm, pm
    func = lambda p: adiabatic_f(p, K, baths)
    lo = _expand_bracket(func, pm, _P_LO)
    hi = _expand_bracket(func, pm, _P_HI)
    p1 = float(brentq(func, lo, pm, xtol=xtol))
    p2 = float(brentq(func, pm, hi, xtol=xtol))
    return p1, p2


def _expand_bracket(func, pm: float, limit: float) -> float:
    """Walk from the (negative) minimum toward `limit` until func turns positive."""
    t = 0.5
    while True:
        p = pm + t * (limit - pm)
        if func(p) > 0.0:
            return p
        t = 1.0 - (1.0 - t) * 0.5
        if 1.0 - t < 1e-12:
            return limit


def tangency_residual(p: float, K: float, baths: Baths) -> float:
    """Normalized residual of the switch-point merging condition.

    The two roots of f(., K) merge where (1+x_c^2)/(mu_c x_c) and
    -(1+x_h^2)/(mu_h x_h) agree; returns their imbalance scaled by the
    magnitudes so the value is comparable across temperature ratios.
    """
    mu_c_val, mu_h_val = _mu_pair(K, baths)
    x_c = isotherm_x_of_p(p, mu_c_val)
    x_h = isotherm_x_of_p(p, mu_h_val)
    a_c = (1.0 + x_c * x_c) / (mu_c_val * x_c)
    a_h = (1.0 + x_h * x_h) / (mu_h_val * x_h)
    return abs(a_c + a_h) / max(abs(a_c), abs(a_h), 1.0)


def _tangency_h(p: float, K: float, baths: Baths) -> float:
    mu_c_val, mu_h_val = _mu_pair(K, baths)
    x_c = isotherm_x_of_p(p, mu_c_val)
    x_h = isotherm_x_of_p(p, mu_h_val)
    return (1.0 + x_c * x_c) / (mu_c_val * x_c) + (1.0 + x_h * x_h) / (mu_h_val * x_h)


@dataclass(frozen=True)
class EngineSolution:
    """Maximum-power working point of the cyclic two-level engine."""

    z: float
    K_star: float
    p_star: float
    u_c_star: float
    u_h_star: float
    eta_star: float
    eta_carnot: float
    eta_curzon_ahlborn: float
    g: float
    theta: float

    def to_dict(self) -> dict:
        return {
            "z": self.z,
            "K_star": self.K_star,
            "p_star": self.p_star,
            "u_c_star": self.u_c_star,
            "u_h_star": self.u_h_star,
            "eta_star": self.eta_star,
            "eta_carnot": self.eta_carnot,
            "eta_curzon_ahlborn": self.eta_curzon_ahlborn,
            "g": self.g,
            "theta": self.theta,
        }


def solve_engine(z: float, beta_c: float = 1.0, gamma: float = 1.0) -> EngineSolution:
    """Solve for the lowest admissible emission rate K* and its working point.

    Outer bisection on K locates the bifurcation where the two switch
    populations merge (f's minimum crosses zero); a damped Newton iteration
    on (f, tangency) then polishes the pair.  Direct 2-D Newton from scratch
    is ill-conditioned exactly at the tangency, hence the two-stage scheme.
    """
    if not 0.0 < z < 1.0:
        raise ValueError(f"temperature ratio must lie in (0, 1), got {z}")
    baths = Baths.from_ratio(z, beta_c=beta_c, gamma=gamma)
    unit = gamma / beta_c

    theta = lambert_w0(math.exp(-1.0)) / 4.0
    # K* satisfies -K* <= (theta/z)*unit, so 3x that brackets from below
    lo = -3.0 * (theta / z) * unit
    hi = -1e-12 * unit
    if adiabatic_f_min(lo, baths)[0] < 0.0:  # pragma: no cover - safety net
        raise SolverError(f"failed to bracket the root-merging K for z={z}")
    pm = adiabatic_f_min(hi, baths)[1]
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        fmin_mid, pmid = adiabatic_f_min(mid, baths)
        if fmin_mid < 0.0:
            hi = mid
            pm = pmid
        else:
            lo = mid
    K, p = 0.5 * (lo + hi), pm

    # damped Newton on (f, h) with numeric Jacobian
    for _ in range(60):
        F = adiabatic_f(p, K, baths)
        H = _tangency_h(p, K, baths)
        if abs(F) < 1e-13 and tangency_residual(p, K, baths) < 1e-13:
            break
        hp = 1e-7 * p * (1.0 - p)
        hk = 1e-7 * abs(K)
        dF_dp = (adiabatic_f(p + hp, K, baths) - adiabatic_f(p - hp, K, baths)) / (2 * hp)
        dF_dK = (adiabatic_f(p, K + hk, baths) - adiabatic_f(p, K - hk, baths)) / (2 * hk)
        dH_dp = (_tangency_h(p + hp, K, baths) - _tangency_h(p - hp, K, baths)) / (2 * hp)
        dH_dK = (_tangency_h(p, K + hk, baths) - _tangency_h(p, K - hk, baths)) / (2 * hk)
        det = dF_dp * dH_dK - dF_dK * dH_dp
        if det == 0.0 or not math.isfinite(det):
            break
        dp = (-F * dH_dK + H * dF_dK) / det
        dK = (-H * dF_dp + F * dH_dp) / det
        damp = 1.0
        while abs(dp) * damp > 0.25 * p * (1.0 - p) or abs(dK) * damp > 0.25 * abs(K):
            damp *= 0.5
        p_new = p + damp * dp
        K_new = K + damp * dK
        if not (0.0 < p_new < 1.0) or K_new >= 0.0:
            break
        if abs(p_new - p) < 1e-16 * p and abs(K_new - K) < 1e-16 * abs(K):
            p, K = p_new, K_new
            break
        p, K = p_new, K_new

    f_res = abs(adiabatic_f(p, K, baths))
    t_res = tangency_residual(p, K, baths)
    if f_res > 1e-10 or t_res > 1e-10:
        raise SolverError(
            f"engine solve did not converge at z={z}: |f|={f_res:.3e}, tangency={t_res:.3e}",
            residuals=(f_res, t_res),
        )

    mu_c_val, mu_h_val = _mu_pair(K, baths)
    u_c = isotherm_u_of_p(p, mu_c_val, baths.beta_c)
    u_h = isotherm_u_of_p(p, mu_h_val, baths.beta_h)
    return EngineSolution(
        z=z,
        K_star=K,
        p_star=p,
        u_c_star=u_c,
        u_h_star=u_h,
        eta_star=1.0 - u_c / u_h,
        eta_carnot=1.0 - z,
        eta_curzon_ahlborn=1.0 - math.sqrt(z),
        g=-K / unit,
        theta=theta,
    )


def engine_residuals(sol: EngineSolution, beta_c: float = 1.0, gamma: float = 1.0) -> tuple[float, float]:
    """Residuals (|f|, tangency) of the two defining equations at the solution."""
    baths = Baths.from_ratio(sol.z, beta_c=beta_c, gamma=gamma)
    return (
        abs(adiabatic_f(sol.p_star, sol.K_star, baths)),
        tangency_residual(sol.p_star, sol.K_star, baths),
    )


def lambert_w0(x: float) -> float:
    """Principal branch of w*exp(w) = x for x >= -1/e, by Halley iteration.

    Seeded with the log asymptote for large x and a branch-point series near
    -1/e; converges to full double precision in a handful of steps.
    """
    if math.isnan(x):
        raise ValueError("lambert_w0 needs a real argument, got nan")
    branch_point = -math.exp(-1.0)
    if x < branch_point - 1e-15:
        raise ValueError(f"lambert_w0 domain is [-1/e, inf), got {x}")
    if x == 0.0:
        return 0.0
    if x <= branch_point:
        return -1.0
    if abs(x - branch_point) < 1e-6:
        t = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + t - t * t / 3.0 + 11.0 * t ** 3 / 72.0
    elif x < 1.0:
        w = x * (1.0 - x + 1.5 * x * x)  # series around 0
        if x < -0.2:
            t = math.sqrt(2.0 * (math.e * x + 1.0))
            w = -1.0 + t - t * t / 3.0
    else:
        lx = math.log(x)
        llx = math.log(lx) if lx > 0 else 0.0
        w = lx - llx
    for _ in range(50):
        ew = math.exp(w)
        resid = w * ew - x
        if resid == 0.0:
            break
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * resid / (2.0 * wp1)
        dw = resid / denom
        w -= dw
        if abs(dw) <= 1e-16 * (1.0 + abs(w)):
            break
    return w


def asymptotic_limit() -> tuple[float, float]:
    """Low-temperature-ratio limit constants: theta = W(1/e)/4 and the limiting p*."""
    theta = lambert_w0(math.exp(-1.0)) / 4.0
    return theta, 2.0 * theta / (1.0 + 4.0 * theta)


@dataclass(frozen=True)
class IsothermSegment:
    """One optimal arc: branch, conserved rate, control endpoints, duration and heat.

    x0 -> x1 is time order: x increases along cold arcs and decreases along
    hot arcs (non-negative gap), so the duration integral is non-negative in
    both cases.
    """

    branch: Branch
    K: float
    x0: float
    x1: float
    duration: float
    heat: float

    @property
    def is_cold(self) -> bool:
        return self.branch.kind == "cold"


def _check_branch_range(branch: Branch, x: float, mu_val: float) -> None:
    tol = 1e-9
    if branch.gap_sign == "nonneg":
        if x < 1.0 - tol:
            raise ValueError(f"non-negative gaps need x >= 1, got x={x}")
        if branch.kind == "cold":
            if x < abs(mu_val) - tol:
                raise ValueError(f"cold arc needs x >= |mu|={abs(mu_val)} to keep p <= 1, got {x}")
        else:
            if mu_val >= 1.0:
                raise ValueError(f"hot arc empty: mu_h={mu_val} >= 1 leaves no admissible x")
            if x > 1.0 / mu_val + tol:
                raise ValueError(f"hot arc needs x <= 1/mu_h={1.0 / mu_val}, got {x}")
    else:
        if x > 1.0 + tol:
            raise ValueError(f"negative gaps need x <= 1, got x={x}")


def make_segment(branch: Branch, K: float, baths: Baths, x0: float, x1: float) -> IsothermSegment:
    """Build and validate a segment from control endpoints in time order."""
    if K > 0.0:
        raise ValueError(f"segments require K <= 0, got {K}")
    beta = baths.beta(branch.kind)
    mu_val = mu(K, beta, branch, baths.gamma)
    _check_branch_range(branch, x0, mu_val)
    _check_branch_range(branch, x1, mu_val)
    duration = isotherm_time(x0, x1, mu_val, baths.gamma)
    heat = isotherm_heat(x0, x1, mu_val, beta)
    return IsothermSegment(branch=branch, K=K, x0=x0, x1=x1, duration=duration, heat=heat)


def segment_from_populations(
    branch: Branch, K: float, baths: Baths, p0: float, p1: float
) -> IsothermSegment:
    """Build a segment between populations in time order (cold: p0 >= p1, hot: p0 <= p1)."""
    beta = baths.beta(branch.kind)
    mu_val = mu(K, beta, branch, baths.gamma)
    x0 = isotherm_x_of_p(p0, mu_val)
    x1 = isotherm_x_of_p(p1, mu_val)
    return make_segment(branch, K, baths, x0, x1)
