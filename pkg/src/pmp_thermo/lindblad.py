"""Finite-dimensional GKSL forward simulator with thermal reset dissipators.

Dynamics: drho/dt = -i[H_u, rho] + gamma_c * D_c[rho] + gamma_h * D_h[rho],
with D_b[rho] = eta_b(u) tr(rho) - rho the single-bath reset map toward the
instantaneous Gibbs state.  Heat and work are accumulated as extra ODE
components so their quadrature rides on the same adaptive grid as the state,
keeping first-law closure at integrator order.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .two_level import Baths

__all__ = [
    "BathSpec",
    "ControlVector",
    "ThermoLedger",
    "TwoLevelResetModel",
    "DiagonalResetModel",
    "ProtocolPiece",
    "Protocol",
    "IntegrationResult",
    "IntegrationError",
    "TraceDriftError",
    "check_density_matrix",
    "thermal_dissipator",
    "lindblad_rhs",
    "integrate",
    "write_trajectory_csv",
]

_TRACE_DRIFT_LIMIT = 1e-8


class IntegrationError(RuntimeError):
    """Adaptive integration failed; carries the time of failure."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} (t={t})")
        self.t = t


class TraceDriftError(IntegrationError):
    """Trace of the state drifted beyond the allowed bound."""


@dataclass(frozen=True)
class BathSpec:
    """One reservoir: inverse temperature and a cold/hot label."""

    beta: float
    label: str = "cold"

    def __post_init__(self):
        if self.beta <= 0.0:
            raise ValueError(f"inverse temperature must be positive, got {self.beta}")
        if self.label not in ("cold", "hot"):
            raise ValueError(f"bath label must be 'cold' or 'hot', got {self.label!r}")


@dataclass(frozen=True)
class ControlVector:
    """Instantaneous controls: Hamiltonian parameters and the two damping rates."""

    u: np.ndarray
    gamma_c: float
    gamma_h: float

    def __post_init__(self):
        u = np.atleast_1d(np.asarray(self.u, dtype=float))
        object.__setattr__(self, "u", u)
        if not np.all(np.isfinite(u)):
            raise ValueError(f"non-finite control vector {u}")
        if self.gamma_c < 0.0 or self.gamma_h < 0.0:
            raise ValueError(f"damping rates must be non-negative, got {self.gamma_c}, {self.gamma_h}")
        if not (math.isfinite(self.gamma_c) and math.isfinite(self.gamma_h)):
            raise ValueError("damping rates must be finite")

    @property
    def total_rate(self) -> float:
        return self.gamma_c + self.gamma_h


@dataclass
class ThermoLedger:
    """Accumulated heat released, work done by the system, and energy bookkeeping."""

    heat_released: float = 0.0
    work_done: float = 0.0
    energy_initial: float = 0.0
    energy_final: float = 0.0

    @property
    def first_law_residual(self) -> float:
        """(E_final - E_initial) + W + Q; zero when the ledger is consistent."""
        return (self.energy_final - self.energy_initial) + self.work_done + self.heat_released


def check_density_matrix(
    rho: np.ndarray,
    trace_tol: float = 1e-10,
    herm_tol: float = 1e-12,
    eig_floor: float = -1e-10,
) -> None:
    """Raise if rho is not a valid density matrix within the stated tolerances."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > herm_tol:
        raise ValueError(f"not Hermitian: max |rho - rho^dag| = {herm:.3e}")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > trace_tol:
        raise ValueError(f"trace {tr} differs from 1 beyond {trace_tol}")
    evals = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if evals.min() < eig_floor:
        raise ValueError(f"negative eigenvalue {evals.min():.3e}")


def _gibbs_diag(energies: np.ndarray, beta: float) -> np.ndarray:
    """Gibbs populations for a diagonal Hamiltonian, overflow-safe."""
    w = -beta * (energies - energies.min())
    e = np.exp(w)
    return e / e.sum()


class TwoLevelResetModel:
    """Two-level system with gap control u and reset dissipators toward Gibbs."""

    dim = 2
    n_controls = 1

    def __init__(self, baths: Baths):
        self.baths = baths

    def _beta(self, kind: str) -> float:
        return self.baths.beta(kind)

    def hamiltonian(self, u: np.ndarray) -> np.ndarray:
        h = np.zeros((2, 2), dtype=complex)
        h[1, 1] = float(np.atleast_1d(u)[0])
        return h

    def dh_du(self, u: np.ndarray) -> np.ndarray:
        d = np.zeros((1, 2, 2), dtype=complex)
        d[0, 1, 1] = 1.0
        return d

    def equilibrium(self, u: np.ndarray, kind: str) -> np.ndarray:
        gap = float(np.atleast_1d(u)[0])
        arg = self._beta(kind) * gap
        if not math.isfinite(arg):
            raise ValueError(f"non-finite beta*u = {arg}")
        p_eq = 0.5 * (1.0 - math.tanh(0.5 * arg))
        return np.diag([1.0 - p_eq, p_eq]).astype(complex)

    def dissipator(self, rho: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        return self.equilibrium(u, kind) * np.trace(rho) - rho

    def adjoint_dissipator(self, a: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        eta = self.equilibrium(u, kind)
        return np.trace(eta @ a) * np.eye(2, dtype=complex) - a

    def ddissipator_du(self, rho: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        beta = self._beta(kind)
        eta = self.equilibrium(u, kind)
        p_eq = eta[1, 1].real
        dp = -beta * p_eq * (1.0 - p_eq)
        deta = np.diag([-dp, dp]).astype(complex)
        return (deta * np.trace(rho))[np.newaxis, :, :]


class DiagonalResetModel:
    """N-level ladder with controllable level energies relaxing to Gibbs at unit rate.

    Level 0 is pinned at zero energy; the control vector holds the energies of
    levels 1..n-1.  This is an artifact generalization used for cross-checks,
    not a physical claim beyond the two-level case.
    """

    def __init__(self, baths: Baths, dim: int):
        if dim < 2:
            raise ValueError(f"need dim >= 2, got {dim}")
        self.baths = baths
        self.dim = dim
        self.n_controls = dim - 1

    def _beta(self, kind: str) -> float:
        return self.baths.beta(kind)

    def _energies(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.size != self.n_controls:
            raise ValueError(f"expected {self.n_controls} controls, got {u.size}")
        return np.concatenate(([0.0], u))

    def hamiltonian(self, u: np.ndarray) -> np.ndarray:
        return np.diag(self._energies(u)).astype(complex)

    def dh_du(self, u: np.ndarray) -> np.ndarray:
        d = np.zeros((self.n_controls, self.dim, self.dim), dtype=complex)
        for k in range(self.n_controls):
            d[k, k + 1, k + 1] = 1.0
        return d

    def equilibrium(self, u: np.ndarray, kind: str) -> np.ndarray:
        pops = _gibbs_diag(self._energies(u), self._beta(kind))
        return np.diag(pops).astype(complex)

    def dissipator(self, rho: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        return self.equilibrium(u, kind) * np.trace(rho) - rho

    def adjoint_dissipator(self, a: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        eta = self.equilibrium(u, kind)
        return np.trace(eta @ a) * np.eye(self.dim, dtype=complex) - a

    def ddissipator_du(self, rho: np.ndarray, u: np.ndarray, kind: str) -> np.ndarray:
        beta = self._beta(kind)
        pops = np.diag(self.equilibrium(u, kind)).real
        out = np.zeros((self.n_controls, self.dim, self.dim), dtype=complex)
        tr = np.trace(rho)
        for k in range(self.n_controls):
            # d eta_i / d eps_k = beta * eta_i * (eta_k - delta_ik)
            dpops = beta * pops * (pops[k + 1] - (np.arange(self.dim) == k + 1))
            out[k] = np.diag(dpops) * tr
        return out


def thermal_dissipator(rho: np.ndarray, bath: BathSpec, u: float) -> np.ndarray:
    """Two-level reset map at unit rate: eta_beta(u) - rho."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise ValueError(f"two-level state expected, got shape {rho.shape}")
    arg = bath.beta * float(u)
    if not math.isfinite(arg):
        raise ValueError(f"non-finite beta*u = {arg}")
    p_eq = 0.5 * (1.0 - math.tanh(0.5 * arg))
    eta = np.diag([1.0 - p_eq, p_eq]).astype(complex)
    return eta * np.trace(rho) - rho


def lindblad_rhs(rho: np.ndarray, control: ControlVector, model) -> np.ndarray:
    """Full generator action: -i[H_u, rho] + gamma_c D_c[rho] + gamma_h D_h[rho]."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise ValueError(f"state shape {rho.shape} does not match model dim {model.dim}")
    h = model.hamiltonian(control.u)
    out = -1j * (h @ rho - rho @ h)
    if control.gamma_c > 0.0:
        out = out + control.gamma_c * model.dissipator(rho, control.u, "cold")
    if control.gamma_h > 0.0:
        out = out + control.gamma_h * model.dissipator(rho, control.u, "hot")
    return out


@dataclass
class ProtocolPiece:
    """Smooth stretch of a control schedule; boundaries are declared discontinuities.

    `u` may be a constant vector or a callable of global time; `dudt` is the
    exact control velocity when available (falls back to a central difference).
    """

    duration: float
    u: np.ndarray | float | Callable[[float], np.ndarray]
    gamma_c: float
    gamma_h: float
    dudt: Callable[[float], np.ndarray] | None = None

    def u_at(self, t: float) -> np.ndarray:
        if callable(self.u):
            return np.atleast_1d(np.asarray(self.u(t), dtype=float))
        return np.atleast_1d(np.asarray(self.u, dtype=float))

    def dudt_at(self, t: float, t_lo: float, t_hi: float) -> np.ndarray:
        if not callable(self.u):
            return np.zeros_like(self.u_at(t))
        if self.dudt is not None:
            return np.atleast_1d(np.asarray(self.dudt(t), dtype=float))
        h = max(1e-7 * (t_hi - t_lo), 1e-12)
        a = max(t - h, t_lo)
        b = min(t + h, t_hi)
        return (self.u_at(b) - self.u_at(a)) / (b - a)


@dataclass
class Protocol:
    """Ordered piecewise-smooth control schedule starting at t0."""

    pieces: Sequence[ProtocolPiece]
    t0: float = 0.0

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.pieces)

    def boundaries(self) -> list[float]:
        ts = [self.t0]
        for p in self.pieces:
            ts.append(ts[-1] + p.duration)
        return ts


@dataclass
class IntegrationResult:
    """Sampled trajectory plus the accumulated thermodynamic ledger."""

    t: np.ndarray
    states: np.ndarray  # (n_samples, dim, dim)
    u: np.ndarray  # (n_samples, n_controls)
    gamma_c: np.ndarray
    gamma_h: np.ndarray
    q_cum: np.ndarray
    w_cum: np.ndarray
    ledger: ThermoLedger = field(default_factory=ThermoLedger)

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


def _pack(rho: np.ndarray, q: float, w: float, dim: int) -> np.ndarray:
    flat = rho.reshape(-1)
    return np.concatenate([flat.real, flat.imag, [q, w]])


def _unpack(y: np.ndarray, dim: int) -> tuple[np.ndarray, float, float]:
    n = dim * dim
    rho = (y[:n] + 1j * y[n : 2 * n]).reshape(dim, dim)
    return rho, y[2 * n], y[2 * n + 1]


def integrate(
    rho0: np.ndarray,
    protocol: Protocol,
    model,
    rtol: float = 1e-9,
    atol: float = 1e-12,
    samples_per_piece: int = 50,
    validate_initial: bool = True,
) -> IntegrationResult:
    """Adaptively integrate the master equation along a piecewise protocol.

    The state is continuous across control jumps; instantaneous quenches
    contribute work -<rho dH> at piece boundaries and no heat.  Raises
    IntegrationError on step failure and TraceDriftError when |tr rho - 1|
    exceeds 1e-8.
    """
    dim = model.dim
    rho0 = np.asarray(rho0, dtype=complex)
    if validate_initial:
        check_density_matrix(rho0)
    if not protocol.pieces:
        raise ValueError("protocol has no pieces")

    ts: list[np.ndarray] = []
    states: list[np.ndarray] = []
    us: list[np.ndarray] = []
    gcs: list[np.ndarray] = []
    ghs: list[np.ndarray] = []
    qs: list[np.ndarray] = []
    ws: list[np.ndarray] = []

    t_lo = protocol.t0
    rho = rho0
    q_acc, w_acc = 0.0, 0.0
    h0 = model.hamiltonian(protocol.pieces[0].u_at(t_lo))
    energy_initial = float(np.trace(rho0 @ h0).real)

    prev_piece: ProtocolPiece | None = None
    for piece in protocol.pieces:
        if piece.duration < 0.0:
            raise ValueError(f"negative piece duration {piece.duration}")
        if prev_piece is not None:
            # instantaneous quench: state frozen, work picks up the gap change
            h_prev = model.hamiltonian(prev_piece.u_at(t_lo))
            h_next = model.hamiltonian(piece.u_at(t_lo))
            w_acc += -float(np.trace(rho @ (h_next - h_prev)).real)
        if piece.duration == 0.0:
            prev_piece = piece
            continue
        t_hi = t_lo + piece.duration
        control_of = lambda t, piece=piece: ControlVector(
            u=piece.u_at(t), gamma_c=piece.gamma_c, gamma_h=piece.gamma_h
        )

        def rhs(t, y, piece=piece, t_lo=t_lo, t_hi=t_hi):
            rho_t, _, _ = _unpack(y, dim)
            u_t = piece.u_at(t)
            ctrl = ControlVector(u=u_t, gamma_c=piece.gamma_c, gamma_h=piece.gamma_h)
            ldot = lindblad_rhs(rho_t, ctrl, model)
            h_t = model.hamiltonian(u_t)
            dq = -float(np.trace(h_t @ ldot).real)
            dudt = piece.dudt_at(t, t_lo, t_hi)
            dh = model.dh_du(u_t)
            dh_dt = np.tensordot(dudt, dh, axes=(0, 0))
            dw = -float(np.trace(rho_t @ dh_dt).real)
            flat = ldot.reshape(-1)
            return np.concatenate([flat.real, flat.imag, [dq, dw]])

        t_eval = np.linspace(t_lo, t_hi, max(samples_per_piece, 2))
        sol = solve_ivp(
            rhs,
            (t_lo, t_hi),
            _pack(rho, q_acc, w_acc, dim),
            method="DOP853",
            rtol=rtol,
            atol=atol,
            t_eval=t_eval,
            dense_output=False,
        )
        if not sol.success:
            raise IntegrationError(f"integrator failed: {sol.message}", t=float(sol.t[-1]) if len(sol.t) else t_lo)
        for i, t in enumerate(sol.t):
            rho_t, _, _ = _unpack(sol.y[:, i], dim)
            drift = abs(np.trace(rho_t).real - 1.0)
            if drift > _TRACE_DRIFT_LIMIT:
                raise TraceDriftError(f"trace drift {drift:.3e}", t=float(t))
        ts.append(sol.t)
        states.append(np.array([_unpack(sol.y[:, i], dim)[0] for i in range(sol.t.size)]))
        us.append(np.array([control_of(t).u for t in sol.t]))
        gcs.append(np.full(sol.t.size, piece.gamma_c))
        ghs.append(np.full(sol.t.size, piece.gamma_h))
        qs.append(sol.y[2 * dim * dim, :].copy())
        ws.append(sol.y[2 * dim * dim + 1, :].copy())
        rho, q_acc, w_acc = _unpack(sol.y[:, -1], dim)
        t_lo = t_hi
        prev_piece = piece

    h_final = model.hamiltonian(prev_piece.u_at(t_lo))
    ledger = ThermoLedger(
        heat_released=q_acc,
        work_done=w_acc,
        energy_initial=energy_initial,
        energy_final=float(np.trace(rho @ h_final).real),
    )
    return IntegrationResult(
        t=np.concatenate(ts),
        states=np.concatenate(states, axis=0),
        u=np.concatenate(us, axis=0),
        gamma_c=np.concatenate(gcs),
        gamma_h=np.concatenate(ghs),
        q_cum=np.concatenate(qs),
        w_cum=np.concatenate(ws),
        ledger=ledger,
    )


def _fmt(x: float) -> str:
    return f"{x:.15g}"


def write_trajectory_csv(result: IntegrationResult, fileobj: io.TextIOBase, beta_c: float = 1.0, gamma: float = 1.0) -> None:
    """Trajectory export: populations expanded per level, 15 significant digits."""
    dim = result.states.shape[1]
    n_controls = result.u.shape[1]
    fileobj.write(f"# units: time 1/gamma (gamma={_fmt(gamma)}), energy 1/beta_c (beta_c={_fmt(beta_c)}), rates gamma\n")
    u_cols = "u" if n_controls == 1 else ",".join(f"u{k}" for k in range(n_controls))
    p_cols = ",".join(f"p{i}" for i in range(dim))
    fileobj.write(f"t,{u_cols},gamma_c,gamma_h,{p_cols},Qcum,Wcum\n")
    for i in range(result.t.size):
        pops = result.states[i].diagonal().real
        row = [
            _fmt(result.t[i]),
            *(_fmt(v) for v in result.u[i]),
            _fmt(result.gamma_c[i]),
            _fmt(result.gamma_h[i]),
            *(_fmt(v) for v in pops),
            _fmt(result.q_cum[i]),
            _fmt(result.w_cum[i]),
        ]
        fileobj.write(",".join(row) + "\n")
