"""Discrete-bath reference: exact covariance flow of system plus bath modes.

Each Drude bath is replaced by N harmonic modes of unit mass with couplings
chosen so that pi sum_k c_k^2/(2 w_k) delta(w - w_k) reproduces J(w) bin by
bin.  The total Hamiltonian

    H = sum_a [p_a^2/2m_a + m_a w_a^2 q_a^2/2] + c(t) q1 q2
        + sum_{a,k} [p_ak^2/2 + w_ak^2 x_ak^2/2 - c_ak q_a x_ak + c_ak^2 q_a^2/(2 w_ak^2)]

is quadratic, so Gaussian states stay Gaussian and the covariance obeys
d cov/dt = M cov + cov M^T exactly.  Only the system block is kept at the
requested output times.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .gaussian_moments import MomentTrace
from .kernels import spectral_density
from .model import BathParams, ModelConfig, OscillatorParams

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscreteBath:
    frequencies: np.ndarray
    couplings: np.ndarray
    masses: np.ndarray
    rule: str
    omega_max: float

    @property
    def n_modes(self) -> int:
        return self.frequencies.size

    @property
    def recurrence_time(self) -> float:
        """2 pi over the smallest mode spacing."""
        if self.n_modes < 2:
            return np.inf
        return float(2 * np.pi / np.min(np.diff(self.frequencies)))

    @property
    def counter_term(self) -> float:
        """Potential renormalization sum_k c_k^2 / (m_k w_k^2)."""
        return float(np.sum(self.couplings**2 / (self.masses * self.frequencies**2)))

    def binned_density(self) -> np.ndarray:
        """pi c_k^2 / (2 m_k w_k) per mode, to compare with int_bin J."""
        return np.pi * self.couplings**2 / (2 * self.masses * self.frequencies)

    def bin_edges(self) -> np.ndarray:
        if self.rule == "linear":
            return np.linspace(0.0, self.omega_max, self.n_modes + 1)
        theta = np.linspace(0.0, np.arctan(self.omega_max / self.cutoff), self.n_modes + 1)
        return self.cutoff * np.tan(theta)

    cutoff: float = 1.0


def discretize_bath(bath: BathParams, osc: OscillatorParams, n_modes: int = 300,
                    omega_max: Optional[float] = None, rule: str = "linear") -> DiscreteBath:
    """Modes on [0, omega_max].

    ``rule="linear"`` uses equal bins with modes at the bin midpoints;
    ``"equal_weight"`` uses bins of equal reorganization weight
    int J(w)/w dw (equal steps in arctan(w / cutoff)), again at midpoints.
    """
    if n_modes < 10:
        raise OracleError("need at least 10 bath modes")
    W = bath.cutoff
    omega_max = 20.0 * max(W, osc.frequency) if omega_max is None else float(omega_max)
    if omega_max < 10 * W:
        covered = 2 / np.pi * np.arctan(omega_max / W)
        raise OracleError(f"omega_max={omega_max} is below 10 x cutoff; the grid covers only "
                          f"{covered:.1%} of the reorganization weight")
    if rule == "linear":
        dw = omega_max / n_modes
        w = (np.arange(n_modes) + 0.5) * dw
        width = np.full(n_modes, dw)
    elif rule == "equal_weight":
        top = np.arctan(omega_max / W)
        dtheta = top / n_modes
        theta = (np.arange(n_modes) + 0.5) * dtheta
        w = W * np.tan(theta)
        width = W / np.cos(theta) ** 2 * dtheta
    else:
        raise ValueError(f"unknown rule {rule!r}")
    masses = np.ones(n_modes)
    c2 = 2.0 / np.pi * masses * w * spectral_density(w, bath, osc) * width
    return DiscreteBath(w, np.sqrt(c2), masses, rule, omega_max, cutoff=W)


@dataclass
class FullState:
    """Mean and covariance of (x, p), x = (q1, q2, bath1 modes, bath2 modes)."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size // 2


def _thermal_mode(w: np.ndarray, m: np.ndarray, T: float):
    if T == 0:
        factor = np.ones_like(w)
    else:
        with np.errstate(over="ignore"):
            factor = 1.0 / np.tanh(w / (2 * T))
    return factor / (2 * m * w), factor * m * w / 2


def initial_full_state(config: ModelConfig, baths: Sequence[DiscreteBath]) -> FullState:
    """System in ``config.initial``, each bath thermal at its own temperature, uncorrelated."""
    n = [b.n_modes for b in baths]
    d = 2 + sum(n)
    mean = np.zeros(2 * d)
    cov = np.zeros((2 * d, 2 * d))
    sys_idx = np.array([0, 1, d, d + 1])
    mean[sys_idx] = config.initial.mean
    cov[np.ix_(sys_idx, sys_idx)] = config.initial.cov
    start = 2
    for bath, params in zip(baths, config.baths):
        xx, pp = _thermal_mode(bath.frequencies, bath.masses, params.temperature)
        idx = np.arange(start, start + bath.n_modes)
        cov[idx, idx] = xx
        cov[idx + d, idx + d] = pp
        start += bath.n_modes
    return FullState(mean, cov)


class _Flow:
    """Right-hand side of the covariance flow with the arrow-shaped potential."""

    def __init__(self, config: ModelConfig, baths: Sequence[DiscreteBath]):
        self.config = config
        n1, n2 = baths[0].n_modes, baths[1].n_modes
        self.d = 2 + n1 + n2
        d = self.d
        self.inv_mass = np.concatenate([1.0 / config.masses, 1.0 / baths[0].masses, 1.0 / baths[1].masses])
        diag = np.zeros(d)
        diag[:2] = config.masses * config.frequencies**2 + np.array([b.counter_term for b in baths])
        diag[2:2 + n1] = baths[0].masses * baths[0].frequencies**2
        diag[2 + n1:] = baths[1].masses * baths[1].frequencies**2
        self.diag = diag
        self.slices = (slice(2, 2 + n1), slice(2 + n1, d))
        self.couplings = (baths[0].couplings, baths[1].couplings)

    def potential(self, t: float) -> np.ndarray:
        """Dense potential matrix, for diagnostics only."""
        V = np.diag(self.diag)
        V[0, 1] = V[1, 0] = float(self.config.drive(t))
        for a in range(2):
            V[a, self.slices[a]] = -self.couplings[a]
            V[self.slices[a], a] = -self.couplings[a]
        return V

    def apply_potential(self, t: float, X: np.ndarray) -> np.ndarray:
        """V(t) @ X for X of shape (d, k) without forming V."""
        out = self.diag[:, None] * X
        c = float(self.config.drive(t))
        out[0] += c * X[1]
        out[1] += c * X[0]
        for a in range(2):
            sl, ck = self.slices[a], self.couplings[a]
            out[a] -= ck @ X[sl]
            out[sl] -= np.outer(ck, X[a])
        return out

    def apply(self, t: float, S: np.ndarray) -> np.ndarray:
        """M(t) @ S with M = [[0, Minv], [-V, 0]]."""
        d = self.d
        out = np.empty_like(S)
        out[:d] = self.inv_mass[:, None] * S[d:]
        out[d:] = -self.apply_potential(t, S[:d])
        return out

    # state layout: mean (2d), then the blocks X = <xx>, Y = <xp>, Z = <pp> of the covariance

    def pack(self, state: FullState) -> np.ndarray:
        d = self.d
        S = state.cov
        return np.concatenate([state.mean, S[:d, :d].ravel(), S[:d, d:].ravel(), S[d:, d:].ravel()])

    def unpack(self, y: np.ndarray) -> tuple:
        d = self.d
        n = 2 * d
        X = y[n:n + d * d].reshape(d, d)
        Y = y[n + d * d:n + 2 * d * d].reshape(d, d)
        Z = y[n + 2 * d * d:].reshape(d, d)
        return y[:n], X, Y, Z

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        """d cov/dt = M cov + cov M^T written blockwise:

        X' = T Y^T + Y T,  Y' = T Z - X V,  Z' = -V Y - Y^T V,  T = diag(1/m).
        """
        d = self.d
        n = 2 * d
        mean, X, Y, Z = self.unpack(y)
        out = np.empty_like(y)
        out[:d] = self.inv_mass * mean[d:]
        out[d:n] = -self.apply_potential(t, mean[:d, None])[:, 0]
        _, dX, dY, dZ = self.unpack(out)
        A = Y * self.inv_mass[None, :]
        np.add(A, A.T, out=dX)
        np.subtract(self.inv_mass[:, None] * Z, self.apply_potential(t, X).T, out=dY)
        VY = self.apply_potential(t, Y)
        np.add(VY, VY.T, out=dZ)
        np.negative(dZ, out=dZ)
        return out

    def system_block(self, y: np.ndarray) -> tuple:
        d = self.d
        mean, X, Y, Z = self.unpack(y)
        cov = np.empty((4, 4))
        cov[:2, :2] = X[:2, :2]
        cov[:2, 2:] = Y[:2, :2]
        cov[2:, :2] = Y[:2, :2].T
        cov[2:, 2:] = Z[:2, :2]
        return mean[[0, 1, d, d + 1]].copy(), 0.5 * (cov + cov.T)

    def energy(self, t: float, y: np.ndarray) -> float:
        """<H(t)> including the mean contribution."""
        d = self.d
        mean, X, Y, Z = self.unpack(y)
        xp, pp = mean[:d], mean[d:]
        kinetic = 0.5 * np.sum(self.inv_mass * (np.diag(Z) + pp**2))
        potential = 0.5 * np.trace(self.apply_potential(t, X + np.outer(xp, xp)))
        return float(kinetic + potential)

    def full_state(self, y: np.ndarray) -> FullState:
        mean, X, Y, Z = self.unpack(y)
        return FullState(mean.copy(), np.block([[X, Y], [Y.T, Z]]))

    def adjoint_rhs(self, s: float, w: np.ndarray) -> np.ndarray:
        """Columns w of Phi(t, s)^T obey dw/ds = -M(s)^T w = [V w_p, -T w_x]."""
        d = self.d
        W = w.reshape(2 * d, -1)
        out = np.empty_like(W)
        out[:d] = self.apply_potential(s, W[d:])
        out[d:] = -self.inv_mass[:, None] * W[:d]
        return out.ravel()


@dataclass
class OracleResult:
    trace: MomentTrace
    energy: np.ndarray  # <H(t)> at the output times
    q1q2: np.ndarray  # <q1 q2> (full second moment) at the output times
    final_state: Optional[FullState] = None


def evolve_full(config: ModelConfig, baths: Optional[Sequence[DiscreteBath]] = None,
                times: Optional[Sequence[float]] = None, n_modes: int = 300,
                omega_max: Optional[float] = None, rtol: float = 1e-10, atol: float = 1e-12,
                keep_final: bool = False, initial: Optional[FullState] = None,
                method: str = "covariance") -> OracleResult:
    """Integrate the full covariance flow and sample the system block at ``times``.

    ``method="adjoint"`` instead integrates the four system rows of the flow
    map backward from each output time; it is equivalent, much cheaper for
    few output times, and gives no energy diagnostics.
    """
    if baths is None:
        baths = [discretize_bath(b, o, n_modes, omega_max) for b, o in zip(config.baths, config.oscillators)]
    times = np.asarray(config.grid.final_times if times is None else times, dtype=float)
    horizon = float(times[-1])
    # decoupled baths never feed back, so only coupled ones can recur
    recurrence = min((b.recurrence_time for b in baths if np.any(b.couplings)), default=np.inf)
    if horizon >= recurrence:
        raise OracleError(f"horizon {horizon} exceeds the bath recurrence time {recurrence:.3g}")
    flow = _Flow(config, baths)
    state = initial or initial_full_state(config, baths)
    if method == "adjoint":
        trace = _evolve_adjoint(flow, state, times, rtol, atol, config.initial.label)
        return OracleResult(trace, np.full(times.size, np.nan), trace.covariances[:, 0, 1]
                            + trace.means[:, 0] * trace.means[:, 1])
    if method != "covariance":
        raise ValueError(f"unknown method {method!r}")
    y0 = flow.pack(state)
    means, covs, energy, q1q2 = [], [], [], []

    def record(t, y):
        mean, cov = flow.system_block(y)
        means.append(mean)
        covs.append(cov)
        energy.append(flow.energy(t, y))
        q1q2.append(cov[0, 1] + mean[0] * mean[1])

    pending = list(times)
    while pending and pending[0] <= 0.0:
        record(0.0, y0)
        pending.pop(0)
    y_last = y0
    if pending:
        solver = integrate.DOP853(flow.rhs, 0.0, y0, horizon, rtol=rtol, atol=atol)
        while pending:
            message = solver.step()
            if solver.status == "failed" or not np.all(np.isfinite(solver.y[:4])):
                raise OracleError(f"step failure at t={solver.t:.6g}: {message}")
            if pending[0] <= solver.t:
                dense = solver.dense_output()
                while pending and pending[0] <= solver.t:
                    t = pending.pop(0)
                    record(t, solver.y if t == solver.t else dense(t))
        y_last = solver.y
    trace = MomentTrace(times, np.array(means), np.array(covs), config.initial.label)
    final = flow.full_state(y_last) if keep_final else None
    return OracleResult(trace, np.array(energy), np.array(q1q2), final)


def _evolve_adjoint(flow: _Flow, state: FullState, times, rtol, atol, label) -> MomentTrace:
    """System rows of the flow map by backward solves, one per output time."""
    d = flow.d
    sys_idx = np.array([0, 1, d, d + 1])
    start = np.zeros((2 * d, 4))
    start[sys_idx, np.arange(4)] = 1.0
    means, covs = [], []
    for t in times:
        if t <= 0:
            rows = start.T
        else:
            sol = integrate.solve_ivp(flow.adjoint_rhs, (t, 0.0), start.ravel(), method="DOP853",
                                      rtol=rtol, atol=atol)
            if not sol.success:
                raise OracleError(f"adjoint solve failed for t={t}: {sol.message}")
            rows = sol.y[:, -1].reshape(2 * d, 4).T
        means.append(rows @ state.mean)
        cov = rows @ state.cov @ rows.T
        covs.append(0.5 * (cov + cov.T))
    return MomentTrace(np.asarray(times, dtype=float), np.array(means), np.array(covs), label)


def drive_work(times, q1q2, config: ModelConfig, step: float = 1e-5) -> np.ndarray:
    """Cumulative work int_0^t dc/ds <q1 q2> ds on the sampled times (Simpson on pairs)."""
    times = np.asarray(times, dtype=float)
    if config.drive.is_harmonic:
        dc = -config.drive.amplitude * config.drive.frequency * np.sin(config.drive.frequency * times)
    else:
        dc = (np.asarray(config.drive(times + step)) - np.asarray(config.drive(times - step))) / (2 * step)
    return integrate.cumulative_simpson(dc * np.asarray(q1q2), x=times, initial=0.0)
