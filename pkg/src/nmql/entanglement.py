"""Logarithmic negativity and the driven quantum-limit diagnostics.

Covariances are over (q1, q2, p1, p2) with hbar = 1, so the vacuum has
symplectic eigenvalues 1/2.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from .kernels import spectral_density
from .model import ModelConfig

SYMPLECTIC = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
PARTIAL_TRANSPOSE = np.diag([1.0, 1.0, 1.0, -1.0])


class CovarianceError(ValueError):
    pass


def _check_cov(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (4, 4):
        raise CovarianceError("expected a 4x4 covariance matrix")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-14):
        raise CovarianceError("covariance matrix is not symmetric")
    if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() <= 0:
        raise CovarianceError("covariance matrix is not positive definite")
    return 0.5 * (cov + cov.T)


def symplectic_values(cov: np.ndarray) -> np.ndarray:
    """All four |eigenvalues| of -i Sigma cov, ascending, without input checks."""
    return np.sort(np.abs(np.linalg.eigvals(-1j * SYMPLECTIC @ cov)))


def symplectic_spectrum(cov) -> np.ndarray:
    """The two symplectic eigenvalues of a two-mode covariance, ascending."""
    cov = _check_cov(cov)
    return symplectic_values(cov)[::2].copy()


def partial_transpose(cov) -> np.ndarray:
    """Flip the sign of the second mode's momentum."""
    return PARTIAL_TRANSPOSE @ np.asarray(cov, dtype=float) @ PARTIAL_TRANSPOSE


def log_negativity(cov) -> float:
    cov = _check_cov(cov)
    l = symplectic_values(partial_transpose(cov))
    return float(-0.5 * np.sum(np.log2(np.minimum(1.0, 2.0 * l)))) + 0.0  # avoid -0.0


def two_mode_squeezed(r: float, nbar: float = 0.0) -> np.ndarray:
    """Covariance of a (thermal) two-mode squeezed state, unit masses and frequencies."""
    a = (nbar + 0.5) * np.cosh(2 * r)
    b = (nbar + 0.5) * np.sinh(2 * r)
    return np.array([[a, b, 0, 0], [b, a, 0, 0], [0, 0, a, -b], [0, 0, -b, a]])


def williamson_values(cov) -> np.ndarray:
    """Symplectic eigenvalues through the Cholesky route, as a cross-check.

    With cov = L L^T the antisymmetric matrix L^T Sigma L has eigenvalues
    +-i nu_k, so i L^T Sigma L is Hermitian with eigenvalues +-nu_k.
    """
    root = np.linalg.cholesky(_check_cov(cov))
    return np.sort(np.abs(np.linalg.eigvalsh(1j * root.T @ SYMPLECTIC @ root)))[::2].copy()


def log_negativity_williamson(cov) -> float:
    nus = williamson_values(partial_transpose(cov))
    return float(-np.sum(np.log2(np.minimum(1.0, 2.0 * nus))))


# -- time series -------------------------------------------------------------------


@dataclass
class EntanglementTrace:
    times: np.ndarray
    values: np.ndarray
    spectra: np.ndarray  # (n, 2) symplectic eigenvalues of cov
    pt_spectra: np.ndarray  # (n, 2) of the partial transpose
    window: tuple = (np.nan, np.nan)
    steady: float = np.nan
    steady_std: float = np.nan

    @property
    def in_window(self) -> np.ndarray:
        return (self.times >= self.window[0]) & (self.times <= self.window[1])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "E_N", "min_pt_symplectic", "steady_window"])
            for t, e, pt, w in zip(self.times, self.values, self.pt_spectra[:, 0], self.in_window):
                writer.writerow([repr(float(t)), repr(float(e)), repr(float(pt)), int(w)])


def steady_state(times, values, period: float) -> tuple:
    """Mean and standard deviation over the last full period of the trace."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    end = times[-1]
    start = end - period
    if start < times[0]:
        raise ValueError("trace shorter than one averaging period")
    mask = times >= start - 1e-12
    # trapezoid mean on the window
    tw, vw = times[mask], values[mask]
    if tw.size < 2:
        return float(vw[-1]), 0.0, (start, end)
    span = tw[-1] - tw[0]
    mean = trapezoid(vw, tw) / span
    var = trapezoid((vw - mean) ** 2, tw) / span
    return float(mean), float(np.sqrt(var)), (float(tw[0]), float(end))


def entanglement_trace(times, covariances, period: Optional[float] = None) -> EntanglementTrace:
    times = np.asarray(times, dtype=float)
    covs = np.asarray(covariances, dtype=float)
    values = np.array([log_negativity(c) for c in covs])
    spectra = np.array([symplectic_values(c)[::2] for c in covs])
    pt = np.array([symplectic_values(partial_transpose(c))[::2] for c in covs])
    trace = EntanglementTrace(times, values, spectra, pt)
    if period is not None and times[-1] - times[0] >= period:
        trace.steady, trace.steady_std, trace.window = steady_state(times, values, period)
    return trace


# -- scaled parameters and the quantum limit ----------------------------------------------


@dataclass(frozen=True)
class ScaledParameters:
    temperature: float
    coupling: float
    pump_rate: float
    raw_temperature: float
    raw_coupling: float
    raw_pump_rate: float
    factor: float


def cutoff_factor(cutoff: float, omega: float) -> float:
    """1 - 1/(1 + cutoff^2/omega^2) = cutoff^2/(omega^2 + cutoff^2)."""
    if np.isinf(cutoff):
        return 1.0
    return cutoff**2 / (omega**2 + cutoff**2)


def pump_rate(config: ModelConfig, omega: float) -> float:
    """Leading parametric-instability rate c1 / (4 omega) in units of the mass."""
    return config.drive.amplitude / (4.0 * omega)


def scaled_parameters(config: ModelConfig, omega: float, bath: int = 0) -> ScaledParameters:
    if not omega > 0:
        raise ValueError("mode frequency must be positive")
    b = config.baths[bath]
    f = cutoff_factor(b.cutoff, omega)
    mu = pump_rate(config, omega)
    return ScaledParameters(b.temperature * f, b.coupling * f, mu / f, b.temperature, b.coupling, mu, f)


@dataclass(frozen=True)
class QuantumLimit:
    satisfied: bool
    margin: float  # hbar w^2 mu / (k T J(w)/m)
    high_temperature: bool


def quantum_limit_predicate(config: ModelConfig, omega: float, mu: Optional[float] = None,
                            bath: int = 0) -> QuantumLimit:
    """Check k_B T J(w)/m < w^2 mu; the margin is the ratio of the two sides."""
    b = config.baths[bath]
    osc = config.oscillators[bath]
    mu = pump_rate(config, omega) if mu is None else mu
    noise = b.temperature * float(spectral_density(omega, b, osc)) / osc.mass
    drive = omega**2 * mu
    if noise == 0:
        margin = np.inf if drive > 0 else 0.0
    else:
        margin = drive / noise
    return QuantumLimit(bool(margin > 1), float(margin), bool(omega < 0.2 * b.temperature))
