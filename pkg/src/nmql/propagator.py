"""Matrices of the Gaussian propagating function.

For one final time t the propagating function of the reduced density matrix
is

    J = exp(i x1.A.x1 - x2.B.x2) / N(t),

with x1 = (Q1'', Q2'', Q1', Q2', q1'', q2'', q1', q2'), x2 = (q1'', q2'', q1', q2'),
Q the mean and q the difference of the two path branches (primes mark the
initial, double primes the final coordinates).  A collects the boundary
phase  sum_a m_a [q_a'' dQ_a/ds(t) - q_a' dQ_a/ds(0)],  B the noise
quadratic form  sum_a int_0^t ds int_0^s du K_a(s-u) q_a(s) q_a(u).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import partial
from typing import Optional

import numpy as np
from scipy import signal, special

from .kernels import KernelModes, MemoryKernelSet, spectral_density
from .memory_dynamics import AuxiliaryFunctions, ForwardFlow, assemble_auxiliary
from .model import ModelConfig

X1_LABELS = ("Q1''", "Q2''", "Q1'", "Q2'", "q1''", "q2''", "q1'", "q2'")
X2_LABELS = ("q1''", "q2''", "q1'", "q2'")

PSD_TOL = 1e-10
MIN_DETERMINANT = 1e-12


class QuadratureError(RuntimeError):
    pass


class SingularPropagatorError(RuntimeError):
    pass


@dataclass
class EndpointBlocks:
    """Endpoint velocities of the forward paths as 2x2 blocks.

    dQ/ds(t) = a Q'' + b Q',   dQ/ds(0) = c Q'' + d Q'.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray


def endpoint_blocks(aux: AuxiliaryFunctions) -> EndpointBlocks:
    def block(pick, names):
        (p, q), (r, s) = names
        return np.array([[pick(p), pick(q)], [pick(r), pick(s)]])

    dbl = (("U2", "U4"), ("V4", "V2"))
    single = (("U1", "U3"), ("V3", "V1"))
    return EndpointBlocks(block(aux.at_end, dbl), block(aux.at_end, single),
                          block(aux.at_start, dbl), block(aux.at_start, single))


@dataclass
class PropagatorMatrices:
    t: float
    A: np.ndarray
    B: np.ndarray
    normalization: float
    blocks: Optional[EndpointBlocks] = None
    masses: Optional[np.ndarray] = None

    def to_csv(self, path) -> None:
        """Row-major dump: one row per matrix entry with its index labels."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "matrix", "i", "j", "row", "col", "value"])
            for i in range(8):
                for j in range(8):
                    writer.writerow([repr(self.t), "A", i + 1, j + 1, X1_LABELS[i], X1_LABELS[j],
                                     repr(float(self.A[i, j]))])
            for i in range(4):
                for j in range(4):
                    writer.writerow([repr(self.t), "B", i + 1, j + 1, X2_LABELS[i], X2_LABELS[j],
                                     repr(float(self.B[i, j]))])
            writer.writerow([repr(self.t), "N", 0, 0, "", "", repr(float(self.normalization))])


def phase_matrix_A(aux: AuxiliaryFunctions, config: ModelConfig, t: Optional[float] = None) -> np.ndarray:
    """Symmetric 8x8 matrix with A_ij = (1/2) d^2 phase / dx_i dx_j."""
    if t is not None and not np.isclose(t, aux.t, rtol=1e-12, atol=0):
        raise ValueError(f"auxiliary functions belong to t={aux.t}, not t={t}")
    blk = endpoint_blocks(aux)
    M = np.diag(config.masses)
    A = np.zeros((8, 8))
    A[4:6, 0:2] = 0.5 * M @ blk.a
    A[4:6, 2:4] = 0.5 * M @ blk.b
    A[6:8, 0:2] = -0.5 * M @ blk.c
    A[6:8, 2:4] = -0.5 * M @ blk.d
    return A + A.T


def normalization(A: np.ndarray) -> float:
    """N(t) = pi^2 / |A17 A28 - A18 A27| (1-based indices over x1)."""
    det = A[0, 6] * A[1, 7] - A[0, 7] * A[1, 6]
    if not abs(det) >= MIN_DETERMINANT:
        raise SingularPropagatorError(f"normalization determinant {det:.3e} vanishes; "
                                      "the final time is resonant")
    return float(np.pi**2 / abs(det))


# -- noise matrix: exponential modes -----------------------------------------------


def _filter_coefficients(rate, h):
    """Exact update of g(s) = int_0^s e^{-rate(s-u)} f(u) du for piecewise-linear f.

    g_{k+1} = E g_k + alpha f_k + beta f_{k+1}.  ``rate`` may be complex.
    """
    x = rate * h
    E = np.exp(-x)
    if abs(x) < 0.1:
        # (1 - E - x E)/x^2 and (1 - E)/x as power series
        k = np.arange(2, 14)
        series = np.sum((-1.0) ** k * (k - 1) / special.factorial(k) * x ** (k - 2))
        phi1 = np.sum((-1.0) ** (k - 2) * x ** (k - 2) / special.factorial(k - 1))
    else:
        series = (1 - E - x * E) / x**2
        phi1 = -np.expm1(-x) / x
    alpha = h * series
    beta = h * phi1 - alpha
    return E, alpha, beta


def _mode_integral(f: np.ndarray, rate, h: float, weights: np.ndarray):
    """(1/2) int int_[0,t]^2 e^{-rate|s-u|} f_i(s) f_j(u) for all i, j.

    ``f`` has shape (k, n+1); ``weights`` are trapezoid weights on the grid.
    """
    E, alpha, beta = _filter_coefficients(rate, h)
    zi = (-beta * f[:, :1]).astype(np.result_type(f, E))
    g, _ = signal.lfilter([beta, alpha], [1.0, -E], f, axis=1, zi=zi)
    inner = (f * weights) @ g.T  # <f_i, g_j>
    return 0.5 * (inner + inner.T)


def modal_double_integral(f: np.ndarray, s: np.ndarray, modes: KernelModes) -> np.ndarray:
    """(1/2) int int_[0,t]^2 K(s-u) f_i(s) f_j(u) using the exponential modes of K."""
    h = s[1] - s[0]
    w = np.full(s.size, h)
    w[0] = w[-1] = 0.5 * h
    out = np.zeros((f.shape[0], f.shape[0]))
    for rate, weight, kind in zip(modes.rates, modes.weights, modes.kinds):
        if kind == "exp":
            out += weight * _mode_integral(f, rate, h, w).real
        else:
            # s e^{-rate s} = -d/drate e^{-rate s}, by complex step
            step = 1e-20 * rate
            out -= weight * _mode_integral(f, rate + 1j * step, h, w).imag / step
    loc0, loc1 = modes.local
    ff = (f * w) @ f.T
    edges = np.outer(f[:, 0], f[:, 0]) + np.outer(f[:, -1], f[:, -1])
    out += loc0 * ff - 0.5 * loc1 * edges
    return out


# -- noise matrix: spectral route ------------------------------------------------


def _hat_transform(f: np.ndarray, s: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Exact Fourier transform int_0^t f(s) e^{i w s} ds of the piecewise-linear interpolant."""
    h = s[1] - s[0]
    theta = omega * h
    small = np.abs(theta) < 1e-3
    th = np.where(small, 1.0, theta)
    left = np.where(small, h * (0.5 + 1j * theta / 6 - theta**2 / 24),
                    (1j * th - np.exp(1j * th) + 1) / (h * np.where(small, 1.0, omega) ** 2))
    sinc2 = h * np.sinc(theta / (2 * np.pi)) ** 2
    phase = np.exp(1j * np.outer(omega, s))  # (w, n+1)
    interior = (phase[:, 1:-1] @ f[:, 1:-1].T) * sinc2[:, None]
    ends = left[:, None] * f[:, 0] + (phase[:, -1] * np.conj(left))[:, None] * f[:, -1]
    return interior + ends  # (w, k)


def default_omega_max(s: np.ndarray, bath, osc) -> float:
    """Well above the bath scales and 1/t (the tail estimate needs both), below the grid's Nyquist-like limit."""
    t, h = s[-1], s[1] - s[0]
    scale = max(bath.cutoff, bath.temperature, osc.frequency, 1.0)
    return float(min(max(60.0 * scale, 40.0 / t), 0.5 * np.pi / h))


def _panel_edges(omega_max: float, t: float, bath, osc, growth: float = 1.25) -> np.ndarray:
    """Panels for J coth |F|^2 on [0, omega_max].

    Uniform panels of a quarter of the smallest feature scale up to that
    scale, then geometric growth (the integrand varies on the scale of w
    itself there), capped by the oscillation period 2 pi / t of |F|^2.
    """
    features = [bath.cutoff, osc.frequency] + ([2 * bath.temperature] if bath.temperature > 0 else [])
    coarse = 0.5 * np.pi / t
    fine = min(coarse, 0.25 * min(features))
    split = min(omega_max, min(features))
    edges = list(np.linspace(0.0, split, max(1, int(np.ceil(split / fine))) + 1))
    width = fine
    while edges[-1] < omega_max:
        width = min(width * growth, coarse)
        edges.append(min(edges[-1] + width, omega_max))
    return np.asarray(edges)


def spectral_double_integral(f: np.ndarray, s: np.ndarray, bath, osc, omega_max: Optional[float] = None,
                             nodes: int = 8, chunk: int = 2048) -> np.ndarray:
    """(1/2) int int K(s-u) f_i f_j = (1/2pi) int_0^inf J coth(w/2T) Re[F_i conj(F_j)] dw.

    Gauss-Legendre panels on [0, omega_max] plus the leading large-frequency
    tail; usable at zero temperature.
    """
    t = s[-1]
    if omega_max is None:
        omega_max = default_omega_max(s, bath, osc)
    edges = _panel_edges(omega_max, t, bath, osc)
    x, wgl = np.polynomial.legendre.leggauss(nodes)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    omega = (mid[:, None] + half[:, None] * x).ravel()
    wq = (half[:, None] * wgl).ravel()
    out = np.zeros((f.shape[0], f.shape[0]))
    for start in range(0, omega.size, chunk):
        om = omega[start:start + chunk]
        F = _hat_transform(f, s, om)
        J = spectral_density(om, bath, osc)
        with np.errstate(over="ignore"):
            coth = 1.0 if bath.temperature == 0 else 1.0 / np.tanh(om / (2 * bath.temperature))
        weight = wq[start:start + chunk] * J * coth / (2 * np.pi)
        out += ((F * weight[:, None]).T @ np.conj(F)).real
    # tail: |F|^2 ~ (f(0)^2 + f(t)^2) / w^2, J coth ~ m g W^2 / w
    edges_ff = np.outer(f[:, 0], f[:, 0]) + np.outer(f[:, -1], f[:, -1])
    out += osc.mass * bath.coupling * bath.cutoff**2 * edges_ff / (4 * np.pi * omega_max**2)
    return 0.5 * (out + out.T)


def noise_matrix_B(aux: AuxiliaryFunctions, kernels: MemoryKernelSet, config: ModelConfig,
                   method: str = "modal", check: bool = True, richardson: bool = True) -> np.ndarray:
    """4x4 noise matrix over (q1'', q2'', q1', q2').

    ``method="modal"`` integrates each exponential mode of K exactly against
    the piecewise-linear weights (second order in the step) and falls back
    to the spectral route for windows too short to resolve the modes; with
    ``richardson`` and an even step count the result is extrapolated from
    the full and the every-other-point grid.  ``"spectral"`` integrates in
    frequency and also covers zero temperature.  A negative eigenvalue below
    -1e-10 |B| raises :class:`QuadratureError` when ``check`` is set.
    """
    B = np.zeros((4, 4))
    n = aux.s.size - 1
    for alpha in range(2):
        bath = config.baths[alpha]
        if bath.coupling == 0:
            continue
        f = aux.noise_weights(alpha)
        use = method if bath.temperature > 0 else "spectral"
        if use == "modal" and not kernels.modal_resolvable(alpha, aux.t):
            use = "spectral"  # very short windows: too many explicit modes, frequency route is cheap
        if use == "modal":
            modes = kernels.modes(alpha, horizon=aux.t)
            integral = partial(modal_double_integral, modes=modes)
        elif use == "spectral":
            # one frequency cutoff for both grids so the extrapolation sees only the step change
            omega_max = default_omega_max(aux.s[::2] if n % 2 == 0 else aux.s, bath, config.oscillators[alpha])
            integral = partial(spectral_double_integral, bath=bath, osc=config.oscillators[alpha],
                               omega_max=omega_max)
        else:
            raise ValueError(f"unknown method {method!r}")
        fine = integral(f, aux.s)
        if richardson and n % 2 == 0 and n >= 4:
            fine = (4 * fine - integral(f[:, ::2], aux.s[::2])) / 3
        B += fine
    B = 0.5 * (B + B.T)
    if check:
        check_psd(B)
    return B


def check_psd(B: np.ndarray, tol: float = PSD_TOL) -> float:
    lowest = float(np.linalg.eigvalsh(B).min())
    norm = float(np.linalg.norm(B, 2))
    if lowest < -tol * norm:
        raise QuadratureError(f"noise matrix has eigenvalue {lowest:.3e} (norm {norm:.3e}); "
                              "refine the inner grid")
    return lowest


def assemble_propagator(config: ModelConfig, t: float, kernels: Optional[MemoryKernelSet] = None,
                        aux: Optional[AuxiliaryFunctions] = None, method: str = "modal",
                        forward: Optional[ForwardFlow] = None, n: Optional[int] = None) -> PropagatorMatrices:
    kernels = kernels or MemoryKernelSet(config)
    aux = aux or assemble_auxiliary(config, t, n=n, forward=forward)
    A = phase_matrix_A(aux, config, t)
    B = noise_matrix_B(aux, kernels, config, method)
    return PropagatorMatrices(t, A, B, normalization(A), endpoint_blocks(aux), config.masses)
