"""Gaussian moment propagation through the influence-functional propagator.

Integrating the Gaussian propagating function against the Wigner
characteristic function of the initial state gives an affine map

    mean(t) = T mean(0),     cov(t) = T cov(0) T^T + D,

where T depends only on the endpoint velocity blocks of the forward paths
and D = 2 R^T B R carries the bath noise.  With dQ/ds(t) = a Q'' + b Q',
dQ/ds(0) = c Q'' + d Q' and M = diag(m), C = ((M c)^T)^-1:

    L = [[-(Md)^T C, (Mb)^T - (Md)^T C (Ma)^T], [C, C (Ma)^T]],   T = L^T,
    R = [[0, I], [C, C (Ma)^T]].

The same blocks give the normalization, so the trace is preserved exactly.
"""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .entanglement import symplectic_values
from .kernels import MemoryKernelSet
from .memory_dynamics import ForwardFlow
from .model import GaussianState, ModelConfig
from .propagator import PropagatorMatrices, assemble_propagator

log = logging.getLogger(__name__)

PHYSICALITY_RTOL = 1e-6


class NumericalFailure(RuntimeError):
    pass


class TracePointError(RuntimeError):
    """A sub-module failed for one final time of a trace."""

    def __init__(self, t: float, cause: Exception):
        self.t = t
        self.cause = cause
        super().__init__(f"t={t!r}: {type(cause).__name__}: {cause}")


def moment_map(matrices: PropagatorMatrices) -> tuple:
    """Return (transfer, noise): cov(t) = transfer cov(0) transfer^T + noise."""
    blk = matrices.blocks
    M = np.diag(matrices.masses)
    Ma, Mb, Mc, Md = M @ blk.a, M @ blk.b, M @ blk.c, M @ blk.d
    C = np.linalg.inv(Mc.T)
    L = np.block([[-Md.T @ C, Mb.T - Md.T @ C @ Ma.T], [C, C @ Ma.T]])
    R = np.block([[np.zeros((2, 2)), np.eye(2)], [C, C @ Ma.T]])
    return L.T, 2.0 * R.T @ matrices.B @ R


def propagate(initial: GaussianState, matrices: PropagatorMatrices, config: Optional[ModelConfig] = None,
              check: bool = True) -> GaussianState:
    """Evolve mean and covariance of a Gaussian state to the propagator's final time."""
    if matrices.blocks is None or matrices.masses is None:
        raise ValueError("propagator matrices lack endpoint blocks")
    if config is not None and not np.array_equal(config.masses, matrices.masses):
        raise ValueError("propagator was assembled for different masses")
    transfer, noise = moment_map(matrices)
    mean = transfer @ initial.mean
    cov = transfer @ initial.cov @ transfer.T + noise
    cov = 0.5 * (cov + cov.T)
    if check:
        if np.linalg.eigvalsh(cov)[0] <= 0:
            raise NumericalFailure(f"unphysical covariance at t={matrices.t}: not positive definite, "
                                   "so symplectic eigenvalues are undefined")
        lowest = symplectic_values(cov)[0]
        if not lowest >= 0.5 * (1 - PHYSICALITY_RTOL):
            raise NumericalFailure(f"unphysical covariance at t={matrices.t}: smallest symplectic "
                                   f"eigenvalue {lowest:.9g} < 1/2")
    return GaussianState(mean, cov, initial.label)


def density_matrix_element(Q2, q2, initial: GaussianState, matrices: PropagatorMatrices) -> np.ndarray:
    """Reduced density matrix <Q + q/2 | rho(t) | Q - q/2> by explicit Gaussian integration.

    ``Q2`` and ``q2`` have shape (..., 2).  Integrates the propagating
    function against the initial density matrix over (Q', q') in closed
    form; independent of :func:`moment_map` and used to check it.
    """
    Q2 = np.asarray(Q2, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    blk = matrices.blocks
    M = np.diag(matrices.masses)
    B = matrices.B
    mu_q, mu_p = initial.mean[:2], initial.mean[2:]
    sqq = initial.cov[:2, :2]
    spq = initial.cov[2:, :2]
    spp = initial.cov[2:, 2:]
    sqq_inv = np.linalg.inv(sqq)
    K = spq @ sqq_inv
    cond_pp = spp - K @ spq.T
    # exponent = -1/2 y.P.y + J.y + c0 over y = (Q', q')
    P = np.zeros((4, 4), dtype=complex)
    P[:2, :2] = sqq_inv
    P[2:, 2:] = cond_pp + 2 * B[2:, 2:]
    X = -1j * (K - M @ blk.d)
    P[2:, :2] = X
    P[:2, 2:] = X.T
    JQ = sqq_inv @ mu_q + 1j * np.einsum("ij,...i->...j", M @ blk.b, q2)
    Jq = (1j * (mu_p - K @ mu_q) - 1j * np.einsum("ij,...j->...i", M @ blk.c, Q2)
          - 2 * np.einsum("ij,...j->...i", B[2:, :2], q2))
    J = np.concatenate([JQ, Jq], axis=-1)
    c0 = (-0.5 * mu_q @ sqq_inv @ mu_q - 0.5 * np.log(np.linalg.det(2 * np.pi * sqq))
          + 1j * np.einsum("...i,ij,...j->...", q2, M @ blk.a, Q2)
          - np.einsum("...i,ij,...j->...", q2, B[:2, :2], q2))
    eig = np.linalg.eigvals(P)
    sqrt_det = np.prod(np.sqrt(eig))
    Pinv = np.linalg.inv(P)
    quad = 0.5 * np.einsum("...i,ij,...j->...", J, Pinv, J)
    return (2 * np.pi) ** 2 / sqrt_det * np.exp(c0 + quad) / matrices.normalization


# -- traces -----------------------------------------------------------------------------


@dataclass
class MomentTrace:
    times: np.ndarray
    means: np.ndarray  # (n, 4)
    covariances: np.ndarray  # (n, 4, 4)
    label: str = ""

    @property
    def states(self) -> list:
        return [GaussianState(m, c, self.label) for m, c in zip(self.means, self.covariances)]

    @property
    def min_symplectic(self) -> np.ndarray:
        return np.array([symplectic_values(c)[0] for c in self.covariances])

    def to_csv(self, path) -> None:
        iu = np.triu_indices(4)
        names = ["q1", "q2", "p1", "p2"]
        header = (["t"] + [f"mean_{n}" for n in names]
                  + [f"cov_{names[i]}_{names[j]}" for i, j in zip(*iu)] + ["min_symplectic"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for t, m, c, lo in zip(self.times, self.means, self.covariances, self.min_symplectic):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in m]
                                + [repr(float(v)) for v in c[iu]] + [repr(float(lo))])


def _one_time(config, t, kernels, forward, method, check):
    if t == 0:
        return config.initial.mean, config.initial.cov
    try:
        mats = assemble_propagator(config, t, kernels=kernels, forward=forward, method=method)
        state = propagate(config.initial, mats, config, check=check)
    except Exception as exc:
        raise TracePointError(t, exc) from exc
    return state.mean, state.cov


def moment_trace(config: ModelConfig, kernels: Optional[MemoryKernelSet] = None, method: str = "modal",
                 check: bool = True, threads: int = 1) -> MomentTrace:
    """Mean and covariance at every configured final time.

    The forward fundamental solution is computed once up to the last final
    time and shared; the backward problems are solved per final time.
    """
    times = np.asarray(config.grid.final_times, dtype=float)
    kernels = kernels or MemoryKernelSet(config)
    forward = ForwardFlow(config, times[-1]) if times[-1] > 0 else None
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda t: _one_time(config, t, kernels, forward, method, check), times))
    else:
        results = [_one_time(config, t, kernels, forward, method, check) for t in times]
    means = np.array([r[0] for r in results])
    covs = np.array([r[1] for r in results])
    log.debug("moment trace over %d final times done", times.size)
    return MomentTrace(times, means, covs, config.initial.label)
