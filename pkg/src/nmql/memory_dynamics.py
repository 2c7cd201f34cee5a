"""Boundary-value solutions of the damped equations of motion.

Two families of classical paths enter the propagating function:

* the forward paths Q(s), damped by the retarded memory term
  d/ds int_0^s gamma(s-u) Q(u) du and fixed by Q(0) = Q', Q(t) = Q'';
* the backward paths q(s), carrying the advanced memory term
  -d/ds int_s^t gamma(u-s) q(u) du and fixed by q(0) = q', q(t) = q''.

Substituting r(tau) = q(t - tau) turns the backward equation into a forward
one driven by c(t - tau), so both families are built from forward
initial-value solves.  For the Drude kernel the memory integral
z(s) = int_0^s gamma(s-u) Q(u) du obeys z' = gamma*cutoff*Q - cutoff*z, which
gives an exact local ODE (the "embedding" scheme).  A second-order
product-integration scheme for arbitrary kernels is kept as a cross-check.

Each family is written as a linear combination of four fundamental
solutions; matching the boundary data gives the sixteen auxiliary
functions, e.g. Q1(s) = U1 Q1' + U2 Q1'' + U3 Q2' + U4 Q2''.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline

from .kernels import dissipation_kernel
from .model import ModelConfig

# boundary matrices with a larger condition number are treated as singular
MAX_CONDITION = 1e10

AUX_NAMES = tuple(f"{fam}{i}" for fam in ("U", "V", "u", "v") for i in range(1, 5))


class IntegrationError(RuntimeError):
    pass


class SingularBoundaryError(RuntimeError):
    """The boundary-matching matrix cannot be inverted reliably."""

    def __init__(self, t: float, condition: float, which: str = "forward"):
        self.t = t
        self.condition = condition
        super().__init__(
            f"{which} boundary matrix at t={t!r} is singular (condition number {condition:.3e}); "
            "t is at or near a resonance of the boundary-value problem, try a slightly perturbed t")


@dataclass
class Trajectory:
    """Positions and velocities of both coordinates on a uniform grid."""

    s: np.ndarray
    position: np.ndarray  # (n+1, 2)
    velocity: np.ndarray  # (n+1, 2)
    final_time: float
    backward: bool = False

    def interpolant(self) -> Callable:
        """Cubic Hermite interpolant returning positions at arbitrary s."""
        return CubicHermiteSpline(self.s, self.position, self.velocity, axis=0)


def _grid(t: float, n: int) -> np.ndarray:
    if not t > 0:
        raise ValueError("final time must be positive")
    if n < 2:
        raise ValueError("need at least two inner steps")
    return np.linspace(0.0, t, n + 1)


def _static_parts(config: ModelConfig):
    m = config.masses
    w2 = config.frequencies**2
    g = np.array([b.coupling for b in config.baths])
    W = np.array([b.cutoff for b in config.baths])
    return m, w2, g, W


def _drive_matrix(c, m) -> np.ndarray:
    return np.array([[0.0, c / m[0]], [c / m[1], 0.0]])


# -- embedding scheme ------------------------------------------------------------


def _embedding_solve(config: ModelConfig, horizon: float, y0: np.ndarray, drive: Callable,
                     t_eval: Optional[np.ndarray], rtol: float, atol: float, method: str,
                     dense: bool = False):
    """Integrate (Q, P, z) for several initial conditions at once.

    ``y0`` has shape (4, k): positions and velocities of k solutions.
    Returns the ``solve_ivp`` result with ``y`` of shape (6k, len(t_eval)).
    """
    m, w2, g, W = _static_parts(config)
    k = y0.shape[1]
    base = np.zeros((6, 6))
    base[0:2, 2:4] = np.eye(2)
    base[2:4, 0:2] = -np.diag(w2 + g * W)
    base[2:4, 4:6] = np.diag(W)
    base[4:6, 0:2] = np.diag(g * W)
    base[4:6, 4:6] = -np.diag(W)

    def rhs(s, y):
        M = base.copy()
        M[2:4, 0:2] -= _drive_matrix(float(drive(s)), m)
        return (M @ y.reshape(6, k)).ravel()

    def jac(s, y):
        M = base.copy()
        M[2:4, 0:2] -= _drive_matrix(float(drive(s)), m)
        return np.kron(M, np.eye(k))

    start = np.vstack([y0, np.zeros((2, k))]).ravel()
    kw = {"jac": jac} if method in ("Radau", "BDF", "LSODA") else {}
    sol = integrate.solve_ivp(rhs, (0.0, horizon), start, method=method, t_eval=t_eval,
                              rtol=rtol, atol=atol, dense_output=dense, **kw)
    if not sol.success or not np.all(np.isfinite(sol.y)):
        where = sol.t[-1] if sol.t.size else 0.0
        raise IntegrationError(f"integration failed near s={where:.6g}: {sol.message}")
    return sol


def _embedding(config, t, n, y0, drive, rtol, atol, method):
    s = _grid(t, n)
    sol = _embedding_solve(config, t, y0, drive, s, rtol, atol, method)
    k = y0.shape[1]
    y = sol.y.reshape(6, k, -1).transpose(2, 0, 1)  # (n+1, 6, k)
    return s, y[:, 0:2, :], y[:, 2:4, :]


# -- product-integration scheme ---------------------------------------------------


def _product(config, t, n, y0, drive, kernels: Optional[Sequence[Callable]] = None):
    """Trapezoidal product integration of the integrated equation of motion.

    P(s) = P(0) - int_0^s [w^2 Q + (c/m) Q_other] du - int_0^s gamma(s-u) Q(u) du
    Q(s) = Q(0) + int_0^s P du

    Second order in the step; each step needs one 2x2 solve.
    """
    s = _grid(t, n)
    h = s[1] - s[0]
    m, w2, _, _ = _static_parts(config)
    if kernels is None:
        kernels = [lambda x, b=b: dissipation_kernel(x, b) for b in config.baths]
    gam = np.stack([np.asarray(kern(s), dtype=float) * np.ones_like(s) for kern in kernels])  # (2, n+1)
    k = y0.shape[1]
    Q = np.zeros((n + 1, 2, k))
    P = np.zeros((n + 1, 2, k))
    Q[0], P[0] = y0[0:2], y0[2:4]
    c = np.asarray(drive(s), dtype=float) * np.ones_like(s)

    def force_matrix(j):
        return np.diag(w2) + _drive_matrix(c[j], m)

    F = force_matrix(0) @ Q[0]
    F_int = np.zeros((2, k))
    gamma0 = np.diag(gam[:, 0])
    eye = np.eye(2)
    for j in range(n):
        # memory sum over already-known points 0..j for the new time j+1
        lags = gam[:, j + 1:0:-1]  # gamma(s_{j+1} - s_i), i = 0..j
        weights = lags.copy()
        weights[:, 0] *= 0.5
        conv = h * np.einsum("ai,iak->ak", weights, Q[: j + 1])
        rhs_p = P[0] - F_int - 0.5 * h * F - conv
        K_next = force_matrix(j + 1)
        lhs = eye + 0.25 * h * h * (K_next + gamma0)
        Q[j + 1] = np.linalg.solve(lhs, Q[j] + 0.5 * h * (P[j] + rhs_p))
        P[j + 1] = rhs_p - 0.5 * h * (K_next + gamma0) @ Q[j + 1]
        F_next = K_next @ Q[j + 1]
        F_int = F_int + 0.5 * h * (F + F_next)
        F = F_next
        if not np.all(np.isfinite(Q[j + 1])):
            raise IntegrationError(f"non-finite state at s={s[j + 1]:.6g}")
    return s, Q, P


def _product_richardson(config, t, n, y0, drive, kernels=None):
    s, Q1, P1 = _product(config, t, n, y0, drive, kernels)
    _, Q2, P2 = _product(config, t, 2 * n, y0, drive, kernels)
    return s, (4 * Q2[::2] - Q1) / 3, (4 * P2[::2] - P1) / 3


def _integrate(config, t, n, y0, drive, scheme, rtol=1e-12, atol=1e-13, method="DOP853",
               kernels=None):
    y0 = np.asarray(y0, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None]
    if scheme == "embedding":
        if kernels is not None:
            raise ValueError("the embedding scheme is exact only for the Drude kernel; "
                             "use scheme='product' for other kernels")
        return _embedding(config, t, n, y0, drive, rtol, atol, method)
    if scheme == "product":
        return _product(config, t, n, y0, drive, kernels)
    if scheme == "product-richardson":
        return _product_richardson(config, t, n, y0, drive, kernels)
    raise ValueError(f"unknown scheme {scheme!r}")


def _reversed_drive(config: ModelConfig, t: float) -> Callable:
    return lambda tau: config.drive(t - np.asarray(tau))


def solve_forward_ivp(config: ModelConfig, t: float, initial, n: Optional[int] = None,
                      scheme: str = "embedding", **kw) -> Trajectory:
    """Solve the retarded equation for Q from (Q1, Q2, Q1dot, Q2dot) at s = 0."""
    n = config.grid.n_inner if n is None else n
    s, Q, P = _integrate(config, t, n, initial, config.drive, scheme, **kw)
    return Trajectory(s, Q[:, :, 0], P[:, :, 0], t)


def solve_reversed_ivp(config: ModelConfig, t: float, terminal, n: Optional[int] = None,
                       scheme: str = "embedding", **kw) -> Trajectory:
    """Solve the advanced equation for q from (q1, q2, q1dot, q2dot) at s = t."""
    n = config.grid.n_inner if n is None else n
    terminal = np.asarray(terminal, dtype=float)
    start = np.concatenate([terminal[:2], -terminal[2:]])
    tau, R, Rdot = _integrate(config, t, n, start, _reversed_drive(config, t), scheme, **kw)
    return Trajectory(tau, R[::-1, :, 0].copy(), -Rdot[::-1, :, 0].copy(), t, backward=True)


# -- residual checks -----------------------------------------------------------------


def _quad(f, a, b) -> float:
    if b <= a:
        return 0.0
    return integrate.quad(f, a, b, epsabs=1e-14, epsrel=1e-11, limit=400)[0]


def ide_residual(traj: Trajectory, config: ModelConfig, n_check: int = 25,
                 kernels: Optional[Sequence[Callable]] = None) -> float:
    """Largest residual of the integrated equation of motion, relative to max |position|.

    Forward paths are checked against
    P(s) - P(0) + int_0^s F du + int_0^s gamma(s-u) Q(u) du = 0;
    backward paths against
    q'(t) - q'(s) + int_s^t F du + int_s^t gamma(u-s) q(u) du = 0,
    with F = w^2 q + (c/m) q_other.  Integrals use adaptive quadrature on a
    cubic Hermite interpolant, independent of the solver's own scheme.
    """
    if kernels is None:
        kernels = [lambda x, b=b: float(dissipation_kernel(x, b)) for b in config.baths]
    spline = traj.interpolant()
    m, w2, _, _ = _static_parts(config)
    t = traj.final_time
    # check at grid nodes so velocities need no interpolation
    nodes = np.unique(np.linspace(1, traj.s.size - 2, n_check).astype(int))
    worst = 0.0
    for a in range(2):
        other = 1 - a

        def force(u):
            x = spline(u)
            return w2[a] * x[a] + float(config.drive(u)) / m[a] * x[other]

        for i in nodes:
            sc = traj.s[i]
            if not traj.backward:
                mem = _quad(lambda u: kernels[a](sc - u) * spline(u)[a], 0.0, sc)
                res = traj.velocity[i, a] - traj.velocity[0, a] + _quad(force, 0.0, sc) + mem
            else:
                mem = _quad(lambda u: kernels[a](u - sc) * spline(u)[a], sc, t)
                res = traj.velocity[-1, a] - traj.velocity[i, a] + _quad(force, sc, t) + mem
            worst = max(worst, abs(res))
    return worst / max(np.abs(traj.position).max(), 1e-300)


# -- fundamental solutions and auxiliary functions ------------------------------------


@dataclass
class FundamentalSolutionSet:
    """Four forward and four time-reversed fundamental solutions for one final time.

    Column order of the last axis is (pos e1, pos e2, vel e1, vel e2) initial
    data.  Reversed solutions are stored in the reversed time tau = t - s.
    """

    t: float
    s: np.ndarray
    forward_pos: np.ndarray  # (n+1, 2, 4)
    forward_vel: np.ndarray
    reversed_pos: np.ndarray
    reversed_vel: np.ndarray

    @property
    def forward_condition(self) -> float:
        return _matching_condition(self.forward_pos[:, :, 2:4])

    @property
    def reversed_condition(self) -> float:
        return _matching_condition(self.reversed_pos[:, :, 2:4])


class ForwardFlow:
    """Dense forward fundamental solution on [0, horizon], shared by many final times.

    The forward equation does not depend on the final time, so one solve
    serves every t <= horizon.
    """

    def __init__(self, config: ModelConfig, horizon: float, rtol: float = 1e-12, atol: float = 1e-13,
                 method: str = "DOP853"):
        self.horizon = horizon
        self._sol = _embedding_solve(config, horizon, np.eye(4), config.drive, None, rtol, atol, method,
                                     dense=True)

    def __call__(self, s: np.ndarray):
        if s[-1] > self.horizon * (1 + 1e-12):
            raise ValueError("requested time beyond the cached horizon")
        y = self._sol.sol(s).reshape(6, 4, -1).transpose(2, 0, 1)
        return y[:, 0:2, :], y[:, 2:4, :]


def fundamental_solutions(config: ModelConfig, t: float, n: Optional[int] = None,
                          scheme: str = "embedding", forward: Optional[ForwardFlow] = None,
                          **kw) -> FundamentalSolutionSet:
    n = config.grid.n_inner if n is None else n
    eye = np.eye(4)
    if forward is not None and scheme == "embedding":
        s = _grid(t, n)
        fp, fv = forward(s)
    else:
        s, fp, fv = _integrate(config, t, n, eye, config.drive, scheme, **kw)
    _, rp, rv = _integrate(config, t, n, eye, _reversed_drive(config, t), scheme, **kw)
    return FundamentalSolutionSet(t, s, fp, fv, rp, rv)


def _matching_condition(Pb: np.ndarray) -> float:
    """Largest |Pb(s)| over the window divided by the smallest singular value of Pb(t).

    A plain condition number misses the resonance of identical oscillators,
    where Pb(t) is a vanishing multiple of the identity.
    """
    smallest = np.linalg.svd(Pb[-1], compute_uv=False)[-1]
    scale = np.abs(Pb).max()
    return float(scale / smallest) if smallest > 0 else np.inf


def _boundary_coefficients(pos, vel, t, which):
    """Coefficients (G, H) of the end value and the start value.

    For x(s) = Pa(s) x(0) + Pb(s) x'(0) with x(0) = start, x(t) = end:
    x(s) = G(s) end + H(s) start, G = Pb(s) Pb(t)^-1, H = Pa(s) - G(s) Pa(t).
    """
    Pa, Pb = pos[:, :, 0:2], pos[:, :, 2:4]
    Va, Vb = vel[:, :, 0:2], vel[:, :, 2:4]
    cond = _matching_condition(Pb)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularBoundaryError(t, cond, which)
    inv = np.linalg.inv(Pb[-1])
    G = Pb @ inv
    H = Pa - G @ Pa[-1]
    dG = Vb @ inv
    dH = Va - dG @ Pa[-1]
    # enforce the boundary pattern exactly (rounding only)
    G[0], G[-1] = 0.0, np.eye(2)
    H[0], H[-1] = np.eye(2), 0.0
    return G, H, dG, dH, cond


@dataclass
class AuxiliaryFunctions:
    """The sixteen boundary-value functions for one final time.

    ``values[name]`` and ``derivatives[name]`` (d/ds) are sampled on ``s``.
    Forward paths:  Q1 = U1 Q1' + U2 Q1'' + U3 Q2' + U4 Q2'',
                    Q2 = V1 Q2' + V2 Q2'' + V3 Q1' + V4 Q1''.
    Backward paths use u_i, v_i with the same pattern for q.
    """

    t: float
    s: np.ndarray
    values: dict
    derivatives: dict
    condition: tuple = (1.0, 1.0)

    def __getattr__(self, name):
        if name in AUX_NAMES:
            return self.values[name]
        raise AttributeError(name)

    def at_start(self, name: str, derivative: bool = True) -> float:
        return float((self.derivatives if derivative else self.values)[name][0])

    def at_end(self, name: str, derivative: bool = True) -> float:
        return float((self.derivatives if derivative else self.values)[name][-1])

    def noise_weights(self, alpha: int) -> np.ndarray:
        """Weights of (q1'', q2'', q1', q2') in q_alpha(s), shape (4, n+1)."""
        if alpha == 0:
            names = ("u2", "u4", "u1", "u3")
        else:
            names = ("v4", "v2", "v3", "v1")
        return np.stack([self.values[k] for k in names])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["s", *AUX_NAMES])
            for i, s in enumerate(self.s):
                writer.writerow([repr(float(s))] + [repr(float(self.values[k][i])) for k in AUX_NAMES])


def _pack(G, H, dG, dH, letters):
    """Map coefficient matrices onto named functions.

    First family (letters[0]) describes coordinate 1, second coordinate 2:
    X1 = H00 x1' + G00 x1'' + H01 x2' + G01 x2''.
    """
    first, second = letters
    pattern = {
        f"{first}1": (H, 0, 0), f"{first}2": (G, 0, 0), f"{first}3": (H, 0, 1), f"{first}4": (G, 0, 1),
        f"{second}1": (H, 1, 1), f"{second}2": (G, 1, 1), f"{second}3": (H, 1, 0), f"{second}4": (G, 1, 0),
    }
    deriv = {id(G): dG, id(H): dH}
    values = {k: mat[:, i, j].copy() for k, (mat, i, j) in pattern.items()}
    derivs = {k: deriv[id(mat)][:, i, j].copy() for k, (mat, i, j) in pattern.items()}
    return values, derivs


def assemble_auxiliary(config: ModelConfig, t: float, n: Optional[int] = None, scheme: str = "embedding",
                       forward: Optional[ForwardFlow] = None, **kw) -> AuxiliaryFunctions:
    """Solve both boundary-value problems at final time ``t``.

    Raises :class:`SingularBoundaryError` when a matching matrix is too
    ill-conditioned (e.g. sin(w t) = 0 without damping).
    """
    fs = fundamental_solutions(config, t, n, scheme, forward, **kw)
    G, H, dG, dH, cf = _boundary_coefficients(fs.forward_pos, fs.forward_vel, t, "forward")
    values, derivs = _pack(G, H, dG, dH, "UV")
    # reversed: r(tau) = Gr(tau) q' + Hr(tau) q'', since r(0) = q'' and r(t) = q'
    Gr, Hr, dGr, dHr, cr = _boundary_coefficients(fs.reversed_pos, fs.reversed_vel, t, "reversed")
    # q(s) = r(t - s): q' plays the role of the end value, q'' of the start value
    rv, rd = _pack(Hr[::-1], Gr[::-1], -dHr[::-1], -dGr[::-1], "uv")
    values.update(rv)
    derivs.update(rd)
    return AuxiliaryFunctions(t, fs.s, values, derivs, (cf, cr))
