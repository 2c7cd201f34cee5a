"""Drude bath kernels: spectral density, dissipation and noise kernels.

The noise kernel is evaluated from its Matsubara expansion,

    K(s) = m g W^2 T sum_n [W e^{-W|s|} - |v_n| e^{-|v_n||s|}] / (W^2 - v_n^2),

with v_n = 2 pi n T, or by direct quadrature of its cosine-transform
definition.  The same expansion is exposed as a list of exponential modes
so that double integrals against the kernel can be done mode by mode.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from .model import BathParams, ModelConfig, OscillatorParams

# modes faster than this (in units of omega0) are folded into the local term
LOCAL_RATE = 1.0e3
# modes count as local only if they decay within 1/LOCAL_SPAN of the horizon
LOCAL_SPAN = 40.0
MAX_EXPLICIT_MODES = 20000
# relative gap below which a Matsubara frequency is treated as equal to the cutoff
DEGENERATE_RTOL = 1e-7


class KernelError(ValueError):
    pass


def spectral_density(omega, bath: BathParams, osc: OscillatorParams):
    omega = np.asarray(omega, dtype=float)
    if np.any(omega < 0):
        raise KernelError("spectral density is defined for omega >= 0")
    W = bath.cutoff
    return osc.mass * bath.coupling * omega * W**2 / (omega**2 + W**2)


def dissipation_kernel(s, bath: BathParams):
    """gamma(s) = coupling * cutoff * exp(-cutoff |s|), per unit mass."""
    s = np.asarray(s, dtype=float)
    return bath.coupling * bath.cutoff * np.exp(-bath.cutoff * np.abs(s))


def dissipation_kernel_quad(s: float, bath: BathParams, osc: Optional[OscillatorParams] = None) -> float:
    """gamma(s) from the cosine transform (2/m pi) int J(w)/w cos(ws) dw."""
    osc = osc or OscillatorParams()
    W = bath.cutoff

    def weight(w):
        return 2.0 / (np.pi * osc.mass) * osc.mass * bath.coupling * W**2 / (w**2 + W**2)

    s = abs(float(s))
    if s == 0.0:
        return integrate.quad(weight, 0, np.inf, epsabs=0, epsrel=1e-12)[0]
    return integrate.quad(weight, 0, np.inf, weight="cos", wvar=s, epsabs=1e-12 * bath.coupling * W,
                          limlst=200)[0]


def power_noise(omega, bath: BathParams, osc: OscillatorParams):
    """S(w) = J(w) coth(w / 2T) / 2m."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise KernelError("power noise is singular at omega = 0; use the high-temperature limit there")
    J = spectral_density(omega, bath, osc)
    if bath.temperature == 0:
        coth = np.ones_like(omega)
    else:
        with np.errstate(over="ignore"):
            coth = 1.0 / np.tanh(omega / (2.0 * bath.temperature))
    return J * coth / (2.0 * osc.mass)


# -- Matsubara series ------------------------------------------------------------


def _prefactor(bath: BathParams, osc: OscillatorParams) -> float:
    return osc.mass * bath.coupling * bath.cutoff**2 * bath.temperature


def _tail_cutoff_sum(bath: BathParams, n: int) -> float:
    """Integral estimate of sum_{k>n} 1/(W^2 - v_k^2)."""
    a = 2 * np.pi * bath.temperature
    W = bath.cutoff
    x0 = n + 0.5
    return -math.log((a * x0 + W) / (a * x0 - W)) / (2 * a * W)


def _tail_matsubara_sum(bath: BathParams, n: int, s):
    """Integral estimate of sum_{k>n} v_k e^{-v_k s} / (v_k^2 - W^2), s > 0."""
    a = 2 * np.pi * bath.temperature
    W = bath.cutoff
    x0 = n + 0.5
    with np.errstate(divide="ignore", over="ignore"):
        lead = special.exp1(a * x0 * s) / a
    return lead + W**2 * np.exp(-a * x0 * s) / (2 * a**3 * x0**2)


def _cutoff_ratio(bath: BathParams) -> float:
    """W / (2 pi T), saturating to inf instead of overflowing."""
    with np.errstate(over="ignore", divide="ignore"):
        return float(np.float64(bath.cutoff) / (2 * np.pi * np.float64(bath.temperature)))


def min_matsubara(bath: BathParams) -> int:
    """Smallest truncation for which the tail estimates are defined."""
    if bath.temperature <= 0:
        return 1
    ratio = _cutoff_ratio(bath)
    if not ratio < 10**7:
        return 10**7
    return max(1, int(math.ceil(ratio)) + 1)


def auto_matsubara(bath: BathParams, rtol: float = 1e-6, n_max: int = 10**6) -> int:
    """Truncation whose tail bound is below ``rtol`` of the partial sum.

    The partial sum is dominated by the zero-frequency term 1/W.  Without
    the tail correction the neglected cutoff-pole tail is ~ 2W/(a^2 n); with
    it, only the midpoint-rule error of the integral estimate remains,
    ~ W/(6 a^2 (n + 1/2)^3).
    """
    if bath.temperature <= 0:
        raise KernelError("Matsubara series needs T > 0; use the quadrature path")
    ratio = _cutoff_ratio(bath)
    if not ratio < n_max:  # the estimate below exceeds ratio, also catches inf
        return n_max
    if bath.tail_correction:
        est = max((ratio**2 / (6 * rtol)) ** (1 / 3), 4 * ratio, 32)
    else:
        est = 2 * ratio**2 / rtol
    return int(min(max(math.ceil(est), min_matsubara(bath)), n_max))


def resolve_matsubara(bath: BathParams) -> int:
    if bath.n_matsubara is not None:
        return max(int(bath.n_matsubara), min_matsubara(bath) if bath.tail_correction else 1)
    return auto_matsubara(bath)


def _pair_terms(s, W: float, nu: np.ndarray):
    """[W e^{-W s} - v e^{-v s}] / (W^2 - v^2) for s >= 0, removable pole handled."""
    s = np.asarray(s, dtype=float)[..., None]
    degenerate = np.abs(nu - W) <= DEGENERATE_RTOL * W
    nu_safe = np.where(degenerate, W * 2 + 1.0, nu)
    with np.errstate(over="ignore", under="ignore"):
        regular = (W * np.exp(-W * s) - nu_safe * np.exp(-nu_safe * s)) / (W**2 - nu_safe**2)
    limit = (1.0 - W * s) * np.exp(-W * s) / (2.0 * W)
    return np.where(degenerate, limit, regular)


def noise_kernel(s, bath: BathParams, osc: OscillatorParams, n_matsubara: Optional[int] = None,
                 method: str = "series", tail: Optional[bool] = None):
    """Noise kernel K(s) of a Drude bath.

    ``method="series"`` sums ``n_matsubara`` Matsubara terms (auto-selected
    when None) plus an integral estimate of the remaining tail; it requires
    T > 0.  ``method="quadrature"`` integrates the cosine transform directly
    and works at any temperature.  K is even in s and diverges
    logarithmically at s = 0 whenever the tail is kept, so ``inf`` is
    returned there.
    """
    if method == "quadrature":
        return _noise_kernel_quad(s, bath, osc)
    if method != "series":
        raise ValueError(f"unknown method {method!r}")
    if bath.temperature <= 0:
        raise KernelError("zero temperature: Matsubara spacing diverges, use quadrature path "
                          "(method='quadrature')")
    tail = bath.tail_correction if tail is None else tail
    n = resolve_matsubara(bath) if n_matsubara is None else int(n_matsubara)
    s_abs = np.abs(np.asarray(s, dtype=float))
    W = bath.cutoff
    nu = 2 * np.pi * bath.temperature * np.arange(1, n + 1)
    total = np.exp(-W * s_abs) / W + 2.0 * _pair_terms(s_abs, W, nu).sum(axis=-1)
    if tail:
        with np.errstate(divide="ignore"):
            total = total + 2.0 * (W * np.exp(-W * s_abs) * _tail_cutoff_sum(bath, n)
                                   + np.where(s_abs > 0, _tail_matsubara_sum(bath, n, s_abs), np.inf))
    out = _prefactor(bath, osc) * total
    return out if np.ndim(out) else float(out)


def noise_partial_sums(s: float, bath: BathParams, osc: OscillatorParams, n_max: int) -> np.ndarray:
    """Partial sums K_N(s), N = 0..n_max, without tail correction."""
    W = bath.cutoff
    nu = 2 * np.pi * bath.temperature * np.arange(1, n_max + 1)
    terms = 2.0 * _pair_terms(abs(s), W, nu)
    head = math.exp(-W * abs(s)) / W
    return _prefactor(bath, osc) * (head + np.concatenate([[0.0], np.cumsum(terms)]))


def _noise_kernel_quad(s, bath: BathParams, osc: OscillatorParams):
    def single(x):
        x = abs(float(x))
        W, T = bath.cutoff, bath.temperature

        def weight(w):
            # J(w) coth(w/2T) / pi, finite at w = 0 for T > 0
            if T == 0:
                return osc.mass * bath.coupling * W**2 * w / (w**2 + W**2) / np.pi
            wc = np.where(w == 0, 1.0, w)
            with np.errstate(over="ignore"):
                jc = osc.mass * bath.coupling * W**2 / (wc**2 + W**2) * (wc / np.tanh(wc / (2 * T)))
            jc = np.where(w == 0, osc.mass * bath.coupling * 2 * T, jc)
            return jc / np.pi

        if x == 0:
            return np.inf
        scale = osc.mass * bath.coupling * W * max(T, W, 1.0)
        return integrate.quad(weight, 0, np.inf, weight="cos", wvar=x, epsabs=1e-12 * scale,
                              limlst=500)[0]

    if np.ndim(s) == 0:
        return single(s)
    return np.vectorize(single, otypes=[float])(s)


# -- exponential-mode decomposition ---------------------------------------------


@dataclass(frozen=True)
class KernelModes:
    """K(s) = sum_j weights[j] * kernel_j(|s|) + local part.

    ``kinds`` is ``"exp"`` for e^{-rate s} or ``"sexp"`` for s e^{-rate s}.
    Modes faster than :data:`LOCAL_RATE` act as a sharp peak around s = 0:
    their contribution to (1/2) int int_[0,t]^2 K f_i f_j for smooth weights is
    ``local[0] * int f_i f_j - local[1] * (f_i f_j(0) + f_i f_j(t)) / 2``.
    """

    rates: np.ndarray
    weights: np.ndarray
    kinds: tuple
    local: tuple = (0.0, 0.0)
    n_matsubara: int = 0


def kernel_modes(bath: BathParams, osc: OscillatorParams, n_matsubara: Optional[int] = None,
                 local_rate: float = LOCAL_RATE) -> KernelModes:
    if bath.temperature <= 0:
        raise KernelError("exponential-mode decomposition needs T > 0")
    n = resolve_matsubara(bath) if n_matsubara is None else int(n_matsubara)
    C = _prefactor(bath, osc)
    W = bath.cutoff
    a = 2 * np.pi * bath.temperature
    nu = a * np.arange(1, n + 1)
    degenerate = np.abs(nu - W) <= DEGENERATE_RTOL * W
    regular = ~degenerate
    cutoff_weight = 1.0 / W + 2 * W * np.sum(1.0 / (W**2 - nu[regular] ** 2))
    if bath.tail_correction:
        cutoff_weight += 2 * W * _tail_cutoff_sum(bath, n)
    rates = [W]
    weights = [C * cutoff_weight]
    kinds = ["exp"]
    if np.any(degenerate):
        # 2 (1 - W s) e^{-W s} / (2W)
        rates += [W, W]
        weights += [C / W, -C]
        kinds += ["exp", "sexp"]
    fast = regular & (nu > local_rate)
    slow = regular & ~fast
    rates += list(nu[slow])
    weights += list(2 * C * nu[slow] / (nu[slow] ** 2 - W**2))
    kinds += ["exp"] * int(slow.sum())
    nf = nu[fast]
    # a mode w e^{-v|s|} contributes (w/v) int f f - (w/v^2)(boundary)/2
    loc0 = float(np.sum(2 * C / (nf**2 - W**2)))
    loc1 = float(np.sum(2 * C / (nf * (nf**2 - W**2))))
    if bath.tail_correction:
        x0 = n + 0.5
        loc0 += 2 * C * (-_tail_cutoff_sum(bath, n))
        loc1 += 2 * C * math.log(a**2 * x0**2 / (a**2 * x0**2 - W**2)) / (2 * a * W**2)
    return KernelModes(np.array(rates), np.array(weights), tuple(kinds), (loc0, loc1), n)


# -- tabulated kernel set ------------------------------------------------------------


@dataclass
class MemoryKernelSet:
    """Dissipation and noise kernels of both baths."""

    config: ModelConfig
    n_matsubara: tuple = field(init=False)
    method: str = "series"

    def __post_init__(self):
        if self.method == "series":
            self.n_matsubara = tuple(resolve_matsubara(b) if b.temperature > 0 else 0
                                     for b in self.config.baths)
        else:
            self.n_matsubara = (0, 0)

    def gamma(self, alpha: int, s):
        return dissipation_kernel(s, self.config.baths[alpha])

    def noise(self, alpha: int, s):
        bath = self.config.baths[alpha]
        osc = self.config.oscillators[alpha]
        if bath.coupling == 0:
            return np.zeros_like(np.asarray(s, dtype=float))
        method = self.method if bath.temperature > 0 else "quadrature"
        n = self.n_matsubara[alpha] or None
        return noise_kernel(s, bath, osc, n_matsubara=n, method=method)

    def modes(self, alpha: int, horizon: Optional[float] = None) -> KernelModes:
        """Exponential modes; with ``horizon`` every mode slower than LOCAL_SPAN / horizon is explicit.

        The local treatment of fast modes is only valid when they decay well
        within the integration window, which matters for short final times.
        """
        bath = self.config.baths[alpha]
        n = self.n_matsubara[alpha] or resolve_matsubara(bath)
        local_rate = LOCAL_RATE
        if horizon is not None and horizon > 0:
            local_rate = max(LOCAL_RATE, LOCAL_SPAN / horizon)
            needed = min(local_rate / (2 * np.pi * bath.temperature), MAX_EXPLICIT_MODES)
            n = max(n, int(math.ceil(needed)))
        return kernel_modes(bath, self.config.oscillators[alpha], n, local_rate)

    def modal_resolvable(self, alpha: int, horizon: float) -> bool:
        """Whether :meth:`modes` can make every non-local mode explicit for this horizon."""
        bath = self.config.baths[alpha]
        if bath.temperature <= 0:
            return False
        rate = max(LOCAL_RATE, LOCAL_SPAN / horizon)
        return rate / (2 * np.pi * bath.temperature) <= MAX_EXPLICIT_MODES

    def tabulate(self, s) -> dict:
        s = np.asarray(s, dtype=float)
        return {"s": s, "gamma1": self.gamma(0, s), "K1": self.noise(0, s),
                "gamma2": self.gamma(1, s), "K2": self.noise(1, s)}

    def to_csv(self, path, s) -> None:
        table = self.tabulate(s)
        cols = ["s", "gamma1", "K1", "gamma2", "K2"]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in zip(*(table[c] for c in cols)):
                writer.writerow([repr(float(v)) for v in row])
