"""Physical parameters, initial states and the simulation grid.

All quantities are dimensionless: hbar = k_B = m0 = omega0 = 1, so masses are
in units of a reference mass, frequencies and rates in units of a reference
frequency, times in units of its inverse and temperatures are k_B T / hbar
omega0.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class OscillatorParams:
    mass: float = 1.0
    frequency: float = 1.0


@dataclass(frozen=True)
class BathParams:
    """Drude bath: J(w) = m * coupling * w * cutoff**2 / (w**2 + cutoff**2).

    ``n_matsubara=None`` lets the kernel module pick the truncation.
    """

    coupling: float = 1e-3
    cutoff: float = 1.0
    temperature: float = 5.0
    n_matsubara: Optional[int] = None
    tail_correction: bool = True


@dataclass(frozen=True)
class DrivePolicy:
    """Time-dependent bilinear coupling c(t) between the two oscillators.

    Defaults to ``amplitude * cos(frequency * t)``; pass ``function`` to use an
    arbitrary callable instead (amplitude/frequency are then only metadata).
    """

    amplitude: float = 0.2
    frequency: float = 2.0
    function: Optional[Callable[[Any], Any]] = field(default=None, compare=False)

    def __call__(self, t):
        if self.function is not None:
            return self.function(t)
        return self.amplitude * np.cos(self.frequency * np.asarray(t, dtype=float))

    @property
    def is_harmonic(self) -> bool:
        return self.function is None


@dataclass(frozen=True)
class SimulationGrid:
    final_times: tuple = (10.0,)
    n_inner: int = 2000
    quadrature_order: int = 2

    def __post_init__(self):
        object.__setattr__(self, "final_times", tuple(float(t) for t in self.final_times))

    @classmethod
    def uniform(cls, horizon: float, n_times: int, n_inner: int = 2000, **kw) -> "SimulationGrid":
        return cls(tuple(np.linspace(0.0, horizon, n_times)), n_inner=n_inner, **kw)


@dataclass(frozen=True, eq=False)
class GaussianState:
    """First moments and covariance of the quadratures (q1, q2, p1, p2).

    ``cov[i, j] = <{xi_i, xi_j}>/2 - <xi_i><xi_j>``.
    """

    mean: np.ndarray
    cov: np.ndarray
    label: str = ""

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(4)
        cov = np.array(self.cov, dtype=float).reshape(4, 4)
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def __eq__(self, other):
        if not isinstance(other, GaussianState):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.cov, other.cov)

    @classmethod
    def product(cls, modes: Sequence[dict], label: str = "") -> "GaussianState":
        """Uncorrelated product of two single-mode Gaussians.

        Each mode dict may hold ``q``, ``p``, ``sqq``, ``spp``, ``sqp``.
        """
        mean = np.zeros(4)
        cov = np.zeros((4, 4))
        for a, mode in enumerate(modes):
            mean[a] = mode.get("q", 0.0)
            mean[2 + a] = mode.get("p", 0.0)
            cov[a, a] = mode["sqq"]
            cov[2 + a, 2 + a] = mode["spp"]
            cov[a, 2 + a] = cov[2 + a, a] = mode.get("sqp", 0.0)
        return cls(mean, cov, label)

    @classmethod
    def thermal(cls, oscillators: Sequence[OscillatorParams], nbar=(0.0, 0.0),
                label: str = "") -> "GaussianState":
        modes = []
        for osc, n in zip(oscillators, np.broadcast_to(nbar, (2,))):
            mw = osc.mass * osc.frequency
            modes.append({"sqq": (n + 0.5) / mw, "spp": (n + 0.5) * mw})
        return cls.product(modes, label or ("vacuum" if not np.any(nbar) else "thermal"))

    @classmethod
    def vacuum(cls, oscillators: Sequence[OscillatorParams]) -> "GaussianState":
        return cls.thermal(oscillators, (0.0, 0.0), "vacuum")

    @classmethod
    def squeezed(cls, oscillators: Sequence[OscillatorParams], r=(0.0, 0.0),
                 label: str = "squeezed") -> "GaussianState":
        modes = []
        for osc, rr in zip(oscillators, np.broadcast_to(r, (2,))):
            mw = osc.mass * osc.frequency
            modes.append({"sqq": 0.5 * math.exp(-2 * rr) / mw, "spp": 0.5 * math.exp(2 * rr) * mw})
        return cls.product(modes, label)

    def displaced(self, mean, label: Optional[str] = None) -> "GaussianState":
        return GaussianState(mean, self.cov, self.label if label is None else label)

    @property
    def is_factorized(self) -> bool:
        return bool(np.all(self.cov[np.ix_([0, 2], [1, 3])] == 0.0))


@dataclass(frozen=True)
class ModelConfig:
    osc1: OscillatorParams = OscillatorParams()
    osc2: OscillatorParams = OscillatorParams()
    bath1: BathParams = BathParams()
    bath2: BathParams = BathParams()
    drive: DrivePolicy = DrivePolicy()
    grid: SimulationGrid = SimulationGrid()
    initial: Optional[GaussianState] = None

    def __post_init__(self):
        if self.initial is None:
            object.__setattr__(self, "initial", GaussianState.vacuum(self.oscillators))

    @property
    def oscillators(self) -> tuple:
        return (self.osc1, self.osc2)

    @property
    def baths(self) -> tuple:
        return (self.bath1, self.bath2)

    @property
    def masses(self) -> np.ndarray:
        return np.array([self.osc1.mass, self.osc2.mass])

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([self.osc1.frequency, self.osc2.frequency])

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def with_value(self, path: str, value) -> "ModelConfig":
        """Return a copy with one parameter changed.

        ``path`` is ``section.field`` (e.g. ``bath2.temperature``); the
        pseudo-sections ``baths`` and ``oscs`` set both members at once, and
        ``initial`` accepts a :class:`GaussianState`.
        """
        if path == "initial":
            return self.replace(initial=value)
        section, _, name = path.partition(".")
        targets = {"baths": ("bath1", "bath2"), "oscs": ("osc1", "osc2")}.get(section, (section,))
        changes = {}
        for target in targets:
            if not hasattr(self, target) or target in ("initial",):
                raise KeyError(f"unknown parameter path {path!r}")
            obj = getattr(self, target)
            if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
                raise KeyError(f"unknown parameter path {path!r}")
            changes[target] = dataclasses.replace(obj, **{name: value})
        new = self.replace(**changes)
        valid = all(o.mass > 0 and o.frequency > 0 for o in new.oscillators)
        if section in ("osc1", "osc2", "oscs") and self.initial.label == "vacuum" and valid:
            new = new.replace(initial=GaussianState.vacuum(new.oscillators))
        return new


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def add(self, path: str, message: str) -> None:
        self.violations.append((path, message))

    def __str__(self) -> str:
        if self.ok:
            return "pass"
        return "\n".join(f"{p}: {m}" for p, m in self.violations)


def validate(config: ModelConfig) -> ValidationReport:
    """Check every parameter invariant; never raises."""
    report = ValidationReport()
    for name in ("osc1", "osc2"):
        osc = getattr(config, name)
        if not osc.mass > 0:
            report.add(f"{name}.mass", "mass must be positive")
        if not osc.frequency > 0:
            report.add(f"{name}.frequency", "frequency must be positive")
    for name in ("bath1", "bath2"):
        bath = getattr(config, name)
        if not bath.coupling >= 0:
            report.add(f"{name}.coupling", "coupling must be non-negative")
        if not bath.cutoff > 0:
            report.add(f"{name}.cutoff", "cutoff must be positive")
        if not bath.temperature >= 0:
            report.add(f"{name}.temperature", "temperature must be non-negative")
        if bath.n_matsubara is not None and not (int(bath.n_matsubara) == bath.n_matsubara
                                                 and bath.n_matsubara >= 1):
            report.add(f"{name}.n_matsubara", "Matsubara truncation must be a positive integer")
    times = np.asarray(config.grid.final_times, dtype=float)
    if times.size == 0:
        report.add("grid.final_times", "at least one final time is required")
    elif np.any(times < 0) or np.any(np.diff(times) <= 0) or not np.all(np.isfinite(times)):
        report.add("grid.final_times", "final times must be finite, non-negative and strictly increasing")
    if config.grid.n_inner < 2:
        report.add("grid.n_inner", "inner step count must be at least 2")
    if config.grid.quadrature_order not in (2,):
        report.add("grid.quadrature_order", "only second-order product integration is available")
    if times.size and np.all(np.isfinite(times)):
        try:
            values = np.asarray(config.drive(times), dtype=float)
            if not np.all(np.isfinite(values)):
                report.add("drive", "c(t) must be finite on the grid")
        except Exception as exc:  # report-style: never raise
            report.add("drive", f"c(t) could not be evaluated: {exc}")
    state = config.initial
    if not np.allclose(state.cov, state.cov.T):
        report.add("initial.cov", "covariance must be symmetric")
    elif np.any(np.diag(state.cov) <= 0):
        report.add("initial.cov", "covariance diagonal must be positive")
    else:
        omega = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
        if np.linalg.eigvalsh(state.cov + 0.5j * omega).min() < -1e-12:
            report.add("initial.cov", "covariance violates the uncertainty principle")
    return report


# -- flat key/value files -----------------------------------------------------

_SECTIONS = ("osc1", "osc2", "bath1", "bath2")


def to_dict(config: ModelConfig) -> dict:
    """Flatten a configuration into typed ``section.field`` keys."""
    if not config.drive.is_harmonic:
        raise ValueError("only the harmonic drive can be serialized")
    out: dict = {}
    for section in _SECTIONS:
        for f in dataclasses.fields(getattr(config, section)):
            out[f"{section}.{f.name}"] = getattr(getattr(config, section), f.name)
    out["drive.amplitude"] = config.drive.amplitude
    out["drive.frequency"] = config.drive.frequency
    out["grid.final_times"] = list(config.grid.final_times)
    out["grid.n_inner"] = config.grid.n_inner
    out["grid.quadrature_order"] = config.grid.quadrature_order
    out["initial.label"] = config.initial.label
    out["initial.mean"] = config.initial.mean.tolist()
    out["initial.cov"] = config.initial.cov.tolist()
    return out


def from_dict(data: dict) -> ModelConfig:
    known = set(to_dict(ModelConfig()))
    unknown = set(data) - known
    if unknown:
        raise KeyError(f"unknown configuration keys: {sorted(unknown)}")
    kwargs = {}
    for section, cls in zip(_SECTIONS, (OscillatorParams, OscillatorParams, BathParams, BathParams)):
        fields = {f.name: data[f"{section}.{f.name}"] for f in dataclasses.fields(cls)
                  if f"{section}.{f.name}" in data}
        kwargs[section] = cls(**fields)
    kwargs["drive"] = DrivePolicy(**{k.split(".")[1]: v for k, v in data.items() if k.startswith("drive.")})
    grid = {k.split(".")[1]: v for k, v in data.items() if k.startswith("grid.")}
    kwargs["grid"] = SimulationGrid(**grid)
    if "initial.cov" in data:
        kwargs["initial"] = GaussianState(data.get("initial.mean", [0.0] * 4), data["initial.cov"],
                                          data.get("initial.label", ""))
    return ModelConfig(**kwargs)


def dumps(config: ModelConfig) -> str:
    return json.dumps(to_dict(config), indent=1)


def loads(text: str) -> ModelConfig:
    return from_dict(json.loads(text))


def save(config: ModelConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(config) + "\n")


def load(path) -> ModelConfig:
    with open(path) as fh:
        return loads(fh.read())
