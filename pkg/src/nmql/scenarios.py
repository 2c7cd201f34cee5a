"""Experiment scenarios: parameter sweeps over the full pipeline.

A scenario is a base configuration plus one or more sweep axes.  Each sweep
point runs kernels -> boundary-value solves -> propagator -> moments ->
log-negativity, writes one CSV with the time series, and contributes a row
to the scenario summary (steady E_N per sweep point).
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import model
from .entanglement import entanglement_trace, log_negativity, steady_state
from .gaussian_moments import moment_trace
from .model import BathParams, DrivePolicy, GaussianState, ModelConfig, OscillatorParams, SimulationGrid

log = logging.getLogger(__name__)

DEFAULT_HORIZON = 80.0
DEFAULT_TIMES = 161
DEFAULT_INNER = 2000
# bump when the output layout changes, so stale cached results are recomputed
OUTPUT_VERSION = 1


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    config: ModelConfig
    axes: tuple = ()  # ((path, (values...)), ...)
    oracle: bool = False
    oracle_modes: int = 300

    def points(self) -> list:
        """Cartesian product of the sweep axes as a list of {path: value} dicts."""
        if not self.axes:
            return [{}]
        paths = [p for p, _ in self.axes]
        return [dict(zip(paths, combo)) for combo in itertools.product(*(v for _, v in self.axes))]

    def config_for(self, point: dict) -> ModelConfig:
        cfg = self.config
        for path, value in point.items():
            cfg = cfg.with_value(path, value)
        return cfg

    def with_grid(self, grid: SimulationGrid) -> "Scenario":
        return dataclasses.replace(self, config=self.config.replace(grid=grid))

    def with_config(self, config: ModelConfig) -> "Scenario":
        return dataclasses.replace(self, config=config)


def _base(**kw) -> ModelConfig:
    """Symmetric driven setup: gamma = 1e-3, c1 = 0.2, drive at twice the frequency."""
    bath = BathParams(coupling=kw.pop("coupling", 1e-3), cutoff=kw.pop("cutoff", 1.0),
                      temperature=kw.pop("temperature", 5.0))
    grid = SimulationGrid.uniform(kw.pop("horizon", DEFAULT_HORIZON), kw.pop("n_times", DEFAULT_TIMES),
                                  n_inner=kw.pop("n_inner", DEFAULT_INNER))
    cfg = ModelConfig(bath1=bath, bath2=bath, drive=DrivePolicy(0.2, 2.0), grid=grid)
    return cfg.replace(**kw) if kw else cfg


def initial_state_family(oscillators=(OscillatorParams(), OscillatorParams())) -> tuple:
    """The four documented initial states of the initial-state sweep."""
    vac = GaussianState.vacuum(oscillators)
    return (
        vac,
        GaussianState.thermal(oscillators, (2.0, 2.0), "thermal_nbar2"),
        GaussianState.squeezed(oscillators, (0.5, 0.0), "squeezed_r0.5_mode1"),
        vac.displaced([2.0, 0.0, 0.0, 0.0], "displaced_q1_2"),
    )


def _registry() -> dict:
    cutoffs = ("baths.cutoff", (1.0, 20.0))
    items = [
        Scenario("fig1_temperature", "steady E_N vs temperature, cutoff 1 (non-Markovian) and 20 (Markovian)",
                 _base(), (cutoffs, ("baths.temperature", (1.0, 2.5, 5.0, 7.5, 10.0, 15.0)))),
        Scenario("fig2_coupling", "steady E_N vs bath coupling at T = 5, cutoff 1 and 20",
                 _base(), (cutoffs, ("baths.coupling", (5e-4, 1e-3, 2e-3, 4e-3, 8e-3)))),
        Scenario("fig3_initial_state", "four initial states at T = 10, cutoff 1; steady E_N should coincide",
                 _base(temperature=10.0), (("initial", initial_state_family()),)),
        Scenario("fig4_diff_temp", "second-bath temperature sweep with T1 = 20",
                 _base(temperature=20.0), (cutoffs, ("bath2.temperature", (5.0, 10.0, 20.0, 30.0, 40.0)))),
        Scenario("fig5_diff_gamma", "second-bath coupling sweep with gamma1 = 5e-3, T = 5",
                 _base(coupling=5e-3), (cutoffs, ("bath2.coupling", (1e-3, 2.5e-3, 5e-3, 1e-2)))),
        Scenario("fig6_freq_ratio", "unequal frequencies w2/w1 at T = 60, cutoff w1",
                 _base(temperature=60.0), (("osc2.frequency", (1.0, 1.02, 1.05, 1.1, 1.2)),)),
        Scenario("fig6_mass_ratio", "unequal masses m2/m1 at T = 60, cutoff w",
                 _base(temperature=60.0), (("osc2.mass", (1.0, 2.0, 5.0, 10.0)),)),
        Scenario("oracle_xcheck", "symmetric driven point (T = 5, cutoff 1) up to t = 30 checked against the discrete bath",
                 _base(horizon=30.0, n_times=61), (), oracle=True),
        Scenario("markov_limit", "undriven thermalization with cutoff 20, gamma = 1e-2, T = 1",
                 _base(cutoff=20.0, coupling=1e-2, temperature=1.0, horizon=700.0, n_times=71, n_inner=8000)
                 .replace(drive=DrivePolicy(0.0, 2.0))),
        Scenario("quantum_limit_grid", "5 x 5 (T, gamma) grid at cutoff 1 for the quantum-limit predicate",
                 _base(), (("baths.temperature", (2.0, 5.0, 10.0, 20.0, 40.0)),
                           ("baths.coupling", (1e-3, 2e-3, 4e-3, 8e-3, 1.6e-2)))),
    ]
    return {s.name: s for s in items}


SCENARIOS = _registry()


class UnknownScenario(KeyError):
    pass


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; valid names: {', '.join(sorted(SCENARIOS))}") from None


def list_scenarios() -> list:
    return [(s.name, s.description) for s in SCENARIOS.values()]


# -- running --------------------------------------------------------------------------


def drive_period(config: ModelConfig) -> float:
    if config.drive.is_harmonic and config.drive.amplitude != 0 and config.drive.frequency > 0:
        return 2 * np.pi / config.drive.frequency
    return 2 * np.pi / float(np.min(config.frequencies))


def _point_label(point: dict) -> str:
    parts = []
    for path, value in point.items():
        shown = value.label if isinstance(value, GaussianState) else f"{value:g}"
        parts.append(f"{path}={shown}")
    return ";".join(parts) or "base"


def content_hash(config: ModelConfig, oracle: bool) -> str:
    payload = json.dumps({"config": model.to_dict(config), "oracle": oracle, "version": OUTPUT_VERSION},
                         sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        write(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)


def _oracle_error(config: ModelConfig, trace, n_modes: int) -> float:
    """Worst covariance error against the discrete bath, as a fraction of the tolerance.

    The tolerance per entry is max(1e-3 |ref|, 1e-6); values <= 1 pass.  The
    mode count grows with the horizon so the bath does not recur.
    """
    from .oracle import discretize_bath, evolve_full

    horizon = float(trace.times[-1])
    baths = []
    for b, o in zip(config.baths, config.oscillators):
        omega_max = 20.0 * max(b.cutoff, o.frequency)
        n = max(n_modes, int(np.ceil(1.25 * omega_max * horizon / (2 * np.pi))))
        baths.append(discretize_bath(b, o, n, omega_max))
    ref = evolve_full(config, baths=baths, times=trace.times, method="adjoint").trace.covariances
    return oracle_tolerance_ratio(trace.covariances, ref)


def oracle_tolerance_ratio(covs, ref, rtol: float = 1e-3, floor: float = 1e-6) -> float:
    covs, ref = np.asarray(covs), np.asarray(ref)
    return float(np.max(np.abs(covs - ref) / np.maximum(rtol * np.abs(ref), floor)))


def run_point(config: ModelConfig, oracle: bool = False, oracle_modes: int = 300) -> dict:
    """Full pipeline for one configuration; returns the traces and summary numbers."""
    trace = moment_trace(config)
    period = drive_period(config)
    ent = entanglement_trace(trace.times, trace.covariances,
                             period if trace.times[-1] - trace.times[0] >= period else None)
    result = {"trace": trace, "entanglement": ent, "steady_EN": ent.steady, "steady_std": ent.steady_std,
              "min_symplectic": float(np.min(trace.min_symplectic)),
              "min_pt_symplectic": float(np.min(ent.pt_spectra[:, 0])), "oracle_tol_ratio": np.nan}
    if oracle:
        result["oracle_tol_ratio"] = _oracle_error(config, trace, oracle_modes)
    return result


def _write_point_csv(path, result) -> None:
    trace, ent = result["trace"], result["entanglement"]
    iu = np.triu_indices(4)
    names = ["q1", "q2", "p1", "p2"]
    header = (["t", "E_N"] + [f"mean_{n}" for n in names]
              + [f"cov_{names[i]}_{names[j]}" for i, j in zip(*iu)]
              + ["min_symplectic", "min_pt_symplectic", "steady_window"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k, t in enumerate(trace.times):
            row = [t, ent.values[k], *trace.means[k], *trace.covariances[k][iu],
                   ent.spectra[k, 0], ent.pt_spectra[k, 0]]
            writer.writerow([repr(float(v)) for v in row] + [int(ent.in_window[k])])


SUMMARY_FIELDS = ("index", "point", "status", "steady_EN", "steady_std", "min_symplectic",
                  "min_pt_symplectic", "oracle_tol_ratio", "csv", "hash", "message")


def _run_one(args) -> dict:
    index, point, config, oracle, oracle_modes, out_dir, name = args
    label = _point_label(point)
    digest = content_hash(config, oracle)
    csv_path = Path(out_dir) / f"{name}_{index:03d}.csv"
    meta_path = csv_path.with_suffix(".json")
    if meta_path.exists() and csv_path.exists():
        meta = json.loads(meta_path.read_text())
        if meta.get("hash") == digest and meta.get("status") == "ok":
            meta["message"] = "cached"
            return meta
    row = {"index": index, "point": label, "csv": csv_path.name, "hash": digest}
    try:
        report = model.validate(config)
        if not report.ok:
            raise ValueError(str(report))
        result = run_point(config, oracle, oracle_modes)
    except Exception as exc:
        log.warning("%s point %s failed: %s", name, label, exc)
        row.update(status="failed", message=f"{type(exc).__name__}: {exc}", steady_EN=np.nan,
                   steady_std=np.nan, min_symplectic=np.nan, min_pt_symplectic=np.nan, oracle_tol_ratio=np.nan)
        return row
    _atomic_write(csv_path, lambda p: _write_point_csv(p, result))
    row.update(status="ok", message="", **{k: result[k] for k in
                                          ("steady_EN", "steady_std", "min_symplectic",
                                           "min_pt_symplectic", "oracle_tol_ratio")})
    _atomic_write(meta_path, lambda p: Path(p).write_text(json.dumps(row, default=float)))
    return row


@dataclass
class ScenarioResult:
    name: str
    rows: list = field(default_factory=list)
    summary_path: Optional[Path] = None

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r["status"] != "ok"]


def run_scenario(scenario: Scenario, out_dir, threads: int = 1, oracle: Optional[bool] = None) -> ScenarioResult:
    """Run every sweep point; failures are recorded and the sweep continues."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oracle = scenario.oracle if oracle is None else oracle
    jobs = []
    for index, point in enumerate(scenario.points()):
        try:
            config = scenario.config_for(point)
        except Exception as exc:
            jobs.append(exc)
            continue
        jobs.append((index, point, config, oracle, scenario.oracle_modes, str(out_dir), scenario.name))
    runnable = [j for j in jobs if not isinstance(j, Exception)]
    if threads > 1 and len(runnable) > 1:
        with ProcessPoolExecutor(threads) as pool:
            done = list(pool.map(_run_one, runnable))
    else:
        done = [_run_one(j) for j in runnable]
    rows = []
    it = iter(done)
    for index, job in enumerate(jobs):
        if isinstance(job, Exception):
            rows.append({"index": index, "point": "invalid", "status": "failed", "message": str(job)})
        else:
            rows.append(next(it))
    summary = out_dir / f"{scenario.name}_summary.csv"

    def write(path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, extrasaction="ignore")
            writer.writeheader()
            for r in rows:
                writer.writerow({k: r.get(k, "") for k in SUMMARY_FIELDS})

    _atomic_write(summary, write)
    return ScenarioResult(scenario.name, rows, summary)


def steady_log_negativity(config: ModelConfig, horizon: float, n_points: int = 9,
                          n_inner: Optional[int] = None) -> tuple:
    """Steady E_N from final times covering only the last drive period before ``horizon``."""
    period = drive_period(config)
    times = tuple(np.linspace(horizon - period, horizon, n_points))
    grid = SimulationGrid(times, n_inner=n_inner or config.grid.n_inner)
    trace = moment_trace(config.replace(grid=grid))
    values = np.array([log_negativity(c) for c in trace.covariances])
    mean, std, _ = steady_state(trace.times, values, period)
    return mean, std, trace
