"""scikit-learn style wrappers around the moment pipeline.

``fit`` builds the configuration and the kernel set from flat
hyper-parameters; ``transform`` maps a column of final times to moments or
log-negativity.  Useful for grid searches over bath parameters with the
usual ``get_params``/``set_params``/``clone`` machinery.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import model
from .entanglement import log_negativity
from .gaussian_moments import moment_trace
from .kernels import MemoryKernelSet
from .model import BathParams, DrivePolicy, GaussianState, ModelConfig, OscillatorParams, SimulationGrid


class MomentPropagator(TransformerMixin, BaseEstimator):
    """Gaussian moments of the two driven oscillators at requested times.

    Parameters
    ----------
    coupling, cutoff, temperature : float
        Shared bath parameters (both baths identical).
    amplitude, drive_frequency : float
        Harmonic modulation of the inter-oscillator coupling.
    mass2, frequency2 : float
        Second oscillator; the first has unit mass and frequency.
    n_inner : int
        Inner steps per boundary-value solve.
    initial : GaussianState or None
        Initial state; ``None`` means the vacuum of the chosen oscillators.

    Notes
    -----
    ``transform`` returns shape (n, 14): the mean (q1, q2, p1, p2) followed
    by the upper triangle of the covariance in row-major order.
    """

    def __init__(self, coupling=1e-3, cutoff=1.0, temperature=5.0, amplitude=0.2, drive_frequency=2.0,
                 mass2=1.0, frequency2=1.0, n_inner=2000, initial=None):
        self.coupling = coupling
        self.cutoff = cutoff
        self.temperature = temperature
        self.amplitude = amplitude
        self.drive_frequency = drive_frequency
        self.mass2 = mass2
        self.frequency2 = frequency2
        self.n_inner = n_inner
        self.initial = initial

    def _config(self, times) -> ModelConfig:
        bath = BathParams(coupling=self.coupling, cutoff=self.cutoff, temperature=self.temperature)
        oscs = (OscillatorParams(), OscillatorParams(self.mass2, self.frequency2))
        initial = self.initial if self.initial is not None else GaussianState.vacuum(oscs)
        return ModelConfig(osc1=oscs[0], osc2=oscs[1], bath1=bath, bath2=bath,
                           drive=DrivePolicy(self.amplitude, self.drive_frequency),
                           grid=SimulationGrid(tuple(times), n_inner=self.n_inner), initial=initial)

    def fit(self, X=None, y=None):
        config = self._config((1.0,))
        report = model.validate(config)
        if not report.ok:
            raise ValueError(str(report))
        self.config_ = config
        self.kernels_ = MemoryKernelSet(config)
        return self

    @staticmethod
    def _times(X) -> np.ndarray:
        times = np.asarray(X, dtype=float).reshape(-1)
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError("final times must be strictly increasing")
        return times

    def trace(self, X):
        check_is_fitted(self, "kernels_")
        config = self.config_.replace(grid=SimulationGrid(tuple(self._times(X)), n_inner=self.n_inner))
        return moment_trace(config, kernels=self.kernels_)

    def transform(self, X):
        tr = self.trace(X)
        iu = np.triu_indices(4)
        return np.hstack([tr.means, tr.covariances[:, iu[0], iu[1]]])


class LogNegativityEstimator(MomentPropagator):
    """Same hyper-parameters; ``transform`` returns E_N with shape (n, 1)."""

    def transform(self, X):
        tr = self.trace(X)
        return np.array([[log_negativity(c)] for c in tr.covariances])
