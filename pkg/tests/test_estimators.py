import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nmql.entanglement import log_negativity
from nmql.estimators import LogNegativityEstimator, MomentPropagator
from nmql.gaussian_moments import moment_trace
from nmql.model import BathParams, DrivePolicy, ModelConfig, SimulationGrid

TIMES = np.array([[1.0], [2.5], [4.0]])


def test_transform_matches_direct_pipeline():
    est = MomentPropagator(coupling=2e-3, temperature=3.0, n_inner=300).fit()
    out = est.transform(TIMES)
    assert out.shape == (3, 14)
    bath = BathParams(coupling=2e-3, cutoff=1.0, temperature=3.0)
    cfg = ModelConfig(bath1=bath, bath2=bath, drive=DrivePolicy(0.2, 2.0),
                      grid=SimulationGrid((1.0, 2.5, 4.0), n_inner=300))
    tr = moment_trace(cfg)
    np.testing.assert_array_equal(out[:, :4], tr.means)
    iu = np.triu_indices(4)
    np.testing.assert_array_equal(out[:, 4:], tr.covariances[:, iu[0], iu[1]])


def test_log_negativity_estimator():
    est = LogNegativityEstimator(n_inner=300).fit()
    out = est.transform(TIMES)
    covs = MomentPropagator(n_inner=300).fit().trace(TIMES).covariances
    np.testing.assert_array_equal(out[:, 0], [log_negativity(c) for c in covs])
    assert np.all(out >= 0)


def test_sklearn_protocol():
    est = MomentPropagator(temperature=2.0)
    assert clone(est).get_params()["temperature"] == 2.0
    est.set_params(coupling=5e-3)
    assert est.get_params()["coupling"] == 5e-3
    with pytest.raises(NotFittedError):
        est.transform(TIMES)


def test_invalid_hyper_parameters_rejected_at_fit():
    with pytest.raises(ValueError, match="bath1.coupling"):
        MomentPropagator(coupling=-1.0).fit()


def test_times_must_increase():
    est = MomentPropagator(n_inner=100).fit()
    with pytest.raises(ValueError):
        est.transform([[2.0], [1.0]])
