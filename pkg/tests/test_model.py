import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nmql import model
from nmql.model import (BathParams, DrivePolicy, GaussianState, ModelConfig, OscillatorParams,
                        SimulationGrid, validate)


def test_defaults_are_valid():
    cfg = ModelConfig()
    assert validate(cfg).ok
    assert cfg.initial.label == "vacuum"
    np.testing.assert_allclose(cfg.initial.cov, 0.5 * np.eye(4))


@pytest.mark.parametrize("path,value,field", [
    ("osc1.mass", 0.0, "osc1.mass"),
    ("osc2.frequency", -1.0, "osc2.frequency"),
    ("bath1.coupling", -1e-3, "bath1.coupling"),
    ("bath2.cutoff", 0.0, "bath2.cutoff"),
    ("bath1.temperature", -1.0, "bath1.temperature"),
    ("bath1.n_matsubara", 0, "bath1.n_matsubara"),
])
def test_validation_names_the_offending_field(path, value, field):
    report = validate(ModelConfig().with_value(path, value))
    assert not report.ok
    assert any(v[0] == field for v in report.violations)


def test_grid_must_increase():
    report = validate(ModelConfig(grid=SimulationGrid((2.0, 1.0))))
    assert not report.ok


def test_unphysical_initial_state_rejected():
    bad = GaussianState(np.zeros(4), np.diag([0.1, 0.5, 0.1, 0.5]))
    assert not validate(ModelConfig(initial=bad)).ok


def test_non_finite_drive_reported():
    cfg = ModelConfig(drive=DrivePolicy(function=lambda t: np.full_like(np.asarray(t, float), np.nan)))
    assert not validate(cfg).ok


def test_with_value_pseudo_sections_set_both():
    cfg = ModelConfig().with_value("baths.temperature", 7.0)
    assert cfg.bath1.temperature == cfg.bath2.temperature == 7.0
    with pytest.raises(KeyError):
        ModelConfig().with_value("bath3.temperature", 1.0)
    with pytest.raises(KeyError):
        ModelConfig().with_value("bath1.nope", 1.0)


def test_vacuum_follows_oscillator_change():
    cfg = ModelConfig().with_value("osc2.mass", 4.0)
    # vacuum of a heavier oscillator: <q^2> = 1/(2 m w), <p^2> = m w / 2
    assert cfg.initial.cov[1, 1] == pytest.approx(1 / 8)
    assert cfg.initial.cov[3, 3] == pytest.approx(2.0)


def test_state_constructors():
    oscs = (OscillatorParams(), OscillatorParams())
    th = GaussianState.thermal(oscs, (1.0, 1.0))
    np.testing.assert_allclose(np.diag(th.cov), 1.5)
    sq = GaussianState.squeezed(oscs, (0.5, 0.0))
    assert sq.cov[0, 0] * sq.cov[2, 2] == pytest.approx(0.25)
    assert sq.is_factorized
    d = th.displaced([1, 2, 3, 4], "shifted")
    assert d.label == "shifted" and np.array_equal(d.cov, th.cov)


def test_states_are_immutable():
    s = GaussianState.vacuum((OscillatorParams(), OscillatorParams()))
    with pytest.raises(ValueError):
        s.cov[0, 0] = 3.0


def test_json_round_trip(tmp_path):
    cfg = ModelConfig(osc2=OscillatorParams(2.0, 1.1), bath2=BathParams(2e-3, 20.0, 3.0, n_matsubara=50),
                      grid=SimulationGrid.uniform(10, 11, 300),
                      initial=GaussianState.squeezed((OscillatorParams(), OscillatorParams(2.0, 1.1)), (0.2, 0.1)))
    path = tmp_path / "cfg.json"
    model.save(cfg, path)
    back = model.load(path)
    assert back == cfg
    assert json.loads(path.read_text())["bath2.cutoff"] == 20.0


def test_unknown_keys_rejected():
    data = model.to_dict(ModelConfig())
    data["bath1.colour"] = "blue"
    with pytest.raises(KeyError):
        model.from_dict(data)


def test_custom_drive_not_serializable():
    with pytest.raises(ValueError):
        model.to_dict(ModelConfig(drive=DrivePolicy(function=np.sin)))


@settings(max_examples=40, deadline=None)
@given(coupling=st.floats(0, 0.1), cutoff=st.floats(0.1, 50), temperature=st.floats(0, 100),
       mass=st.floats(0.1, 10), amp=st.floats(-1, 1))
def test_round_trip_property(coupling, cutoff, temperature, mass, amp):
    cfg = ModelConfig(osc1=OscillatorParams(mass, 1.0), bath1=BathParams(coupling, cutoff, temperature),
                      drive=DrivePolicy(amp, 2.0))
    assert model.loads(model.dumps(cfg)) == cfg
