import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from nmql.entanglement import symplectic_values
from nmql.gaussian_moments import (MomentTrace, NumericalFailure, TracePointError, density_matrix_element,
                                   moment_map, moment_trace, propagate)
from nmql.model import BathParams, DrivePolicy, GaussianState, ModelConfig, OscillatorParams, SimulationGrid
from nmql.propagator import assemble_propagator
from nmql.scenarios import SCENARIOS

from oracles import symplectic_flow, trace_on_grid

FREE = ModelConfig(bath1=BathParams(coupling=0.0), bath2=BathParams(coupling=0.0), drive=DrivePolicy(0.0, 2.0))
SYMMETRIC = ModelConfig()
OSCS = (OscillatorParams(), OscillatorParams())


def test_tiny_time_is_identity():
    state = GaussianState.squeezed(OSCS, (0.5, 0.3)).displaced([0.2, -0.1, 0.4, 0.3])
    t = 1e-9
    cfg = SYMMETRIC.replace(grid=SimulationGrid((t,), 200))
    out = propagate(state, assemble_propagator(cfg, t), cfg)
    assert np.abs(out.cov - state.cov).max() <= 1e-8
    assert np.abs(out.mean - state.mean).max() <= 1e-8


def test_free_vacuum_is_stationary():
    cfg = FREE.replace(grid=SimulationGrid.uniform(10.0, 11, 400))
    tr = moment_trace(cfg)
    assert np.abs(tr.covariances - 0.5 * np.eye(4)).max() <= 1e-10


def test_free_driven_evolution_is_symplectic():
    """No bath: covariances follow the unitary flow and symplectic invariants stay put."""
    state = GaussianState.squeezed(OSCS, (0.4, -0.2)).displaced([1.0, 0.0, 0.0, 0.5])
    times = np.linspace(0.5, 12.0, 12)
    cfg = FREE.replace(drive=DrivePolicy(0.2, 2.0), grid=SimulationGrid(tuple(times), 600), initial=state)
    tr = moment_trace(cfg)
    ref_cov, ref_mean = symplectic_flow(cfg.masses, cfg.frequencies, cfg.drive, times, state.cov, state.mean)
    assert np.abs(tr.covariances - ref_cov).max() <= 1e-8
    assert np.abs(tr.means - ref_mean).max() <= 1e-8
    np.testing.assert_allclose(tr.min_symplectic, 0.5, atol=1e-8)


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(0, 1), r=st.floats(-0.8, 0.8), nbar=st.floats(0, 3))
def test_propagation_is_affine(lam, r, nbar):
    mats = _MATS
    a = GaussianState.squeezed(OSCS, (r, 0.0))
    b = GaussianState.thermal(OSCS, (nbar, 0.5))
    mix = GaussianState(lam * a.mean + (1 - lam) * b.mean, lam * a.cov + (1 - lam) * b.cov)
    out = propagate(mix, mats)
    expected = lam * propagate(a, mats).cov + (1 - lam) * propagate(b, mats).cov
    assert np.abs(out.cov - expected).max() <= 1e-10 * max(1.0, np.abs(expected).max())


_MATS = assemble_propagator(SYMMETRIC, 7.3, n=600)


def test_mean_shift_leaves_covariance_bit_identical():
    base = GaussianState.thermal(OSCS, (1.0, 0.0))
    shifted = base.displaced([3.0, -1.0, 2.0, 0.5])
    assert np.array_equal(propagate(base, _MATS).cov, propagate(shifted, _MATS).cov)


def test_mass_mismatch_rejected():
    with pytest.raises(ValueError):
        propagate(GaussianState.vacuum(OSCS), _MATS, SYMMETRIC.with_value("osc2.mass", 2.0))


def test_unphysical_result_flagged():
    broken = dataclasses.replace(_MATS, B=-10 * np.abs(_MATS.B) - np.eye(4))
    with pytest.raises(NumericalFailure, match="symplectic"):
        propagate(GaussianState.vacuum(OSCS), broken)


def test_trace_errors_carry_the_final_time():
    cfg = FREE.replace(grid=SimulationGrid((1.0, np.pi, 4.0), 200))
    with pytest.raises(TracePointError) as info:
        moment_trace(cfg)
    assert info.value.t == pytest.approx(np.pi)


def test_weak_coupling_decay_of_the_mean():
    """<q1> decays at the weak-coupling rate gamma/2 * cutoff^2/(cutoff^2 + w^2)."""
    g, W = 1e-2, 20.0
    bath = BathParams(coupling=g, cutoff=W, temperature=1.0)
    times = np.arange(0, 100.01, 2 * np.pi)
    state = GaussianState.vacuum(OSCS).displaced([1, 0, 0, 0])
    cfg = ModelConfig(bath1=bath, bath2=bath, drive=DrivePolicy(0.0, 2.0), initial=state,
                      grid=SimulationGrid(tuple(times), 2000))
    q = moment_trace(cfg).means[:, 0]
    rate = -np.polyfit(times, np.log(np.abs(q)), 1)[0]
    assert rate == pytest.approx(g / 2 * W**2 / (W**2 + 1), rel=0.05)


@pytest.mark.parametrize("t", [0.5, 5.0, 17.0, 30.0])
def test_density_matrix_has_unit_trace(t):
    cfg = SYMMETRIC.replace(grid=SimulationGrid((t,), 2000))
    mats = assemble_propagator(cfg, t)
    state = GaussianState.squeezed(OSCS, (0.3, 0.0)).displaced([0.5, 0, 0, 0])
    total = trace_on_grid(lambda Q, q: density_matrix_element(Q, q, state, mats), 60.0, 601)
    assert abs(total - 1) <= 1e-6


def test_moment_map_matches_density_matrix_by_finite_differences():
    """First and second moments from derivatives of the explicitly integrated density matrix."""
    t = 6.0
    mats = assemble_propagator(SYMMETRIC.replace(grid=SimulationGrid((t,), 2000)), t)
    state = GaussianState.squeezed(OSCS, (0.3, -0.1)).displaced([0.5, -0.3, 0.2, 0.4])
    out = propagate(state, mats)
    x = np.linspace(-40, 40, 241)
    Q = np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)

    def integral(values):
        return integrate.trapezoid(integrate.trapezoid(values, x, axis=1), x)

    def rho(dq1):
        q = np.zeros_like(Q)
        q[..., 0] = dq1
        return density_matrix_element(Q, q, state, mats)

    r0 = rho(0.0)
    assert integral(r0.real) == pytest.approx(1.0, abs=1e-9)
    assert integral(Q[..., 0] * r0.real) == pytest.approx(out.mean[0], abs=1e-8)
    second = integral(Q[..., 0] * Q[..., 1] * r0.real) - out.mean[0] * out.mean[1]
    assert second == pytest.approx(out.cov[0, 1], rel=1e-8)
    # <p1> = -i d/dq1 at q = 0; <p1^2> = -d^2/dq1^2
    h = 1e-3
    rp, rm = rho(h), rho(-h)
    p1 = integral((-1j * (rp - rm) / (2 * h)))
    p1sq = integral(-(rp - 2 * r0 + rm) / h**2)
    assert p1.real == pytest.approx(out.mean[2], abs=1e-6)
    assert (p1sq.real - out.mean[2] ** 2) == pytest.approx(out.cov[2, 2], rel=1e-5)


def test_trace_is_physical_and_order_deterministic():
    cfg = SYMMETRIC.replace(grid=SimulationGrid.uniform(12.0, 13, 400))
    serial = moment_trace(cfg)
    threaded = moment_trace(cfg, threads=3)
    assert np.array_equal(serial.covariances, threaded.covariances)
    assert np.all(serial.min_symplectic >= 0.5 * (1 - 1e-6))


def test_moment_trace_csv(tmp_path):
    tr = moment_trace(SYMMETRIC.replace(grid=SimulationGrid.uniform(2.0, 3, 100)))
    tr.to_csv(tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert len(lines[0].split(",")) == 1 + 4 + 10 + 1
    assert len(lines) == 4


def test_moment_map_shapes():
    transfer, noise = moment_map(_MATS)
    assert transfer.shape == noise.shape == (4, 4)
    np.testing.assert_allclose(noise, noise.T, atol=1e-15)
    # the transfer matrix of a passive damped flow is symplectic up to O(gamma t)
    sigma = np.block([[np.zeros((2, 2)), np.eye(2)], [-np.eye(2), np.zeros((2, 2))]])
    assert np.abs(transfer @ sigma @ transfer.T - sigma).max() < 0.1


def test_initial_states_are_forgotten_entrywise():
    """Distinct initial states at the initial-state sweep point converge entrywise to 1e-2 by t = 80.

    Expected to fail: the drive is far above the parametric-instability
    threshold (pump rate 0.05 against damping ~2.5e-4), so the anti-squeezed
    quadratures amplify initial differences together with the covariances
    themselves (~e^{0.1 t}).  Only E_N, which depends on the squeezed
    quadratures, becomes independent of the initial state.
    """
    sc = SCENARIOS["fig3_initial_state"]
    covs = np.array([moment_trace(sc.config_for(p).replace(grid=SimulationGrid((80.0,), 2000))).covariances[-1]
                     for p in sc.points()])
    assert np.abs(covs - covs[0]).max() <= 1e-2
