import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import find_peaks

from nmql.memory_dynamics import (AUX_NAMES, SingularBoundaryError, assemble_auxiliary, ide_residual,
                                  solve_forward_ivp, solve_reversed_ivp)
from nmql.model import BathParams, DrivePolicy, ModelConfig, OscillatorParams

from oracles import free_auxiliary

FREE = ModelConfig(bath1=BathParams(coupling=0.0), bath2=BathParams(coupling=0.0), drive=DrivePolicy(0.0, 2.0))
DAMPED = ModelConfig(bath1=BathParams(coupling=1e-2), bath2=BathParams(coupling=1e-2))


def test_free_oscillator_is_a_cosine():
    cfg = FREE.replace(osc1=OscillatorParams(1.0, 1.3))
    tr = solve_forward_ivp(cfg, 20.0, [1, 0, 0, 0], n=400)
    np.testing.assert_allclose(tr.position[:, 0], np.cos(1.3 * tr.s), atol=1e-8)
    np.testing.assert_allclose(tr.position[:, 1], 0.0, atol=1e-15)


def test_markov_proxy_envelope():
    bath = BathParams(coupling=1e-3, cutoff=1e3, temperature=1.0)
    cfg = FREE.replace(bath1=bath, bath2=bath)
    tr = solve_forward_ivp(cfg, 50.0, [1, 0, 0, 0], n=5000)
    peaks, _ = find_peaks(tr.position[:, 0])
    envelope = np.exp(-1e-3 * tr.s[peaks] / 2)
    np.testing.assert_allclose(tr.position[peaks, 0], envelope, rtol=1e-2)


def test_embedding_matches_product_integration():
    bath = BathParams(coupling=1e-2, cutoff=1.0)
    cfg = ModelConfig(bath1=bath, bath2=bath)
    y0 = [1.0, 0.5, 0.0, 0.2]
    emb = solve_forward_ivp(cfg, 10.0, y0, n=2000)
    prod = solve_forward_ivp(cfg, 10.0, y0, n=2000, scheme="product-richardson")
    assert np.abs(emb.position - prod.position).max() <= 1e-6


def test_product_scheme_is_second_order():
    y0 = [1.0, 0.5, 0.0, 0.2]
    ref = solve_forward_ivp(DAMPED, 10.0, y0, n=400).position
    errs = []
    for n in (100, 200, 400):
        p = solve_forward_ivp(DAMPED, 10.0, y0, n=n, scheme="product").position
        errs.append(np.abs(p - ref[::400 // n]).max())
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 1.9)


def test_product_scheme_accepts_other_kernels():
    # a kernel the embedding cannot represent
    kernels = [lambda s: 1e-2 * np.exp(-s**2), lambda s: 1e-2 * np.exp(-s**2)]
    tr = solve_forward_ivp(DAMPED, 5.0, [1, 0, 0, 0], n=1000, scheme="product", kernels=kernels)
    assert ide_residual(tr, DAMPED, kernels=kernels) < 1e-5
    with pytest.raises(ValueError):
        solve_forward_ivp(DAMPED, 5.0, [1, 0, 0, 0], kernels=kernels)


def test_undamped_reversed_equals_forward():
    cfg = FREE
    t = 7.0
    fwd = solve_forward_ivp(cfg, t, [0.3, -0.2, 0.5, 0.1], n=700)
    terminal = np.concatenate([fwd.position[-1], fwd.velocity[-1]])
    back = solve_reversed_ivp(cfg, t, terminal, n=700)
    np.testing.assert_allclose(back.position, fwd.position, atol=1e-10)


@pytest.mark.parametrize("drive", [DrivePolicy(0.2, 2.0),
                                   DrivePolicy(function=lambda t: np.full_like(np.asarray(t, float), 0.2))])
def test_reversed_solution_satisfies_original_equation(drive):
    cfg = DAMPED.replace(drive=drive)
    tr = solve_reversed_ivp(cfg, 10.0, [1.0, 0.5, 0.3, -0.2], n=2000)
    assert ide_residual(tr, cfg) <= 1e-6


def test_forward_solution_residual():
    tr = solve_forward_ivp(DAMPED, 10.0, [1, 0, 0, 0], n=2000)
    assert ide_residual(tr, DAMPED) <= 1e-6


def test_free_auxiliary_functions_match_sin_ratios():
    cfg = FREE.replace(osc2=OscillatorParams(1.0, 1.4))
    t = 2.5
    aux = assemble_auxiliary(cfg, t, n=500)
    for name, omega in (("U", 1.0), ("V", 1.4), ("u", 1.0), ("v", 1.4)):
        start, end = free_auxiliary(omega, t, aux.s)
        np.testing.assert_allclose(aux.values[name + "1"], start, atol=1e-8)
        np.testing.assert_allclose(aux.values[name + "2"], end, atol=1e-8)
        np.testing.assert_allclose(aux.values[name + "3"], 0.0, atol=1e-10)
        np.testing.assert_allclose(aux.values[name + "4"], 0.0, atol=1e-10)


def test_boundary_pattern_is_exact():
    aux = assemble_auxiliary(DAMPED, 4.0, n=200)
    for fam in "UVuv":
        assert aux.at_end(fam + "2", derivative=False) == 1.0
        assert aux.at_start(fam + "2", derivative=False) == 0.0
        assert aux.at_start(fam + "1", derivative=False) == 1.0
        assert aux.at_end(fam + "1", derivative=False) == 0.0
        for k in "34":
            assert aux.at_start(fam + k, derivative=False) == 0.0
            assert aux.at_end(fam + k, derivative=False) == 0.0


def test_cross_functions_vanish_without_drive():
    cfg = DAMPED.replace(drive=DrivePolicy(0.0, 2.0))
    aux = assemble_auxiliary(cfg, 6.0, n=300)
    for name in ("U3", "U4", "V3", "V4", "u3", "u4", "v3", "v4"):
        assert np.abs(aux.values[name]).max() <= 1e-10


def test_all_sixteen_functions_agree_between_schemes():
    emb = assemble_auxiliary(DAMPED, 8.0, n=1000)
    prod = assemble_auxiliary(DAMPED, 8.0, n=1000, scheme="product-richardson")
    for name in AUX_NAMES:
        assert np.abs(emb.values[name] - prod.values[name]).max() <= 1e-6, name


@settings(max_examples=8, deadline=None)
@given(t=st.floats(2.0, 20.0))
def test_auxiliary_functions_continuous_in_final_time(t):
    """Sup-norm change over a shift dt scales like dt (sampled at equal fractions of t)."""
    diffs = []
    base = assemble_auxiliary(DAMPED, t, n=400)
    for dt in (2e-3, 1e-3):
        other = assemble_auxiliary(DAMPED, t + dt, n=400)
        diffs.append(max(np.abs(base.values[k] - other.values[k]).max() for k in AUX_NAMES))
    # linear in dt: halving the shift halves the change (the constant grows near resonances)
    assert 0.4 * diffs[0] < diffs[1] < 0.6 * diffs[0]


def test_resonant_final_time_is_reported():
    with pytest.raises(SingularBoundaryError, match="perturbed"):
        assemble_auxiliary(FREE, np.pi, n=200)
    # slightly off resonance works
    assemble_auxiliary(FREE, np.pi + 1e-2, n=200)


def test_auxiliary_csv(tmp_path):
    aux = assemble_auxiliary(DAMPED, 1.0, n=10)
    aux.to_csv(tmp_path / "aux.csv")
    lines = (tmp_path / "aux.csv").read_text().splitlines()
    assert lines[0].split(",") == ["s", *AUX_NAMES]
    assert len(lines) == 12
