import numpy as np
import pytest
from hypothesis import given, strategies as st

from piezotopo.materials import (EPS_VACUUM, HeavisideParams, IsotropicElastic,
                                 MaterialSet, PiezoCoupling, elasticity_matrix,
                                 interpolate_properties, interpolation_weights,
                                 smoothed_heaviside, smoothed_heaviside_derivative)

HP = HeavisideParams()


def test_elasticity_matrix_nu_zero_decouples():
    C = elasticity_matrix(IsotropicElastic(2.0e9, 0.0, 1.0))
    E = 2.0e9
    assert np.allclose(np.diag(C)[:3], E)
    assert np.allclose(np.diag(C)[3:], E / 2.0)
    off = C - np.diag(np.diag(C))
    assert np.all(off == 0.0)


def test_elasticity_matrix_symmetric():
    C = elasticity_matrix(IsotropicElastic(169e9, 0.28, 2329.0))
    assert np.array_equal(C, C.T)


def test_elasticity_matrix_11_closed_form():
    E, nu = 169e9, 0.28
    C = elasticity_matrix(IsotropicElastic(E, nu, 2329.0))
    want = E * (1.0 - nu) / ((1.0 + nu) * (1.0 - 2.0 * nu))
    assert C[0, 0] == pytest.approx(want, rel=1e-14)


def test_elasticity_matrix_positive_definite():
    C = elasticity_matrix(IsotropicElastic(60e9, 0.31, 7750.0))
    assert np.all(np.linalg.eigvalsh(C) > 0.0)


def test_incompressible_rejected():
    with pytest.raises(ValueError):
        IsotropicElastic(1e9, 0.5, 1.0)
    with pytest.raises(ValueError):
        IsotropicElastic(-1.0, 0.3, 1.0)
    with pytest.raises(ValueError):
        IsotropicElastic(1e9, 0.3, 0.0)


# --- smoothed Heaviside ---

def test_heaviside_endpoints_exact():
    # the three pinned values, exact
    assert smoothed_heaviside(-HP.w, HP) == HP.d
    assert smoothed_heaviside(HP.w, HP) == 1.0
    assert smoothed_heaviside(0.0, HP) == (1.0 + HP.d) / 2.0
    assert smoothed_heaviside(0.0, HP) == 0.505


def test_heaviside_saturates_outside_band():
    assert smoothed_heaviside(-5.0, HP) == HP.d
    assert smoothed_heaviside(5.0, HP) == 1.0


def test_heaviside_half_band_polynomial():
    # evaluate the quintic at r = 1/2 by hand
    r = 0.5
    poly = 0.5 + r * (15.0 / 16.0 - r * r * (5.0 / 8.0 - (3.0 / 16.0) * r * r))
    want = poly * (1.0 - HP.d) + HP.d
    assert smoothed_heaviside(HP.w / 2.0, HP) == pytest.approx(want, rel=1e-15)


def test_heaviside_nondecreasing_on_grid():
    phi = np.linspace(-HP.w, HP.w, 1000)
    h = smoothed_heaviside(phi, HP)
    assert np.all(np.diff(h) >= 0.0)
    assert np.all(h >= HP.d) and np.all(h <= 1.0)


def test_heaviside_derivative_matches_fd():
    phi = np.linspace(-0.85, 0.85, 41)
    eps = 1e-7
    fd = (smoothed_heaviside(phi + eps, HP) - smoothed_heaviside(phi - eps, HP)) / (2 * eps)
    assert np.allclose(smoothed_heaviside_derivative(phi, HP), fd, rtol=1e-6, atol=1e-8)


def test_heaviside_derivative_zero_at_saturation():
    assert smoothed_heaviside_derivative(1.0, HP) == 0.0
    assert smoothed_heaviside_derivative(-1.0, HP) == 0.0
    assert smoothed_heaviside_derivative(HP.w, HP) == 0.0


@given(st.floats(min_value=-20, max_value=20, allow_nan=False))
def test_heaviside_range_property(phi):
    h = smoothed_heaviside(phi, HP)
    assert HP.d <= h <= 1.0


def test_heaviside_params_validated():
    with pytest.raises(ValueError):
        HeavisideParams(w=0.0)
    with pytest.raises(ValueError):
        HeavisideParams(d=1.0)


# --- interpolation ---

def test_full_pzt_point_recovers_constants():
    mats = MaterialSet()
    p = interpolate_properties(1.0, 1.0, 1.0, 1.0, mats)
    assert np.allclose(p.C_eff, elasticity_matrix(mats.pe), rtol=1e-15)
    assert np.allclose(p.e_eff, mats.coupling.e_matrix, rtol=1e-15)
    assert np.allclose(p.eps_eff, mats.coupling.eps_S, rtol=1e-15)
    assert p.rho_eff == mats.pe.density


def test_void_point_eps_background():
    mats = MaterialSet()
    d = mats.heaviside.d
    # substrate-side void: both fields and xi at the floor
    p = interpolate_properties(d, d, d, d, mats)
    assert np.allclose(p.eps_eff, EPS_VACUUM * np.eye(3), rtol=2e-2)
    # elasticity collapses toward the floor
    full = interpolate_properties(1.0, 1.0, 1.0, d, mats)
    assert np.linalg.norm(p.C_eff) < 2.5 * d * np.linalg.norm(full.C_eff)


def test_void_film_elasticity_floor_ratio():
    mats = MaterialSet()
    d = mats.heaviside.d
    solid = interpolate_properties(1.0, 1.0, 1.0, 1.0, mats)
    void = interpolate_properties(d, 1.0, 1.0, 1.0, mats)
    ratio = void.C_eff[np.abs(solid.C_eff) > 0] / solid.C_eff[np.abs(solid.C_eff) > 0]
    assert np.allclose(ratio, d, rtol=1e-9)


def test_mixed_point_density_hand_value():
    mats = MaterialSet()
    h_p, h_xi, h_ps = 0.505, 1.0, 1.0
    h_s = 0.3
    p = interpolate_properties(h_p, h_s, h_xi, h_ps, mats)
    W_p = h_ps * h_p * h_xi
    W_s = (1.0 - h_ps) * h_s
    assert p.rho_eff == pytest.approx(
        mats.pe.density * W_p + mats.sb.density * W_s, rel=1e-15)


def test_substrate_weight_literal_one_minus():
    # W_s uses 1 - h_ps literally, so a substrate point keeps the 1 - d factor
    W_p, W_s = interpolation_weights(0.0, 1.0, 1.0, HP.d)
    assert W_s == 1.0 - HP.d
    assert W_p == 0.0


@given(st.floats(min_value=0.01, max_value=1.0),
       st.floats(min_value=0.01, max_value=1.0),
       st.floats(min_value=0.01, max_value=1.0))
def test_density_monotone_in_weights(h_p, h_s, h_xi):
    mats = MaterialSet()
    base = interpolate_properties(h_p, h_s, h_xi, 1.0, mats).rho_eff
    bumped = interpolate_properties(min(1.0, h_p + 0.1), h_s, h_xi, 1.0, mats).rho_eff
    assert bumped >= base - 1e-12


@given(st.floats(min_value=0.01, max_value=1.0),
       st.floats(min_value=0.01, max_value=1.0))
def test_eps_eff_floor_eigenvalue(h_p, h_s):
    mats = MaterialSet()
    for h_ps in (1.0, mats.heaviside.d):
        eps = interpolate_properties(h_p, h_s, 1.0, h_ps, mats).eps_eff
        smallest = np.linalg.eigvalsh(eps).min()
        assert smallest >= mats.heaviside.d * EPS_VACUUM * (1.0 - 1e-12)


def test_from_constants_layout():
    c = PiezoCoupling.from_constants(-5.4, 15.8, 12.3, 1730.0, 1700.0)
    assert c.e_matrix[2, 0] == -5.4
    assert c.e_matrix[2, 1] == -5.4
    assert c.e_matrix[2, 2] == 15.8
    assert c.e_matrix[0, 4] == 12.3
    assert c.e_matrix[1, 3] == 12.3
    assert c.e_matrix.sum() == pytest.approx(-5.4 * 2 + 15.8 + 12.3 * 2)
    assert c.eps_S[2, 2] == pytest.approx(1700.0 * EPS_VACUUM)
    assert c.eps_S[0, 0] == pytest.approx(1730.0 * EPS_VACUUM)


def test_coupling_validation():
    with pytest.raises(ValueError):
        PiezoCoupling(e_matrix=np.zeros((3, 5)))
    with pytest.raises(ValueError):
        PiezoCoupling(eps_S=-np.eye(3))
