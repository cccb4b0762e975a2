"""Tests for the four upscaling routes and their parameter selection."""

import math

import numpy as np
import pytest

import cellhom as ch
from cellhom import BoxFilter, InvalidInputError, MethodParams, make_filter

SQRT3 = math.sqrt(3.0)


def _sin_field_1d():
    return ch.TensorField(
        dim=1,
        fn=lambda y: (2.0 + np.sin(2.0 * np.pi * y[..., 0]))[..., None, None],
        alpha=1.0,
        beta=3.0,
        name="sin-1d",
    )


def test_optimal_params_parabolic():
    p = ch.optimal_params("parabolic", 4.0, q=1, k_o=0.5, alpha=0.08891883476670036,
                          beta=1.8689099813607886)
    assert p.L == 2.0
    assert p.k_T == pytest.approx(0.1952086521467784, rel=1e-13)
    assert p.T == pytest.approx(4.0 * p.k_T, rel=1e-13)
    assert p.N == 0


def test_optimal_params_modified():
    p = ch.optimal_params("modified-elliptic", 4.0, q=3, k_o=0.5,
                          alpha=0.08891883476670036, beta=1.8689099813607886)
    assert p.k_T == pytest.approx(0.2760667233585458, rel=1e-13)
    assert p.N == 60
    p2 = ch.optimal_params("modified-elliptic", 4.0, q=3, k_o=0.5,
                           alpha=0.08891883476670036, beta=1.8689099813607886,
                           N_rule=17)
    assert p2.N == 17


def test_optimal_params_warns_on_thin_margin():
    # k_o so small that the averaging window nearly fills the box
    with pytest.warns(UserWarning):
        ch.optimal_params("parabolic", 2.5, q=1, k_o=0.05, alpha=0.1, beta=1.0)


def test_optimal_params_bad_method():
    with pytest.raises(InvalidInputError):
        ch.optimal_params("simulated-annealing", 4.0, q=1, k_o=0.5, alpha=0.1, beta=1.0)


def test_periodic_reference_harmonic_mean_1d():
    # homogenized value of 2 + sin(2 pi y) is sqrt(3)
    ref = ch.solve_periodic_reference(_sin_field_1d(), h=1.0 / 128.0)
    assert ref.values.shape == (1, 1)
    assert ref.values[0, 0] == pytest.approx(SQRT3, abs=2e-4)


def test_periodic_reference_self_convergence_1d():
    errs = []
    for h in (1.0 / 8.0, 1.0 / 16.0, 1.0 / 32.0):
        v = ch.solve_periodic_reference(_sin_field_1d(), h=h).values[0, 0]
        errs.append(abs(v - SQRT3))
    rate = np.polyfit(np.log([8.0, 16.0, 32.0]), np.log(errs), 1)[0]
    assert rate < -1.8


def test_elliptic_integer_window_is_harmonic_mean_1d():
    """On integer R the window harmonic mean coincides with the cell's."""
    out = ch.solve_elliptic_dirichlet(_sin_field_1d(), R=3.0, h=1.0 / 32.0)
    ref = ch.solve_periodic_reference(_sin_field_1d(), h=1.0 / 32.0)
    assert out.values[0, 0] == pytest.approx(ref.values[0, 0], abs=1e-10)


def test_elliptic_periodic_closure_matches_reference():
    fld = ch.benchmark_tensor_2d()
    out = ch.solve_elliptic_dirichlet(fld, R=2.0, h=1.0 / 8.0, bc="periodic")
    ref = ch.solve_periodic_reference(fld, h=1.0 / 8.0)
    np.testing.assert_allclose(out.values, ref.values, atol=1e-10)


def test_elliptic_periodic_closure_needs_integer_period():
    with pytest.raises(InvalidInputError):
        ch.solve_elliptic_dirichlet(ch.benchmark_tensor_2d(), R=2.5, h=1.0 / 8.0,
                                    bc="periodic")


def test_elliptic_cg_agrees_with_direct():
    fld = ch.benchmark_tensor_2d()
    a = ch.solve_elliptic_dirichlet(fld, R=2.0, h=1.0 / 8.0, solver="direct")
    b = ch.solve_elliptic_dirichlet(fld, R=2.0, h=1.0 / 8.0, solver="cg", cg_tol=1e-13)
    np.testing.assert_allclose(a.values, b.values, atol=1e-9)
    assert a.diagnostics["asymmetry"] == 0.0  # energy form is symmetrized exactly


def test_parabolic_upscale_validation():
    fld = _sin_field_1d()
    params = ch.optimal_params("parabolic", 3.0, q=1, k_o=0.5, alpha=1.0, beta=3.0)
    box = BoxFilter(base=make_filter(1), L=params.L, dim=1)
    traj = ch.evolve_parabolic(fld, 3.0, 1.0 / 16.0, params.T, filters=[box])
    out = ch.upscale_parabolic(fld, params, traj)
    assert out.values.shape == (1, 1)
    # mismatched R is rejected
    bad = MethodParams(R=4.0, L=params.L, T=params.T, q=1, k_o=0.5, k_T=params.k_T)
    with pytest.raises(InvalidInputError):
        ch.upscale_parabolic(fld, bad, traj)
    # mismatched filter order is rejected
    bad_q = MethodParams(R=3.0, L=params.L, T=params.T, q=2, k_o=0.5, k_T=params.k_T)
    with pytest.raises(InvalidInputError):
        ch.upscale_parabolic(fld, bad_q, traj)


def test_parabolic_requires_filters():
    with pytest.raises(InvalidInputError):
        ch.evolve_parabolic(_sin_field_1d(), 3.0, 1.0 / 16.0, 0.5, filters=[])


def test_modified_elliptic_mode_budget():
    fld = _sin_field_1d()
    params = MethodParams(R=3.0, L=1.5, T=0.8, N=10_000, q=1, k_o=0.5, k_T=0.27)
    with pytest.raises(InvalidInputError):
        ch.solve_modified_elliptic(fld, params, h=1.0 / 16.0)


def test_modified_elliptic_symmetrize_flag():
    fld = ch.benchmark_tensor_2d()
    params = ch.optimal_params("modified-elliptic", 2.5, q=1, k_o=0.5,
                               alpha=fld.alpha, beta=fld.beta, N_rule=20)
    out = ch.solve_modified_elliptic(fld, params, h=1.0 / 8.0, symmetrize=True)
    np.testing.assert_array_equal(out.values, out.values.T)
    assert out.diagnostics["asymmetry"] >= 0.0
    assert out.diagnostics["lambda_min"] > 0.0


def test_diagnostics_populated():
    out = ch.solve_elliptic_dirichlet(ch.benchmark_tensor_2d(), R=2.0, h=1.0 / 8.0)
    d = out.diagnostics
    assert d["wall_time_s"] >= 0.0
    assert d["spectral_min"] > 0.0
    assert d["spectral_max"] < 2.0
    assert out.method == "elliptic"


def test_constant_identity_elliptic_and_periodic():
    fld = ch.constant_field(2.75, dim=2)
    for out in (
        ch.solve_periodic_reference(fld, h=1.0 / 8.0),
        ch.solve_elliptic_dirichlet(fld, R=2.5, h=1.0 / 8.0),
    ):
        np.testing.assert_allclose(out.values, 2.75 * np.eye(2), atol=1e-12)
