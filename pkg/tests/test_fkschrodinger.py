"""Schroedinger-semigroup estimators, kernels, and Kato-class diagnostics."""

import math
import warnings

import numpy as np
import pytest

from fklab.fkschrodinger import (KatoQuadSpec, MagneticField,
                                 PathRejectionOverflow, PotentialConfig,
                                 WaveFunction, apply_semigroup,
                                 diamagnetic_check, free_kernel, gauge_check,
                                 kato_kappa, kernel, khasminskii_check,
                                 magnetic_field, mehler_kernel,
                                 preset_potential)
from fklab.streams import RngStream
from fklab.wiener import TimeGrid

from oracles import harmonic_grid_kernel, well_kato_oracle


def gauss_psi(width=1.0, center=0.0):
    def f(x):
        return np.exp(-np.sum((x - center) ** 2, axis=-1) / (2 * width**2))
    return WaveFunction(f)


def harmonic_ground(d=1):
    def f(x):
        return math.pi ** (-d / 4) * np.exp(-0.5 * np.sum(x**2, axis=-1))
    return WaveFunction(f)


# ---------------------------------------------------------------------------
# configuration plumbing


def test_preset_unknown_name_and_params():
    with pytest.raises(ValueError):
        preset_potential("nonsense")
    with pytest.raises(ValueError):
        preset_potential("harmonic", omega=1.0, typo=3)


def test_consistency_check_flags_bad_split():
    pot = PotentialConfig(
        d=1,
        v=lambda x: np.sum(x**2, axis=-1),
        v_plus=lambda x: np.zeros(x.shape[:-1]),
        v_minus=lambda x: np.zeros(x.shape[:-1]))
    with pytest.raises(ValueError):
        pot.check_consistency(np.array([[0.7]]))
    preset_potential("harmonic").check_consistency(np.array([[0.3], [-1.1]]))


def test_consistency_check_flags_bad_divergence():
    pot = PotentialConfig(
        d=2,
        a=lambda x: x,
        div_a=lambda x: np.zeros(x.shape[:-1]))  # true divergence is 2
    with pytest.raises(ValueError):
        pot.check_consistency(np.array([[0.1, 0.2]]))


def test_eval_v_from_parts_and_free():
    well = preset_potential("constant-well", height=0.5, halfwidth=1.0)
    x = np.array([[0.0], [2.0]])
    assert np.allclose(well.eval_v(x), [-0.5, 0.0])
    assert np.allclose(well.eval_v_minus(x), [0.5, 0.0])
    free = preset_potential("free", d=2)
    assert free.eval_v(np.zeros((4, 2))).shape == (4,)
    assert np.all(free.eval_v(np.zeros((4, 2))) == 0.0)


def test_magnetic_field_constant_case():
    pot = preset_potential("constant-magnetic-2d", b0=1.0)
    fld = magnetic_field(pot)
    assert isinstance(fld, MagneticField)
    b = fld.b(np.array([0.3, -0.7]))
    assert np.allclose(b, [[0.0, -1.0], [1.0, 0.0]], atol=1e-8)
    assert np.allclose(b + np.swapaxes(b, -1, -2), 0.0, atol=1e-12)


def test_magnetic_field_zero_without_a():
    fld = magnetic_field(preset_potential("free", d=3))
    assert np.all(fld.b(np.zeros((5, 3))) == 0.0)


# ---------------------------------------------------------------------------
# semigroup action and kernels


def test_free_semigroup_gaussian_closed_form():
    # exp(t Lap/2) on exp(-x^2/2) is (1+t)^(-1/2) exp(-x^2/(2(1+t)))
    pot = preset_potential("free", d=1)
    q, t = 0.4, 0.5
    est = apply_semigroup(pot, gauss_psi(), [q], t, 20000,
                          TimeGrid(t, 64), RngStream(20))
    target = (1 + t) ** -0.5 * math.exp(-q**2 / (2 * (1 + t)))
    assert abs(est.mean - target) <= 4 * est.stderr


def test_harmonic_ground_state_decay():
    # the ground state decays by exp(-t d/2) under the semigroup
    pot = preset_potential("harmonic")
    t = 0.8
    est = apply_semigroup(pot, harmonic_ground(), [0.3], t, 40000,
                          TimeGrid(t, 128), RngStream(21))
    target = math.exp(-0.5 * t) * harmonic_ground().evaluator(
        np.array([[0.3]]))[0]
    assert abs(est.mean - target) <= 4 * est.stderr


def test_free_kernel_zero_variance():
    pot = preset_potential("free", d=2)
    est = kernel(pot, [0.0, 0.0], [0.5, -0.3], 0.7, 500,
                 TimeGrid(0.7, 32), RngStream(22))
    target = free_kernel(2, np.array([0.5, -0.3]), 0.7)
    assert est.mean == pytest.approx(target, abs=1e-14)
    assert est.stderr == 0.0


def test_harmonic_kernel_mehler_and_grid_oracle():
    pot = preset_potential("harmonic")
    q, qp, t = 0.2, -0.5, 1.0
    est = kernel(pot, [q], [qp], t, 40000, TimeGrid(t, 128), RngStream(23))
    closed = mehler_kernel(q, qp, t)
    independent = harmonic_grid_kernel(q, qp, t)
    assert closed == pytest.approx(independent, rel=1e-4)
    assert abs(est.mean - closed) <= max(4 * est.stderr, 0.01 * closed)


def test_kernel_horizon_mismatch_rejected():
    pot = preset_potential("free", d=1)
    with pytest.raises(ValueError):
        kernel(pot, [0.0], [1.0], 2.0, 100, TimeGrid(1.0, 16), RngStream(24))


def test_singular_potential_rejects_paths():
    pot = preset_potential("coulomb-3d", gamma=1.0)
    bad = PotentialConfig(d=pot.d, v=lambda x: np.where(
        np.sum(x**2, axis=-1) < 10.0, np.inf, 0.0), box_halfwidth=10.0)
    with pytest.raises(PathRejectionOverflow):
        apply_semigroup(bad, gauss_psi(), [0.0, 0.0, 0.0], 0.5, 2000,
                        TimeGrid(0.5, 16), RngStream(25))


# ---------------------------------------------------------------------------
# gauge covariance and the diamagnetic inequality


def test_gauge_linear_chi_residual_is_exactly_zero():
    # linear chi: the Stratonovich midpoint sum telescopes pathwise
    pot = preset_potential("gauge-linear", d=1, c=0.8)
    est = gauge_check(pot, [0.0], [0.6], 1.0, 400, TimeGrid(1.0, 64),
                      RngStream(26))
    assert abs(est.mean) < 1e-13
    assert est.stderr < 1e-13


def test_gauge_sine_chi_residual_consistent_with_zero():
    amp, k = 0.3, 0.5
    pot = PotentialConfig(
        d=1,
        chi=lambda x: amp * np.sin(k * np.sum(x, axis=-1)),
        grad_chi=lambda x: amp * k * np.cos(k * x))
    # with q' = q = 0 the leading weak bias is odd in the bridge and
    # averages out, leaving the residual noise-dominated
    est = gauge_check(pot, [0.0], [0.0], 0.25, 20000, TimeGrid(0.25, 256),
                      RngStream(27))
    assert abs(est.mean) <= 4 * est.stderr


def test_gauge_bias_decays_with_refinement():
    # the per-path mean residual is O(dt): halving dt roughly halves it
    amp, k = 0.3, 0.5
    pot = PotentialConfig(
        d=1,
        chi=lambda x: amp * np.sin(k * np.sum(x, axis=-1)),
        grad_chi=lambda x: amp * k * np.cos(k * x))
    biases = []
    for n in (32, 128, 512):
        est = gauge_check(pot, [0.0], [0.4], 1.0, 60000, TimeGrid(1.0, n),
                          RngStream(28))
        biases.append(abs(est.mean))
    assert biases[2] < biases[1] < biases[0]
    assert biases[2] < 0.3 * biases[0]


def test_gauge_check_requires_chi():
    pot = preset_potential("free", d=1)
    with pytest.raises(ValueError):
        gauge_check(pot, [0.0], [1.0], 1.0, 10, TimeGrid(1.0, 8), RngStream(29))


def test_diamagnetic_inequality():
    pot = preset_potential("constant-magnetic-2d", b0=1.5)
    with_a, without_a = diamagnetic_check(pot, gauss_psi(), [0.4, 0.1], 1.0,
                                          20000, TimeGrid(1.0, 64),
                                          RngStream(30))
    gap = abs(with_a.mean) - without_a.mean.real
    assert gap <= 4 * (with_a.stderr + without_a.stderr)


def test_diamagnetic_equality_without_field():
    pot = preset_potential("free", d=1)
    psi = WaveFunction(lambda x: np.exp(-np.sum(x**2, axis=-1)))
    with_a, without_a = diamagnetic_check(pot, psi, [0.0], 0.5, 500,
                                          TimeGrid(0.5, 16), RngStream(31))
    assert with_a.mean == pytest.approx(without_a.mean, abs=1e-14)


# ---------------------------------------------------------------------------
# Kato-class diagnostics


def test_kato_constant_potential_exact():
    # (heat_s * c)(x) = c, so kappa = c t for any probe set
    c, t = 0.7, 0.8
    probes = np.linspace(-2, 2, 9)[:, None]
    kappa = kato_kappa(lambda x: np.full(x.shape[:-1], c), t, probes,
                       box_halfwidth=np.inf)
    assert kappa == pytest.approx(c * t, abs=1e-12)


def test_kato_well_matches_dense_oracle():
    height, halfwidth, t = 0.4, 1.0, 0.8
    well = preset_potential("constant-well", height=height,
                            halfwidth=halfwidth)
    probes = np.linspace(-4, 4, 65)[:, None]
    kappa = kato_kappa(well.eval_v_minus, t, probes,
                       KatoQuadSpec(n_space=96, n_time=96),
                       box_halfwidth=well.box_halfwidth)
    # the max over probes is attained at the center by symmetry
    oracle = well_kato_oracle(height, halfwidth, t, x=0.0)
    assert kappa == pytest.approx(oracle, rel=2e-3)


def test_kato_kappa_vanishes_with_time():
    well = preset_potential("constant-well", height=0.4, halfwidth=1.0)
    probes = np.linspace(-2, 2, 17)[:, None]
    ks = [kato_kappa(well.eval_v_minus, t, probes,
                     box_halfwidth=well.box_halfwidth)
          for t in (0.1, 0.2, 0.4)]
    assert 0.0 < ks[0] < ks[1] < ks[2]


def test_kato_rejects_negative_u():
    with pytest.raises(ValueError):
        kato_kappa(lambda x: -np.ones(x.shape[:-1]), 0.5,
                   np.zeros((1, 1)))


def test_kato_box_leak_warning():
    # a constant potential is clearly not negligible outside any finite box
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        kato_kappa(lambda x: np.ones(x.shape[:-1]), 0.5,
                   np.zeros((1, 1)), box_halfwidth=0.5)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_khasminskii_bound_holds():
    pot = preset_potential("constant-well", height=0.3, halfwidth=1.0)
    lhs, bound = khasminskii_check(pot, [0.0], 1.0, 40000, TimeGrid(1.0, 64),
                                   RngStream(32))
    assert bound > 1.0
    assert lhs.mean.real <= bound + 4 * lhs.stderr
    assert lhs.mean.real >= 1.0  # exponential of a non-negative integral


def test_khasminskii_rejects_supercritical_kappa():
    pot = preset_potential("constant-well", height=5.0, halfwidth=2.0)
    with pytest.raises(ValueError):
        khasminskii_check(pot, [0.0], 2.0, 100, TimeGrid(2.0, 8),
                          RngStream(33))
