import math

import numpy as np
import pytest

from slabinv import cgo, fields, recovery
from slabinv.cgo import Variant, make_frame, make_phase_pair
from slabinv.recovery import (
    ContinuationConfig,
    ContinuationError,
    RecoveryError,
    assemble_bounds,
    assemble_bounds_from_sup,
    bound_chain,
    build_frequency_set,
    calibrate_two_constants,
    choose_parameters,
    estimate_fhat_annulus,
    integral_pairing,
    low_freq_extend,
    make_workspace,
    plancherel_constant,
    schedule_residual,
    stability_exponent,
    synthetic_line_function,
    true_transform,
)


@pytest.fixture(scope="module")
def ws_single(born_pair8):
    q1, q2 = born_pair8
    return make_workspace(q1, q2, 0.0, Variant.SINGLE_REFLECTION)


@pytest.fixture(scope="module")
def ws_double(born_pair8):
    q1, q2 = born_pair8
    return make_workspace(q1, q2, 0.0, Variant.DOUBLE_REFLECTION)


# -- frequency bookkeeping -------------------------------------------------------


def test_frequency_set_windows():
    fs = build_frequency_set(3.0, spacing=0.5)
    for xi in fs.annulus:
        x1e = math.hypot(xi[0], xi[1])
        assert 1.0 - 1e-12 <= x1e < 3.0 and abs(xi[2]) < 3.0
    for xi in fs.low:
        assert 0 < math.hypot(xi[0], xi[1]) < 1.0
    for xi in fs.axis:
        assert xi[0] == xi[1] == 0.0
    with pytest.raises(RecoveryError):
        build_frequency_set(2.0)


# -- pairing ------------------------------------------------------------------------


def test_pairing_zero_for_equal_potentials(geom, grid8, bump8, ws_single):
    ws = make_workspace(bump8, bump8, 0.0, Variant.SINGLE_REFLECTION)
    pp = make_phase_pair(make_frame((2.0, 0.0, 0.0)), Variant.SINGLE_REFLECTION, 4.0)
    probe = cgo.build_probe(ws.eval_grid, pp, ws.q1_box, ws.q2_box, 0.0)
    assert integral_pairing(ws.qdiff, probe) == 0


def test_pairing_plane_wave_oracle(ws_single):
    # remainders forced to zero and no reflection: the pairing is exactly the
    # trapezoid transform at xi
    pp = make_phase_pair(make_frame((1.5, -0.5, 0.5)), Variant.SINGLE_REFLECTION, 5.0)
    probe = cgo.exponential_probe(ws_single.eval_grid, pp, ws_single.box_grid,
                                  reflect1=False, reflect2=False)
    got = integral_pairing(ws_single.qdiff, probe)
    want = complex(ws_single.qdiff_ft(pp.xi))
    assert got == pytest.approx(want, rel=1e-10)


def test_pairing_decay_in_param(geom, grid16):
    # |pairing - FT| is dominated by the reflected-phase boundary layer
    # exp(-2 tau xi_1e x3): the 1/tau rate needs a difference that does not
    # vanish on the bottom plate and a sweep whose layer width 1/(2 tau
    # xi_1e) stays resolved by the grid
    q1 = fields.radial_bump_potential(grid16, geom, 1e-3, z_profile="bottom")
    q2 = fields.zero_potential(grid16, geom)
    ws = make_workspace(q1, q2, 0.0, Variant.SINGLE_REFLECTION)
    xi = (1.0, 0.0, 0.0)
    errs, params = [], (1.0, 1.5, 2.25, 3.375)
    want = true_transform(ws, xi)
    for param in params:
        pp = make_phase_pair(make_frame(xi), Variant.SINGLE_REFLECTION, param)
        probe = cgo.build_probe(ws.eval_grid, pp, ws.q1_box, ws.q2_box, 0.0)
        errs.append(abs(integral_pairing(ws.qdiff, probe) - want))
    slope = np.polyfit(np.log(params), np.log(errs), 1)[0]
    assert -1.3 <= slope <= -0.7


# -- annulus estimation ----------------------------------------------------------------


def test_estimates_noise_floor_for_equal_potentials(bump8):
    ws = make_workspace(bump8, bump8, 0.0, Variant.SINGLE_REFLECTION)
    res = estimate_fhat_annulus(ws, 4.0, [(1.0, 0.0, 0.0), (2.0, 0.5, -1.0)])
    assert all(abs(v) < 1e-14 for v in res.estimates.values())


@pytest.mark.parametrize("variant", list(Variant))
def test_born_estimates_match_direct_transform(born_pair8, variant):
    q1, q2 = born_pair8
    ws = make_workspace(q1, q2, 0.0, variant)
    xis = [(1.0, 0.0, 0.0), (2.0, 1.0, 1.5), (1.25, -0.75, -2.0)]
    res = estimate_fhat_annulus(ws, 8.0, xis)
    assert not res.failed
    for xi in xis:
        key = tuple(float(v) for v in xi)
        want = true_transform(ws, xi)
        assert abs(res.estimates[key] - want) <= 0.1 * abs(want)


def test_estimator_error_decays_with_param(ws_single):
    xi = (1.5, 0.5, 1.0)
    key = tuple(float(v) for v in xi)
    want = true_transform(ws_single, xi)
    errs, params = [], (4.0, 8.0, 16.0, 32.0)
    for param in params:
        res = estimate_fhat_annulus(ws_single, param, [xi])
        errs.append(abs(res.estimates[key] - want))
    slope = np.polyfit(np.log(params), np.log(errs), 1)[0]
    assert slope <= -0.4


def test_double_variant_even_in_xi3(ws_double):
    res = estimate_fhat_annulus(ws_double, 6.0, [(1.5, 0.5, 1.25), (1.5, 0.5, -1.25)])
    a = res.estimates[(1.5, 0.5, 1.25)]
    b = res.estimates[(1.5, 0.5, -1.25)]
    assert abs(a - b) <= 1e-8 * max(1.0, abs(a))


def test_conjugate_symmetry(ws_single):
    res = estimate_fhat_annulus(ws_single, 8.0, [(1.5, 0.5, 1.0), (-1.5, -0.5, -1.0)])
    a = res.estimates[(1.5, 0.5, 1.0)]
    b = res.estimates[(-1.5, -0.5, -1.0)]
    assert abs(b - np.conj(a)) <= 1e-8 * max(1.0, abs(a))


def test_failed_frequencies_recorded(ws_single):
    res = estimate_fhat_annulus(ws_single, 4.0, [(0.0, 0.0, 1.0), (1.0, 0.0, 0.0)])
    assert (0.0, 0.0, 1.0) in res.failed
    assert (1.0, 0.0, 0.0) in res.estimates


def test_workspace_transform_matches_full_grid(born_pair8):
    # restriction to the support subgrid loses nothing of the transform
    q1, q2 = born_pair8
    ws = make_workspace(q1, q2, 0.0, Variant.SINGLE_REFLECTION)
    full = fields.fourier_transform(
        fields.GridField(q1.grid, q1.field.values - q2.field.values))
    xi = np.array([1.3, -0.7, 2.0])
    assert complex(ws.qdiff_ft(xi)) == pytest.approx(complex(full(xi)), rel=1e-12)


# -- low-frequency continuation ----------------------------------------------------------


def test_low_freq_zero_samples():
    cfg = ContinuationConfig(lam=0.5, model_halfwidth=2.0)
    s = np.linspace(1.0, 2.0, 5)
    res = low_freq_extend(s, np.zeros(5, dtype=complex), cfg,
                          np.linspace(0.1, 0.9, 9), sup_g_bound=1.0)
    assert np.max(np.abs(res.values)) <= 1e-10
    assert res.sup_gamma_bound == 0.0


def test_low_freq_synthetic_forward_model():
    # extrapolation from (1, 2) to (0, 1) is exponentially ill-posed; the fit
    # reaches the regularization-limited accuracy, reported and bounded here
    rng = np.random.Generator(np.random.Philox(key=np.array([5, 0], np.uint64)))
    f = synthetic_line_function(2.0, rng)
    cfg = ContinuationConfig(lam=0.5, model_halfwidth=2.0)
    s_samp = np.linspace(1.0, 2.0, 21)
    s_eval = np.linspace(0.05, 0.95, 19)
    res = low_freq_extend(s_samp, f(s_samp), cfg, s_eval, sup_g_bound=10.0)
    truth = f(s_eval)
    rel = np.max(np.abs(res.values - truth)) / np.max(np.abs(truth))
    assert rel < 0.05
    assert res.condition < 1e12
    # on the sampled segment itself the fit reproduces the data closely
    on_seg = low_freq_extend(s_samp, f(s_samp), cfg, s_samp, sup_g_bound=10.0)
    rel_seg = np.max(np.abs(on_seg.values - f(s_samp))) / np.max(np.abs(f(s_samp)))
    assert rel_seg < 1e-4


def test_low_freq_condition_guard():
    cfg = ContinuationConfig(lam=0.5, model_halfwidth=2.0, tikhonov=1e-300)
    s = np.linspace(1.0, 2.0, 4)
    with pytest.raises(ContinuationError, match="tikhonov"):
        low_freq_extend(s, np.ones(4, dtype=complex), cfg, np.array([0.5]), 1.0)


def test_two_constants_certificate():
    c0, lam, rows = calibrate_two_constants(2.0, n_funcs=20, seed=0)
    assert 0.0 < lam < 1.0 and np.isfinite(c0)
    for sup_gamma, sup_g, sup_g0 in rows:
        assert sup_gamma <= c0 * sup_g ** (1 - lam) * sup_g0 ** lam * (1 + 1e-12)


# -- bound assembly -------------------------------------------------------------------------


def test_assemble_bounds_tail_only():
    res = assemble_bounds({}, r=4.0, s=2.0, bound_m=1.0)
    assert res.sup_bound == 0.0
    assert res.hm1_bound == pytest.approx(math.sqrt(plancherel_constant(1.0)) / 4.0)
    res2 = assemble_bounds({}, r=8.0, s=2.0, bound_m=1.0)
    assert res2.hm1_bound == pytest.approx(res.hm1_bound / 2.0)
    assert res.check_internal() and res2.check_internal()


def test_assemble_bounds_exponent_arithmetic():
    res = assemble_bounds_from_sup(0.5, r=3.0, s=2.0, bound_m=1.0, c_sobolev=2.0)
    assert res.params["eps"] == pytest.approx(0.25)
    # exponent eps/(s+1) = 1/12
    assert res.linf_bound == pytest.approx(2.0 * res.hm1_bound ** (1.0 / 12.0))


# -- parameter schedules -----------------------------------------------------------------------


def test_choose_parameters_roundtrip_log_domain():
    # data error exp(-exp(40)) only representable through its logarithm
    choice = choose_parameters(1.0, None, 0.5, 10.0, Variant.SINGLE_REFLECTION,
                               log_star=-math.exp(40.0))
    resid = schedule_residual(choice, 1.0, 0.5, 10.0, Variant.SINGLE_REFLECTION,
                              log_star=-math.exp(40.0))
    assert resid <= 1e-12 * max(1.0, choice.r ** (5.5 / 0.5))
    assert choice.tau == pytest.approx(choice.r ** (5.0 / 0.5))


def test_stability_exponents_against_stated_windows():
    # lam = 0.5: exponent 1/22 for the cross-plate case (window (0, 1/10)),
    # 1/12 for the same-plate case (window (0, 1/5))
    th2 = stability_exponent(0.5, Variant.SINGLE_REFLECTION)
    th3 = stability_exponent(0.5, Variant.DOUBLE_REFLECTION)
    assert th2 == pytest.approx(1.0 / 22.0)
    assert 0.0 < th2 < 0.1
    assert th3 == pytest.approx(1.0 / 12.0)
    assert 0.0 < th3 < 0.2


def test_choose_parameters_alpha_identity():
    choice = choose_parameters(1.0, None, 0.5, 10.0, Variant.DOUBLE_REFLECTION,
                               log_star=-math.exp(40.0))
    assert choice.tau == pytest.approx(choice.r ** (5.0 / (2 * 0.5)))
    assert choice.param == pytest.approx(math.sqrt(max(choice.tau ** 2 - 0.25, 0.0)))


def test_choose_parameters_hypothesis_violation():
    with pytest.raises(RecoveryError, match="hypothesis"):
        choose_parameters(2.0, 0.7, 0.5, 10.0, Variant.SINGLE_REFLECTION)


def test_choose_parameters_small_r_flagged():
    choice = choose_parameters(1.0, 1e-4, 0.5, 14.0, Variant.SINGLE_REFLECTION)
    assert choice.small_r


def test_bound_chain_monotone_in_star_norm():
    bounds = [bound_chain(1.0, star, 0.5, 14.0, Variant.SINGLE_REFLECTION,
                          s=2.0, bound_m=1.0).linf_bound
              for star in (1e-2, 1e-4, 1e-6, 1e-8, 1e-10)]
    assert all(b1 >= b2 for b1, b2 in zip(bounds, bounds[1:]))
    for star in (1e-3, 1e-7):
        res = bound_chain(1.0, star, 0.5, 14.0, Variant.DOUBLE_REFLECTION,
                          s=2.5, bound_m=1.0)
        assert res.check_internal()
