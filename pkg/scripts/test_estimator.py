#!/usr/bin/env python3
"""
Tests for initialization, the box-constrained minimizer and curve fitting.

Replication tests (many seeded fits) only run with MIXREG_SLOW=1.
"""

import math
import os
import sys
from unittest import mock

import numpy as np
import pytest

script_dir = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, script_dir)

from contrast import ContrastConfig, ContrastEvaluator, contrast_gradient_fd, mc_contrast
import estimator
from errors import (DegenerateTransferError, EmptyGroupError, InsufficientDataError,
                    NonFiniteContrastError, ValidationError)
from estimator import (TRANSFER_FLOOR, FitOptions, classify, fit_curve, fit_point,
                       group_smooth, initialize, minimize_in_box, pilot_regression,
                       point_flags, polynomial_mixture_em)
from model_core import Dataset, ParamSpace, ThetaPoint
from simulation import SCENARIOS, sample_dataset, true_theta

SLOW = os.getenv('MIXREG_SLOW') == '1'
slow = pytest.mark.skipif(not SLOW, reason="set MIXREG_SLOW=1 for replication tests")


def _reference_nw(x, y, x0, h):
    w = np.exp(-0.5 * ((x - x0) / h) ** 2)
    return float(np.sum(w * y) / np.sum(w))


def _fit_at(data, x0, init_theta=None, n_mc=None, seed=0, **kwargs):
    """Initialization plus one fit_point at x0, the way fit_curve does it."""
    init = initialize(data, [x0], FitOptions())
    space = ParamSpace.from_responses(data.y)
    start = init_theta or ThetaPoint(init.pi_bar, float(init.a_bar[0]), float(init.b_bar[0]))
    cfg = ContrastConfig(x0=x0, h=float(init.h_local[0]), n_mc=n_mc or data.n, seed=seed)
    theta, diag = fit_point(data, x0, start, float(init.h_local[0]), space, cfg, **kwargs)
    return theta, diag, start, space, cfg, init


def test_pilot_constant_and_linear():
    print("\n[TEST] pilot regression...")
    x = np.linspace(0.0, 1.0, 200)
    constant = pilot_regression(Dataset(x, np.full(200, 2.5)))
    assert np.allclose(constant, 2.5, rtol=0, atol=1e-12)

    data = Dataset(x, x.copy())
    pilot = pilot_regression(data)
    # 40th nearest other point of an equispaced interior point
    h = 20.0 / 199.0
    interior = (x >= 0.3) & (x <= 0.7)
    assert np.max(np.abs(pilot[interior] - x[interior])) < 0.02
    for i in np.flatnonzero(interior)[::10]:
        assert pilot[i] == pytest.approx(_reference_nw(x, x, x[i], h), abs=1e-9)
    print("  [PASS] constant reproduced, linear interior error < 0.02")


def test_pilot_duplicate_invariance():
    print("\n[TEST] duplicating every observation leaves the pilot unchanged...")
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, 50)
    y = np.sin(4 * x) + rng.normal(0, 0.3, 50)
    single = pilot_regression(Dataset(x, y))
    double = pilot_regression(Dataset(np.concatenate([x, x]), np.concatenate([y, y])))
    assert np.allclose(double[:50], single, rtol=1e-12, atol=1e-12)
    assert np.allclose(double[50:], single, rtol=1e-12, atol=1e-12)
    print("  [PASS]")


def test_pilot_needs_data():
    print("\n[TEST] pilot regression preconditions...")
    with pytest.raises(InsufficientDataError):
        pilot_regression(Dataset(np.linspace(0, 1, 5), np.zeros(5)))
    with pytest.raises(ValidationError):
        pilot_regression(Dataset(np.linspace(0, 1, 20), np.zeros(20)), frac=0.0)
    print("  [PASS]")


def test_row_chunks_do_not_change_results():
    print("\n[TEST] pilot and group smooths agree for any row block size...")
    data = sample_dataset(SCENARIOS['G'], 300, 9)
    grid = np.arange(1, 21) / 20.0
    pilot = pilot_regression(data)
    labels = classify(data, pilot)
    smooth = group_smooth(data, labels, grid)
    with mock.patch.object(estimator, 'ROW_CHUNK', 7):
        chunked_pilot = pilot_regression(data)
        chunked_smooth = group_smooth(data, labels, grid)
    assert np.allclose(chunked_pilot, pilot, rtol=1e-12, atol=1e-12)
    for full, chunked in zip(smooth, chunked_smooth):
        assert np.allclose(chunked, full, rtol=1e-12, atol=1e-12)
    print("  [PASS]")


def test_classify():
    print("\n[TEST] classify...")
    data = Dataset([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])
    assert classify(data, np.array([1.0, 2.0, 2.0])).tolist() == [2, 2, 1]

    x = np.linspace(0, 1, 40)
    bands = np.where(np.arange(40) % 2 == 0, 5.0, -5.0)
    labels = classify(Dataset(x, bands), np.zeros(40))
    assert np.array_equal(labels == 1, bands > 0)

    with pytest.raises(EmptyGroupError):
        classify(Dataset(x, np.ones(40)), np.zeros(40))

    g = sample_dataset(SCENARIOS['G'], 400, 1)
    share = float(np.mean(classify(g, pilot_regression(g)) == 1))
    assert 0.1 <= share <= 0.9
    print(f"  [PASS] ties go to group 2, bands split, G share = {share:.2f}")


def test_group_smooth_constants():
    print("\n[TEST] group-wise smoothing of constant groups...")
    x = np.linspace(0, 1, 40)
    bands = np.where(np.arange(40) % 2 == 0, 5.0, -5.0)
    data = Dataset(x, bands)
    labels = np.where(bands > 0, 1, 2)
    a_bar, b_bar, h1, h2 = group_smooth(data, labels, [0.25, 0.5, 0.75])
    assert np.allclose(a_bar, 5.0) and np.allclose(b_bar, -5.0)
    assert np.all(h1 > 0) and np.all(h2 > 0)

    init = initialize(Dataset(x, bands + 0.01 * np.sin(17 * x)), [0.25, 0.5, 0.75])
    assert np.array_equal(init.h_local, np.minimum(init.h1, init.h2))
    assert init.pi_bar == 0.4
    print("  [PASS]")


def test_polynomial_em_initializer():
    print("\n[TEST] polynomial mixture EM...")
    rng = np.random.default_rng(4)
    n = 400
    x = rng.uniform(0, 1, n)
    first = rng.random(n) < 0.4
    y = np.where(first, 3.0 + 2.0 * x, -2.0 - x) + rng.normal(0, 0.3, n)
    data = Dataset(x, y)
    coef1, coef2, prop, sigma, resp = polynomial_mixture_em(data, degree=1)
    assert coef1 == pytest.approx([3.0, 2.0], abs=0.25)
    assert coef2 == pytest.approx([-2.0, -1.0], abs=0.25)
    assert prop == pytest.approx(0.4, abs=0.08)
    assert sigma == pytest.approx(0.3, abs=0.08)
    assert np.mean((resp > 0.5) == first) > 0.98

    init = initialize(data, [0.5], FitOptions(init_method='poly-em', poly_degree=1))
    assert init.method == 'poly-em'
    assert init.a_bar[0] == pytest.approx(4.0, abs=0.25)
    assert init.b_bar[0] == pytest.approx(-2.5, abs=0.25)
    print("  [PASS]")


def test_minimize_fixed_point():
    print("\n[TEST] minimizer started at the exact minimizer...")
    target = np.array([0.3, 1.0, -1.0])
    space = ParamSpace(loc_lo=-5.0, loc_hi=5.0)

    def bowl(v):
        return float(np.sum((v - target) ** 2))

    best, value, nit = minimize_in_box(bowl, target, space, steps=[1e-6, 1e-6, 1e-6])
    assert np.allclose(best, target, atol=1e-5)
    assert value == 0.0
    assert nit <= 2
    print(f"  [PASS] {nit} iterations")


def test_minimize_respects_admissible_region():
    print("\n[TEST] minimizer never keeps an inadmissible vertex...")
    space = ParamSpace(loc_lo=-5.0, loc_hi=5.0)
    target = np.array([0.45, 1.0, -1.0])

    def admissible(v):
        return v[0] <= 0.4

    best, value, _ = minimize_in_box(lambda v: float(np.sum((v - target) ** 2)),
                                     [0.3, 0.0, 0.0], space, [0.1, 0.5, 0.5],
                                     admissible=admissible)
    assert best[0] <= 0.4
    assert best[0] == pytest.approx(0.4, abs=1e-2)
    assert math.isfinite(value)
    with pytest.raises(DegenerateTransferError):
        minimize_in_box(lambda v: 0.0, [0.45, 0.0, 0.0], space, [0.1, 0.5, 0.5],
                        admissible=admissible)
    print("  [PASS]")


def test_fit_point_avoids_vanishing_transfer():
    print("\n[TEST] fit stays away from nodes where |M| vanishes...")
    data = sample_dataset(SCENARIOS['G'], 300, 5)
    theta, diag, start, space, cfg, _ = _fit_at(data, 0.5)
    ev = ContrastEvaluator(cfg, data)
    assert ev.min_transfer_modulus(theta) >= TRANSFER_FLOOR
    assert ev.min_transfer_modulus(start) >= TRANSFER_FLOOR
    assert -1.0 < diag.contrast_value <= diag.init_contrast
    assert diag.contrast_value == pytest.approx(mc_contrast(ev, theta), rel=1e-12)
    print(f"  [PASS] pi = {theta.pi:.3f}, min |M| = {ev.min_transfer_modulus(theta):.3f}")


def test_fit_point_rejects_degenerate_start():
    print("\n[TEST] starting value below the transfer floor...")
    data = sample_dataset(SCENARIOS['G'], 200, 4)
    space = ParamSpace.from_responses(data.y)
    cfg = ContrastConfig(x0=0.5, h=0.1, n_mc=200)
    with pytest.raises(DegenerateTransferError):
        fit_point(data, 0.5, ThetaPoint(0.3, 4.0, -3.0), 0.1, space, cfg, transfer_floor=0.99)
    print("  [PASS]")


def test_curve_contrast_bounded_below():
    print("\n[TEST] no grid point runs off to a huge negative contrast...")
    for name in ('G', 'L'):
        data = sample_dataset(SCENARIOS[name], 400, 2)
        result = fit_curve(data, np.arange(1, 11) / 10.0)
        assert not result.failed
        assert np.all(result.contrast_value > -1.0), (name, result.contrast_value)
    print("  [PASS]")


def test_minimize_reaches_minimum_inside_box():
    print("\n[TEST] minimizer on a bowl, with and without an active bound...")
    space = ParamSpace(loc_lo=-5.0, loc_hi=5.0)
    target = np.array([0.3, 1.0, -1.0])
    best, _, _ = minimize_in_box(lambda v: float(np.sum((v - target) ** 2)),
                                 [0.5, 0.0, 0.0], space, [0.1, 0.5, 0.5])
    assert np.allclose(best, target, atol=1e-4)

    # unconstrained minimum outside the box in a: lands on the bound
    outside = np.array([0.3, 7.0, -1.0])
    best, _, _ = minimize_in_box(lambda v: float(np.sum((v - outside) ** 2)),
                                 [0.5, 0.0, 0.0], space, [0.1, 0.5, 0.5])
    assert np.all(best >= space.lower) and np.all(best <= space.upper)
    assert best[1] == pytest.approx(5.0, abs=1e-3)
    print("  [PASS]")


def test_fit_point_descent_and_box():
    print("\n[TEST] fit_point descent property...")
    data = sample_dataset(SCENARIOS['G'], 400, 3)
    theta, diag, start, space, _, _ = _fit_at(data, 0.5)
    assert diag.contrast_value <= diag.init_contrast
    assert space.contains(theta)
    assert 1 <= diag.iterations <= 500
    print(f"  [PASS] S: {diag.init_contrast:.4g} -> {diag.contrast_value:.4g}")


def test_fit_point_swap_symmetric_starts():
    print("\n[TEST] swap-symmetric starts reach mirrored solutions...")
    data = sample_dataset(SCENARIOS['G'], 300, 5)
    theta, diag, start, space, cfg, init = _fit_at(data, 0.5)
    swapped, diag_swapped, *_ = _fit_at(data, 0.5, init_theta=start.swapped())
    assert abs(diag.contrast_value - diag_swapped.contrast_value) < 1e-8
    assert swapped.as_array() == pytest.approx(theta.swapped().as_array(), abs=1e-6)
    print("  [PASS]")


def test_fit_point_first_order_condition():
    print("\n[TEST] gradient vanishes at an interior minimum...")
    data = sample_dataset(SCENARIOS['G'], 600, 8)
    theta, diag, _, space, cfg, _ = _fit_at(data, 0.5, max_iter=5000, xatol=1e-9)
    assert 'boundary_hit' not in diag.flags
    ev = ContrastEvaluator(cfg, data)
    grad = contrast_gradient_fd(ev, theta, step=1e-6)
    value = mc_contrast(ev, theta)
    assert np.linalg.norm(grad) < 1e-4 * (1.0 + abs(value)), grad
    print(f"  [PASS] |grad| = {np.linalg.norm(grad):.2e}")


def test_fit_point_rejects_outside_start():
    print("\n[TEST] initial value outside the box...")
    data = sample_dataset(SCENARIOS['G'], 100, 2)
    space = ParamSpace(loc_lo=-1.0, loc_hi=1.0)
    cfg = ContrastConfig(x0=0.5, h=0.2, n_mc=50)
    with pytest.raises(ValidationError):
        fit_point(data, 0.5, ThetaPoint(0.3, 4.0, 0.0), 0.2, space, cfg)
    print("  [PASS]")


def test_point_flags():
    print("\n[TEST] point flags...")
    space = ParamSpace(loc_lo=-10.0, loc_hi=10.0)
    init = ThetaPoint(0.4, 3.0, -3.0)
    assert point_flags(ThetaPoint(0.3, 3.0, -3.0), init, space) == []
    assert 'boundary_hit' in point_flags(ThetaPoint(0.0505, 3.0, -3.0), init, space)
    assert 'merge_suspect' in point_flags(ThetaPoint(0.06, 3.0, -3.0), init, space)
    assert 'merge_suspect' in point_flags(ThetaPoint(0.3, 1.0, 0.5), init, space)
    assert 'label_switch_suspect' in point_flags(ThetaPoint(0.7, -3.0, 3.0), init, space)
    assert 'degenerate_transfer' in point_flags(ThetaPoint(0.45, 3.0, -3.0), init, space, 0.105, 0.1)
    assert 'degenerate_transfer' not in point_flags(ThetaPoint(0.3, 3.0, -3.0), init, space, 0.4, 0.1)
    assert 'degenerate_transfer' not in point_flags(ThetaPoint(0.3, 3.0, -3.0), init, space, 0.0, 0.0)
    print("  [PASS]")


def test_fit_options():
    print("\n[TEST] FitOptions...")
    assert FitOptions().contrast_bandwidth(0.12, 400, 1) == 0.12
    assert FitOptions(bandwidth_mode='global', h=0.3).contrast_bandwidth(0.12, 400, 1) == 0.3
    rate = FitOptions(bandwidth_mode='rate').contrast_bandwidth(0.12, 1000, 1)
    assert rate == pytest.approx(0.1)
    for bad in ({'bandwidth_mode': 'global'}, {'frac': 0.0}, {'pi_bar': 1.0},
                {'init_method': 'kmeans'}, {'n_mc': 0}, {'xatol': 0.0}, {'transfer_floor': 1.0},
                {'transfer_floor': -0.1}):
        with pytest.raises(ValidationError):
            FitOptions(**bad)
    print("  [PASS]")


def test_fit_curve_single_point_matches_fit_point():
    print("\n[TEST] K = 1 curve equals one fit_point...")
    data = sample_dataset(SCENARIOS['G'], 300, 6)
    curve = fit_curve(data, [0.5])
    theta, diag, *_ = _fit_at(data, 0.5)
    assert curve.theta_hat[0] == theta
    assert curve.contrast_value[0] == diag.contrast_value
    assert curve.seeds == [0]
    print("  [PASS]")


def test_fit_curve_permutation_invariance():
    print("\n[TEST] grid order does not change per-point results...")
    data = sample_dataset(SCENARIOS['T'], 300, 7)
    grid = np.array([0.3, 0.5, 0.7])
    order = [2, 0, 1]
    forward = fit_curve(data, grid)
    shuffled = fit_curve(data, grid[order])
    for j, k in enumerate(order):
        assert shuffled.seeds[j] == forward.seeds[k]
        assert np.allclose(shuffled.theta_hat[j].as_array(), forward.theta_hat[k].as_array(),
                           rtol=0, atol=1e-8)
    print("  [PASS]")


def test_fit_curve_threads_match_inline():
    print("\n[TEST] worker count does not change results...")
    data = sample_dataset(SCENARIOS['L'], 250, 9)
    grid = [0.25, 0.5, 0.75]
    inline = fit_curve(data, grid)
    threaded = fit_curve(data, grid, options=FitOptions(workers=3))
    assert [t.as_array().tolist() for t in inline.theta_hat] == \
        [t.as_array().tolist() for t in threaded.theta_hat]
    print("  [PASS]")


def test_fit_curve_reports_point_failures():
    print("\n[TEST] a failing point does not abort the curve...")
    data = sample_dataset(SCENARIOS['G'], 200, 4)
    real_fit_point = estimator.fit_point

    def failing_at_06(data, x0, *args, **kwargs):
        if abs(float(np.atleast_1d(x0)[0]) - 0.6) < 1e-12:
            raise NonFiniteContrastError("contrast is nan at the start")
        return real_fit_point(data, x0, *args, **kwargs)

    with mock.patch.object(estimator, 'fit_point', failing_at_06):
        result = fit_curve(data, [0.3, 0.6], options=FitOptions(n_mc=100))
    assert result.failed == [1]
    assert result.flags[1] == ['failed'] and 'nan' in result.errors[1]
    assert result.theta_hat[0] is not None and 'failed' not in result.flags[0]
    assert math.isnan(result.contrast_value[1])
    payload = result.to_dict()
    assert payload['points'][1]['pi_hat'] is None
    assert payload['points'][1]['contrast_value'] is None
    print("  [PASS] failed point flagged, the other fitted")


def test_fit_curve_student_smoke():
    print("\n[TEST] 20-point curve on scenario T...")
    data = sample_dataset(SCENARIOS['T'], 400, 11)
    result = fit_curve(data, np.arange(1, 21) / 20.0, options=FitOptions(n_mc=200))
    assert not result.failed
    assert all(np.all(np.isfinite(t.as_array())) for t in result.theta_hat)
    print("  [PASS]")


@slow
def test_pilot_on_a_large_sample():
    print("\n[TEST] pilot regression with n = 12000...")
    data = sample_dataset(SCENARIOS['G'], 12_000, 1)
    pilot = pilot_regression(data)
    assert pilot.shape == (12_000,) and np.all(np.isfinite(pilot))
    print("  [PASS]")


@slow
def test_init_tracks_truth_over_seeds():
    print("\n[TEST] a_bar close to a(x) on scenario G...")
    sc = SCENARIOS['G']
    grid = np.arange(1, 21) / 20.0
    truth = np.array([true_theta(sc, x).a for x in grid])
    hits = 0
    for seed in range(20):
        init = initialize(sample_dataset(sc, 1200, seed), grid)
        hits += np.max(np.abs(init.a_bar - truth)) < 1.0
    assert hits >= 16, hits
    print(f"  [PASS] {hits}/20 seeds")


@slow
def test_fit_point_accuracy_over_seeds():
    print("\n[TEST] estimate at x0 = 0.5 near truth on scenario G...")
    sc = SCENARIOS['G']
    truth = true_theta(sc, 0.5)
    hits = 0
    for seed in range(20):
        theta, *_ = _fit_at(sample_dataset(sc, 1200, seed), 0.5)
        hits += (abs(theta.pi - truth.pi) < 0.1 and abs(theta.a - truth.a) < 0.5
                 and abs(theta.b - truth.b) < 0.5)
    assert hits >= 14, hits
    print(f"  [PASS] {hits}/20 seeds")


def main():
    print("\n" + "=" * 60)
    print("Estimator - Unit Tests")
    print("=" * 60)

    try:
        test_pilot_constant_and_linear()
        test_pilot_duplicate_invariance()
        test_pilot_needs_data()
        test_row_chunks_do_not_change_results()
        test_classify()
        test_group_smooth_constants()
        test_polynomial_em_initializer()
        test_minimize_fixed_point()
        test_minimize_respects_admissible_region()
        test_minimize_reaches_minimum_inside_box()
        test_fit_point_descent_and_box()
        test_fit_point_swap_symmetric_starts()
        test_fit_point_first_order_condition()
        test_fit_point_rejects_outside_start()
        test_fit_point_avoids_vanishing_transfer()
        test_fit_point_rejects_degenerate_start()
        test_point_flags()
        test_fit_options()
        test_fit_curve_single_point_matches_fit_point()
        test_fit_curve_permutation_invariance()
        test_fit_curve_threads_match_inline()
        test_fit_curve_reports_point_failures()
        test_fit_curve_student_smoke()
        test_curve_contrast_bounded_below()
        if SLOW:
            test_pilot_on_a_large_sample()
            test_init_tracks_truth_over_seeds()
            test_fit_point_accuracy_over_seeds()

        print("\n" + "=" * 60)
        print("[SUCCESS] All tests passed!")
        print("=" * 60)
        return 0

    except AssertionError as e:
        print(f"\n[FAILED] Test failed: {e}")
        return 1


if __name__ == '__main__':
    sys.exit(main())
