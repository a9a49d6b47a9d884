"""Grid certification: scalar fields, sweeps, the six checkers, envelope fits."""

import numpy as np
import pytest

from issf import (
    GradientMismatchError,
    GridSpec,
    ScalarField,
    check_barrier_certificate,
    check_iss_lyapunov,
    check_issf_barrier,
    check_merged_w,
    check_robust_barrier,
    check_strict_barrier,
    disk,
    fit_envelope,
    fit_iss_envelopes,
    fit_issf_envelopes,
    fit_merged_envelopes,
    input_sweep,
    linear,
    planar_integrator,
    power,
    FeedbackLaw,
)

M = np.array([[1.0, 0.5], [0.5, 1.0]])


def _quad_V():
    return ScalarField(
        name="V", value=lambda p: np.einsum("...i,ij,...j->...", p, M, p),
        gradient=lambda p: 2.0 * p @ M.T)


def _value_loop():
    """xdot = -gradV + v."""
    law = FeedbackLaw(k=lambda p: -2.0 * p @ M.T, description="value law")
    return planar_integrator().with_feedback(law)


def _box(res=101, exclusion=None, inputs=None):
    return GridSpec.cartesian([[-10.0, 10.0], [-10.0, 10.0]], resolution=res,
                              exclusion=exclusion, input_samples=inputs)


# ---------------------------------------------------------------------------
# scalar fields and hygiene


def test_gradient_finite_difference_agreement():
    f = _quad_V()
    rng = np.random.default_rng(0)
    pts = rng.normal(scale=4.0, size=(300, 2))
    assert f.gradient_mismatch(pts) < 1e-8
    f.assert_gradient_ok(pts)


def test_lying_gradient_is_caught():
    liar = ScalarField(name="V", value=_quad_V().value,
                       gradient=lambda p: 3.0 * p @ M.T)
    pts = np.random.default_rng(1).normal(size=(50, 2))
    with pytest.raises(GradientMismatchError):
        liar.assert_gradient_ok(pts)


def test_checkers_abort_on_wrong_gradient():
    liar = ScalarField(name="V", value=_quad_V().value,
                       gradient=lambda p: 3.0 * p @ M.T)
    with pytest.raises(GradientMismatchError):
        check_iss_lyapunov(liar, _value_loop(), power(2, c=0.5),
                           power(2, c=1.5), power(2), linear(15.0), _box(31))


# ---------------------------------------------------------------------------
# grids and sweeps


def test_cartesian_grid_respects_exclusion():
    D = disk((0.0, 0.0), 2.0)
    grid = _box(res=41, exclusion=D)
    pts = grid.points()
    assert np.all(D.distance(pts) > 0.0)
    assert pts.shape[0] < 41 * 41


def test_annulus_grid_stays_strictly_inside():
    grid = GridSpec.annulus((4.0, 6.0), 2.0, 3.0, n_r=16, n_theta=32)
    r = np.linalg.norm(grid.points() - np.array([4.0, 6.0]), axis=1)
    assert r.min() > 2.0 and r.max() < 3.0


def test_input_sweep_composition():
    sweep = input_sweep(2, 3.0, norms=[1.0, 3.0], n_angles=8)
    arr = np.asarray(sweep)
    # zero + 4 axis extremes + 8 angles x 2 norms
    assert arr.shape == (1 + 4 + 16, 2)
    assert np.any(np.all(arr == 0.0, axis=1))
    norms = np.linalg.norm(arr, axis=1)
    assert norms.max() == pytest.approx(3.0)


# ---------------------------------------------------------------------------
# the Lyapunov checker on a loop with known constants


def test_iss_lyapunov_passes_with_adequate_supply():
    # sandwich 0.5|x|^2 <= V <= 1.5|x|^2; decrease |2Mx|^2 >= |x|^2;
    # worst coupling on the box is sqrt(200)|v| ~ 14.15|v|, so 15 s clears it
    rep = check_iss_lyapunov(_quad_V(), _value_loop(), power(2, c=0.5),
                             power(2, c=1.5), power(2), linear(15.0),
                             _box(101), U_samples=input_sweep(2, 3.0))
    assert rep.verdict
    assert rep.condition == "iss_lyapunov"
    assert {f.condition for f in rep.families} == {
        "sandwich_lower", "sandwich_upper", "dissipation"}


def test_iss_lyapunov_fails_with_undersized_supply():
    # a quadratic supply is too small near |v| -> 0 against linear coupling
    rep = check_iss_lyapunov(_quad_V(), _value_loop(), power(2, c=0.5),
                             power(2, c=1.5), power(2), power(2, c=9.0),
                             _box(101), U_samples=input_sweep(2, 3.0))
    assert not rep.verdict
    fam = rep.family("dissipation")
    assert not fam.verdict and fam.worst_margin < 0
    # the witness is reproducible standalone from scratch
    assert fam.recheck() == pytest.approx(
        fam.worst_margin, abs=1e-9)
    # and the explicit construction v = x/18 violates pointwise
    x = np.asarray(fam.witness_point)
    v = x / 18.0
    lhs = 2.0 * (x @ M) @ (-2.0 * M @ x + v)
    rhs = -float(np.dot(x, x)) + 9.0 * float(np.dot(v, v) ** 0.5) ** 2
    assert lhs > rhs  # dissipation inequality violated at the witness


def test_iss_envelope_fit_recertifies():
    grid = _box(81)
    sweep = input_sweep(2, 3.0)
    fit = fit_iss_envelopes(_quad_V(), _value_loop(), grid, sweep)
    assert fit.feasible
    rep = check_iss_lyapunov(_quad_V(), _value_loop(), fit.a1, fit.a2,
                             fit.a3, fit.gamma, grid, U_samples=sweep)
    assert rep.verdict


def test_refining_the_grid_never_improves_the_margin():
    args = (_quad_V(), _value_loop(), power(2, c=0.5), power(2, c=1.5),
            power(2), linear(15.0))
    coarse = check_iss_lyapunov(*args, _box(51), U_samples=input_sweep(2, 3.0))
    fine = check_iss_lyapunov(*args, _box(101), U_samples=input_sweep(2, 3.0))
    assert fine.worst_margin <= coarse.worst_margin + 1e-12


# ---------------------------------------------------------------------------
# barrier checkers on the planar benchmark


def test_barrier_certificate_accepts_benchmark(compact_barrier, closed_loop,
                                               unsafe_disk, benchmark_spec):
    ics = np.asarray(benchmark_spec.initial_conditions)
    grid = GridSpec.cartesian([[-10.0, 12.0], [-10.0, 12.0]], resolution=101)
    rep = check_barrier_certificate(compact_barrier.as_field(), closed_loop,
                                    unsafe_disk, ics, grid)
    assert rep.verdict


def test_barrier_certificate_rejects_sign_flip(compact_barrier, closed_loop,
                                               unsafe_disk, benchmark_spec):
    Bf = compact_barrier.as_field()
    flipped = ScalarField(name="-Btilde", value=lambda p: -Bf(p),
                          gradient=lambda p: -Bf.grad(p))
    ics = np.asarray(benchmark_spec.initial_conditions)
    grid = GridSpec.cartesian([[-10.0, 12.0], [-10.0, 12.0]], resolution=101)
    rep = check_barrier_certificate(flipped, closed_loop, unsafe_disk, ics,
                                    grid)
    assert not rep.verdict
    fam = rep.family("positive_on_unsafe")
    assert not fam.verdict
    # witness really sits in the unsafe set with a nonpositive value
    w = np.asarray(fam.witness_point)
    assert float(unsafe_disk.distance(w[None])[0]) == 0.0
    assert flipped(w[None])[0] <= 0.0


def test_strict_barrier_on_selected_annulus(compact_barrier, closed_loop,
                                            unsafe_disk, locality, sweep):
    grid = GridSpec.annulus((4.0, 6.0), 2.0, locality.selected_radius,
                            n_r=48, n_theta=96, input_samples=sweep)
    rep = check_strict_barrier(compact_barrier.as_field(), closed_loop,
                               unsafe_disk, locality.bundle.alphas["a3"],
                               grid)
    assert rep.verdict


def test_robust_barrier_fails_without_feedback(compact_barrier, open_loop,
                                               unsafe_disk, locality, sweep):
    grid = GridSpec.annulus((4.0, 6.0), 2.0, locality.selected_radius,
                            n_r=48, n_theta=96, input_samples=sweep)
    rep = check_robust_barrier(compact_barrier.as_field(), open_loop, sweep,
                               grid)
    assert not rep.verdict
    # the witness shows the disturbance pushing through the barrier
    w = np.asarray(rep.witness_point)[None, :]
    v = np.asarray(rep.witness_input)
    Bf = compact_barrier.as_field()
    growth = float(Bf.grad(w)[0] @ (open_loop.drift(w)[0]
                                    + open_loop.input_matrix(w)[0] @ v))
    assert growth > 0.0
    assert rep.recheck() == pytest.approx(
        rep.worst_margin, abs=1e-9)


def test_issf_fit_recertifies_on_selected_window(compact_barrier, closed_loop,
                                                 unsafe_disk, locality,
                                                 sweep):
    rp = locality.selected_radius
    grid = GridSpec.annulus((4.0, 6.0), 2.0, rp, n_r=96, n_theta=192,
                            input_samples=sweep)
    fit = locality.fit
    rep = check_issf_barrier(compact_barrier.as_field(), closed_loop,
                             unsafe_disk, disk((4.0, 6.0), rp), fit.a1,
                             fit.a2, fit.a3, fit.a4, sweep, grid)
    assert rep.verdict
    assert rep.worst_margin > 0.0


def test_issf_fit_infeasible_on_full_window(compact_barrier, closed_loop,
                                            unsafe_disk, window_disk, sweep):
    # at the window rim the transform kills the gradient, so no class-Kinf
    # decrease envelope exists over the full annulus
    fit = fit_issf_envelopes(compact_barrier.as_field(), closed_loop,
                             unsafe_disk, window_disk, sweep)
    assert not fit.feasible
    assert not fit.fits["a3"].feasible
    assert fit.fits["a3"].witness is not None


def test_merged_check_fails_only_the_global_sandwich(merged, closed_loop,
                                                     unsafe_disk, window_disk,
                                                     sweep):
    Wf = merged.as_field()
    grid = GridSpec.cartesian([[-10.0, 12.0], [-10.0, 12.0]], resolution=201,
                              input_samples=sweep)
    fit = fit_merged_envelopes(Wf, closed_loop, unsafe_disk, window_disk,
                               sweep, grid)
    rep = check_merged_w(Wf, closed_loop, unsafe_disk, window_disk, fit.c,
                         *fit.alphas(), sweep, grid)
    verdicts = {f.condition: f.verdict for f in rep.families}
    assert verdicts["sandwich_lower"] is False
    assert verdicts["sandwich_upper"] is True
    assert verdicts["band_lower"] is True
    assert verdicts["band_upper"] is True
    assert verdicts["indicator_dissipation"] is True
    fam = rep.family("sandwich_lower")
    # the offset sinks the merged value far below zero near the origin
    assert fam.worst_margin < -200.0
    assert fam.recheck() == pytest.approx(
        fam.worst_margin, abs=1e-9)


# ---------------------------------------------------------------------------
# envelope fitting


def test_fit_envelope_sides_bound_the_data():
    rng = np.random.default_rng(4)
    xs = rng.uniform(0.05, 3.0, 400)
    ys = 2.0 * xs + 0.3 * xs ** 2 + rng.uniform(0.0, 0.2, 400)
    up = fit_envelope(xs, ys, "upper")
    lo = fit_envelope(xs, ys, "lower")
    assert up.feasible and lo.feasible
    assert np.all(up.fn(xs) >= ys - 1e-12)
    assert np.all(lo.fn(xs) <= ys + 1e-12)


def test_fit_envelope_lower_infeasible_on_sign_change():
    xs = np.array([0.5, 1.0, 1.5])
    ys = np.array([1.0, -0.2, 2.0])
    fit = fit_envelope(xs, ys, "lower")
    assert not fit.feasible
    assert fit.witness == (1.0, -0.2)


def test_fit_envelope_rejects_bad_arguments():
    from issf import DomainError
    with pytest.raises(DomainError):
        fit_envelope([1.0], [1.0], "sideways")
    with pytest.raises(DomainError):
        fit_envelope([0.0], [1.0], "upper")  # no positive abscissae
