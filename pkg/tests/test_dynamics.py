"""Integrator correctness, disturbance determinism, events, and CSV I/O."""

import numpy as np
import pytest

from issf import (
    ControlAffineSystem,
    DomainError,
    FeedbackLaw,
    FiniteEscapeError,
    SafetyGeometry,
    disk,
    constant_signal,
    integrate,
    integrate_batch,
    planar_integrator,
    sample_disturbance,
    seeded_noise_signal,
    sinusoid_signal,
    zero_signal,
)

M = np.array([[1.0, 0.5], [0.5, 1.0]])


def _linear_loop():
    """xdot = -2 M x + u, as open loop plus linear feedback."""
    law = FeedbackLaw(k=lambda p: -2.0 * p @ M.T, description="linear law")
    return planar_integrator().with_feedback(law), law


def _expm_sym(A: np.ndarray, t: float) -> np.ndarray:
    w, Q = np.linalg.eigh(A)
    return (Q * np.exp(w * t)) @ Q.T


FAR_GEOM = SafetyGeometry(disk((50.0, 50.0), 1.0), disk((50.0, 50.0), 2.0))


def test_matches_matrix_exponential():
    sys = planar_integrator()
    _, law = _linear_loop()
    x0 = np.array([3.0, -1.0])
    tr = integrate(sys, x0, zero_signal(2), law=law, t_end=10.0, dt=1e-3,
                   geom=FAR_GEOM)
    exact = _expm_sym(-2.0 * M, 10.0) @ x0
    assert np.linalg.norm(tr.states[-1] - exact) < 1e-9
    # and along the way, not only at the endpoint
    mid = tr.states[tr.times == 5.0][0]
    assert np.linalg.norm(mid - _expm_sym(-2.0 * M, 5.0) @ x0) < 1e-9


def test_fourth_order_convergence():
    sys = planar_integrator()
    _, law = _linear_loop()
    sig = sinusoid_signal([1.0, 0.5], [2.0, 3.0])
    x0 = np.array([1.0, 1.0])

    def endpoint(dt):
        return integrate(sys, x0, sig, law=law, t_end=2.0, dt=dt,
                         geom=FAR_GEOM).states[-1]

    ref = endpoint(1e-4)
    e1 = np.linalg.norm(endpoint(4e-3) - ref)
    e2 = np.linalg.norm(endpoint(2e-3) - ref)
    order = np.log2(e1 / e2)
    assert order > 3.5


def test_batch_is_deterministic():
    sys = planar_integrator()
    _, law = _linear_loop()
    sig = seeded_noise_signal(2.0, seed=9, hold_dt=0.05, dim_u=2)
    x0s = np.array([[1.0, 2.0], [0.5, -0.5]])
    a = integrate_batch(sys, x0s, sig, law=law, t_end=1.0, dt=1e-3,
                        geom=FAR_GEOM)
    sig2 = seeded_noise_signal(2.0, seed=9, hold_dt=0.05, dim_u=2)
    b = integrate_batch(sys, x0s, sig2, law=law, t_end=1.0, dt=1e-3,
                        geom=FAR_GEOM)
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.states, tb.states)
        assert np.array_equal(ta.inputs, tb.inputs)


def test_bounded_steady_offset_under_constant_input():
    # xdot = -2Mx + u settles at x* = (2M)^{-1} u
    sys = planar_integrator()
    _, law = _linear_loop()
    u = np.array([1.0, -0.5])
    tr = integrate(sys, np.array([4.0, 4.0]), constant_signal(u), law=law,
                   t_end=15.0, dt=1e-3, geom=FAR_GEOM)
    x_star = np.linalg.solve(2.0 * M, u)
    assert np.linalg.norm(tr.states[-1] - x_star) < 1e-6
    # tail stays within a safe factor of the input gain
    tail = tr.norm_x[tr.times > 10.0]
    assert np.all(tail <= 1.05 * np.linalg.norm(np.linalg.inv(2 * M)) *
                  np.linalg.norm(u))


# ---------------------------------------------------------------------------
# disturbance signals


def test_noise_respects_bound_and_seed():
    sig = seeded_noise_signal(3.0, seed=42, hold_dt=0.1, dim_u=2)
    t = np.linspace(0.0, 20.0, 777)
    u = sig.sample_times(t)
    assert np.all(np.linalg.norm(u, axis=1) <= 3.0 + 1e-12)
    again = seeded_noise_signal(3.0, seed=42, hold_dt=0.1, dim_u=2)
    assert np.array_equal(u, again.sample_times(t))
    other = seeded_noise_signal(3.0, seed=43, hold_dt=0.1, dim_u=2)
    assert not np.array_equal(u, other.sample_times(t))


def test_noise_is_query_order_independent():
    a = seeded_noise_signal(1.0, seed=7, hold_dt=0.1, dim_u=2)
    b = seeded_noise_signal(1.0, seed=7, hold_dt=0.1, dim_u=2)
    late_then_early = [a.sample(150.0), a.sample(0.05)]
    early_then_late = [b.sample(0.05), b.sample(150.0)]
    assert np.array_equal(late_then_early[0], early_then_late[1])
    assert np.array_equal(late_then_early[1], early_then_late[0])


def test_noise_holds_between_grid_points():
    sig = seeded_noise_signal(2.0, seed=1, hold_dt=0.25, dim_u=2)
    inside = [sig.sample(t) for t in (0.5, 0.6, 0.74)]
    assert np.array_equal(inside[0], inside[1])
    assert np.array_equal(inside[0], inside[2])
    assert not np.array_equal(sig.sample(0.74), sig.sample(0.76))


def test_noise_fills_the_ball():
    # uniform draws should reach both deep and shallow norms
    sig = seeded_noise_signal(1.0, seed=0, hold_dt=0.1, dim_u=2)
    norms = np.linalg.norm(sig.sample_times(np.arange(0, 300, 0.1)), axis=1)
    assert norms.min() < 0.25 and norms.max() > 0.95
    # mean norm of a uniform unit disk sample is 2/3
    assert abs(norms.mean() - 2.0 / 3.0) < 0.05


def test_sample_disturbance_rejects_negative_time():
    with pytest.raises(DomainError):
        sample_disturbance(zero_signal(2), -1.0)


# ---------------------------------------------------------------------------
# events, escape, and validation


def test_window_and_unsafe_crossing_events():
    # drive straight at the unsafe disk: enter_X then enter_D
    geom = SafetyGeometry(disk((4.0, 6.0), 2.0), disk((4.0, 6.0), 3.0))
    sys = planar_integrator()
    direction = np.array([4.0, 6.0]) / np.linalg.norm([4.0, 6.0])
    tr = integrate(sys, np.array([0.0, 0.0]), constant_signal(2.0 * direction),
                   law=None, t_end=3.0, dt=1e-3, geom=geom)
    kinds = [e for _, e in tr.events]
    assert kinds == ["enter_X", "enter_D"]
    t_x, t_d = tr.events[0][0], tr.events[1][0]
    # crossing times refined near the true line-of-sight hits
    r0 = np.linalg.norm([4.0, 6.0])
    assert t_x == pytest.approx((r0 - 3.0) / 2.0, abs=5e-3)
    assert t_d == pytest.approx((r0 - 2.0) / 2.0, abs=5e-3)
    # in_window flag is consistent with the refined crossing
    assert not tr.in_window[tr.times < t_x - 1e-3].any()


def test_finite_escape_raises():
    cubic = ControlAffineSystem(
        name="cubic", dim_x=2, dim_u=2,
        f=lambda p: p ** 3,
        g=lambda p: np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)),
    )
    with pytest.raises(FiniteEscapeError) as exc:
        integrate(cubic, np.array([4.0, 4.0]), zero_signal(2), law=None,
                  t_end=2.0, dt=1e-3, geom=FAR_GEOM, escape_norm=1e6)
    assert exc.value.time > 0.0
    assert exc.value.norm > 1e6


def test_bad_horizon_rejected():
    sys = planar_integrator()
    with pytest.raises(DomainError):
        integrate(sys, np.zeros(2), zero_signal(2), law=None, t_end=0.0,
                  dt=1e-3, geom=FAR_GEOM)
    with pytest.raises(DomainError):
        integrate(sys, np.zeros(2), zero_signal(2), law=None, t_end=1.0,
                  dt=-1e-3, geom=FAR_GEOM)


# ---------------------------------------------------------------------------
# CSV output


def test_trajectory_csv_round_trip(tmp_path):
    sys = planar_integrator()
    _, law = _linear_loop()
    sig = seeded_noise_signal(1.0, seed=3, hold_dt=0.1, dim_u=2)
    tr = integrate(sys, np.array([2.0, 1.0]), sig, law=law, t_end=0.5,
                   dt=1e-3, geom=FAR_GEOM)
    path = tmp_path / "traj.csv"
    tr.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "t,x1,x2,u1,u2,dist_D,norm_x,in_X"
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert np.array_equal(data[:, 0], tr.times)          # repr round-trips
    assert np.array_equal(data[:, 1:3], tr.states)
    assert np.array_equal(data[:, 3:5], tr.inputs)
    assert np.array_equal(data[:, 7].astype(int), tr.in_window.astype(int))


def test_events_csv(tmp_path):
    geom = SafetyGeometry(disk((4.0, 6.0), 2.0), disk((4.0, 6.0), 3.0))
    sys = planar_integrator()
    d = np.array([4.0, 6.0]) / np.linalg.norm([4.0, 6.0])
    tr = integrate(sys, np.array([0.0, 0.0]), constant_signal(2.0 * d),
                   law=None, t_end=3.0, dt=1e-3, geom=geom)
    path = tmp_path / "events.csv"
    tr.write_events_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,event"
    assert len(lines) == 1 + len(tr.events)
    assert lines[1].endswith("enter_X")
