"""Gain bundle assembly, inequality evaluation, envelopes, thresholds.

With all four comparison functions set to the identity and theta = eps =
1/2 every derived quantity has a closed form, which makes the bundle a
convenient oracle: phi(k) = 2k, delta = kappa/2, mu(s,t) = (s/2) e^{t/2},
and the envelope solves to s*(k) = 4k.
"""

import numpy as np
import pytest

from issf import (
    DomainError,
    MonotoneFn,
    SafetyGeometry,
    Trajectory,
    admissibility_check,
    admissibility_witness,
    build_gains,
    build_iss_gains,
    constant_signal,
    disk,
    evaluate_issf_inequality,
    field_from_expression,
    identity,
    linear,
    power,
    safety_envelope,
    seeded_noise_signal,
)


@pytest.fixture(scope="module")
def id_bundle():
    geom = SafetyGeometry(unsafe=disk((4.0, 6.0), 2.0),
                          window=disk((4.0, 6.0), 3.0))
    ids = [identity() for _ in range(4)]
    return build_gains(*ids, theta=0.5, epsilon=0.5, geom=geom)


# ---------------------------------------------------------------------------
# assembly


def test_identity_bundle_closed_forms(id_bundle):
    assert id_bundle.kappa == pytest.approx(1.0, abs=1e-12)
    assert id_bundle.delta == pytest.approx(0.5, abs=1e-12)
    for k in (0.25, 1.0, 3.0):
        assert id_bundle.phi(k) == pytest.approx(2.0 * k, rel=1e-12)
    assert id_bundle.sigma(1.7) == 1.7


def test_identity_bundle_mu_curve_matches_exponential(id_bundle):
    times = np.linspace(0.0, 1.0, 11)
    vals, saturated = id_bundle.mu_curve(2.0, times)
    assert not saturated
    expected = np.exp(0.5 * times)  # eps * s * e^{(1-theta) t} with s = 2
    assert np.max(np.abs(vals - expected) / expected) < 1e-6
    assert np.all(np.diff(vals) > 0)


def test_mu_curve_is_memoized(id_bundle):
    times = np.linspace(0.0, 2.0, 7)
    v1, _ = id_bundle.mu_curve(1.3, times)
    v2, _ = id_bundle.mu_curve(1.3, times.copy())
    assert v1 is v2  # same cache entry, no re-integration


def test_mu_at_time_zero_is_the_static_map(locality):
    bundle = locality.bundle
    a1, a2 = bundle.alphas["a1"], bundle.alphas["a2"]
    for s in (0.1, 0.2360679774997896, 0.7):
        vals, _ = bundle.mu_curve(s, np.array([0.0]))
        assert vals[0] == pytest.approx(
            bundle.epsilon * a1.inverse(a2(s)), abs=1e-8)


def test_effective_floor_is_nondecreasing(id_bundle, locality):
    times = np.linspace(0.0, 5.0, 101)
    for bundle, s in ((id_bundle, 0.3), (locality.bundle, 0.236)):
        vals, _ = bundle.mu_curve(s, times)
        floor = np.minimum(vals, bundle.delta)
        assert np.all(np.diff(floor) >= -1e-12)


def test_build_gains_rejects_bad_parameters():
    geom = SafetyGeometry(unsafe=disk((4.0, 6.0), 2.0),
                          window=disk((4.0, 6.0), 3.0))
    ids = [identity() for _ in range(4)]
    with pytest.raises(DomainError):
        build_gains(*ids, theta=1.0, epsilon=0.5, geom=geom)
    with pytest.raises(DomainError):
        build_gains(*ids, theta=0.5, epsilon=0.0, geom=geom)
    bounded = MonotoneFn("s/(1+s)", "K", lambda s: s / (1.0 + s))
    with pytest.raises(DomainError):
        build_gains(identity(), identity(), bounded, identity(),
                    theta=0.5, epsilon=0.5, geom=geom)


def test_describe_reports_the_construction(id_bundle):
    d = id_bundle.describe()
    assert d["delta"] == pytest.approx(0.5)
    assert set(d["alphas"]) == {"a1", "a2", "a3", "a4"}
    assert d["geometry"]["unsafe"] == "open ball [c=(4, 6) r=2]"


# ---------------------------------------------------------------------------
# inequality evaluation


def _synthetic(dists, dt=0.1):
    n = len(dists)
    times = np.arange(n) * dt
    states = np.zeros((n, 2))
    inputs = np.zeros((n, 2))
    d = np.asarray(dists, dtype=float)
    return Trajectory(times=times, states=states, inputs=inputs,
                      dist_to_D=d, norm_x=np.zeros(n),
                      in_window=np.zeros(n, dtype=bool))


def test_isolated_dips_are_tolerated(id_bundle):
    # d0 = 1 makes the floor exactly delta = 0.5 for all t (zero input)
    dists = np.full(40, 0.6)
    dists[5] = 0.4          # one-sample dip
    dists[20:22] = 0.4      # two-sample dip
    ev = evaluate_issf_inequality(id_bundle, _synthetic([1.0] + list(dists)))
    assert ev.verdict
    assert ev.violations == 3
    assert ev.d0 == 1.0


def test_three_consecutive_violations_fail(id_bundle):
    dists = np.full(40, 0.6)
    dists[10:13] = 0.4
    ev = evaluate_issf_inequality(id_bundle, _synthetic([1.0] + list(dists)))
    assert not ev.verdict
    assert ev.violations == 3


def test_residual_series_components(id_bundle):
    ev = evaluate_issf_inequality(id_bundle, _synthetic([1.0, 0.7, 0.6]))
    assert np.allclose(ev.lhs, [1.0, 0.7, 0.6])
    assert np.allclose(ev.rhs, 0.5, atol=1e-9)  # min{mu, delta} = delta
    assert np.allclose(ev.residual, ev.lhs - ev.rhs)
    assert np.all(ev.admissible_flags)


def test_evaluation_csv_round_trip(tmp_path, id_bundle):
    ev = evaluate_issf_inequality(id_bundle, _synthetic([1.0, 0.8, 0.4, 0.9]))
    path = tmp_path / "residuals.csv"
    ev.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,lhs,rhs,residual,admissible_flag"
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    assert np.array_equal(data[:, 1], ev.lhs)
    assert np.array_equal(data[:, 3], ev.residual)
    assert np.array_equal(data[:, 4].astype(int),
                          ev.admissible_flags.astype(int))


def test_benchmark_trajectory_satisfies_inequality(locality,
                                                   reference_trajectories):
    ev = evaluate_issf_inequality(locality.bundle, reference_trajectories[0])
    assert ev.verdict
    assert ev.violations == 0
    assert float(np.min(ev.residual)) > -1e-6
    assert np.all(ev.admissible_flags)


# ---------------------------------------------------------------------------
# admissibility


def test_admissibility_is_strict_at_the_boundary(id_bundle):
    x0 = np.array([4.0, 9.0])  # distance 1 from the unsafe set
    # phi(k) = 2k and the floor is exactly 0.5, so k = 0.25 sits on the edge
    edge = admissibility_check(id_bundle, x0, constant_signal([0.25, 0.0]),
                               horizon=2.0)
    assert not edge.admissible
    assert edge.first_violation_time == 0.0
    assert edge.min_rhs <= 0.0
    inside = admissibility_check(id_bundle, x0,
                                 constant_signal([0.2499, 0.0]), horizon=2.0)
    assert inside.admissible
    assert inside.first_violation_time is None
    assert inside.min_rhs == pytest.approx(2e-4, rel=1e-6)


def test_admissibility_rejects_bad_horizon(id_bundle):
    with pytest.raises(DomainError):
        admissibility_check(id_bundle, [4.0, 9.0],
                            constant_signal([0.1, 0.0]), horizon=0.0)


def test_noisy_benchmark_tuple_is_admissible(locality):
    sig = seeded_noise_signal(3.0, seed=42, hold_dt=0.1, dim_u=2)
    res = admissibility_check(locality.bundle, [5.0, 8.0], sig, horizon=10.0)
    assert res.admissible
    assert res.min_rhs > 0.0


# ---------------------------------------------------------------------------
# safety envelopes


def test_envelope_closed_form(id_bundle):
    env = safety_envelope(id_bundle, [0.0, 0.5, 1.0, 2.0, 3.0])
    expected = [(0.0, 0.0), (0.5, 2.0), (1.0, 4.0), (2.0, 8.0), (3.0, 12.0)]
    for (k, s), (ke, se) in zip(env.samples, expected):
        assert k == ke
        assert s == pytest.approx(se, abs=1e-6)
    assert env.u_bound == 3.0
    assert env.min_safe_initial_distance == pytest.approx(12.0, abs=1e-6)


def test_envelope_is_monotone_for_fitted_gains(locality):
    env = safety_envelope(locality.bundle, [0.0, 0.75, 1.5, 2.25, 3.0])
    s = [row[1] for row in env.samples]
    assert all(b >= a - 1e-12 for a, b in zip(s, s[1:]))
    # consistent with the reference run: the noisy start keeps a margin
    assert s[-1] < 0.2360679774997896


def test_envelope_rejects_negative_bound(id_bundle):
    with pytest.raises(DomainError):
        safety_envelope(id_bundle, [-1.0])


def test_envelope_csv(tmp_path, id_bundle):
    env = safety_envelope(id_bundle, [0.0, 1.0])
    path = tmp_path / "envelope.csv"
    env.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "k,s_star"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# stability-side gains


def test_iss_gains_decay_oracle():
    a1, a2 = power(2, c=0.5), power(2, c=1.5)
    gains = build_iss_gains("V", a1, a2, power(2), linear(15.0))
    for s in (0.5, 1.0, 2.0):
        assert gains.beta(s, 0.0) == pytest.approx(np.sqrt(3.0) * s,
                                                   abs=1e-9)
    curve = [gains.beta(1.0, t) for t in (0.0, 0.5, 1.0, 2.0)]
    assert all(b < a for a, b in zip(curve, curve[1:]))
    assert gains.gamma(0.4) == pytest.approx(6.0, abs=1e-9)


def test_iss_gains_flow_matches_linear_ode():
    # a1 = a2 = s^2 and a3 = s^2 give zdot = -(1/2) z: beta = s e^{-t/4}
    gains = build_iss_gains("V", power(2), power(2), power(2), linear(1.0))
    got = gains.beta(2.0, 1.0)
    assert got == pytest.approx(2.0 * np.exp(-0.25), rel=1e-6)


def test_iss_gains_reject_bad_theta():
    with pytest.raises(DomainError):
        build_iss_gains("V", identity(), identity(), identity(),
                        identity(), theta=1.0)


# ---------------------------------------------------------------------------
# threshold quantities


def _id_bundle_eps(eps):
    geom = SafetyGeometry(unsafe=disk((4.0, 6.0), 2.0),
                          window=disk((4.0, 6.0), 3.0))
    ids = [identity() for _ in range(4)]
    return build_gains(*ids, theta=0.5, epsilon=eps, geom=geom)


def test_admissibility_witness_quantities(id_bundle):
    B = field_from_expression("4 - (x1-4)^2 - (x2-6)^2", 2, name="B")
    gains = build_iss_gains("V", power(2, c=0.5), power(2, c=1.5),
                            power(2), linear(15.0))
    x0 = np.array([4.0, 9.5])
    wit = admissibility_witness(id_bundle, gains, B, x0, u_bound=1.0)
    assert wit.mu_tilde_0 == pytest.approx(1.5, abs=1e-9)
    d1_expected = gains.beta(float(np.linalg.norm(x0)), 0.0) + gains.gamma(1.0)
    assert wit.d1 == pytest.approx(d1_expected, abs=1e-9)
    assert wit.d2 == pytest.approx(np.sqrt(52.0) + 2.0, abs=1e-12)
    assert wit.eta == pytest.approx(
        0.5 * 1.5 / (d1_expected + wit.d2), rel=1e-9)
    assert 0.0 < wit.eta <= 0.5
    # rho at a point in the band: -B = 2.25, all identities, theta = 1/2
    assert wit.rho_at([6.5, 6.0]) == pytest.approx(1.125, abs=1e-9)
    # rho clamps the barrier value where B > 0
    assert wit.rho_at([4.0, 6.0]) == 0.0


def test_admissibility_witness_eta_clamps_at_half():
    bundle = _id_bundle_eps(0.1)
    B = field_from_expression("4 - (x1-4)^2 - (x2-6)^2", 2, name="B")
    gains = build_iss_gains("V", identity(), identity(), identity(),
                            linear(1.0))
    wit = admissibility_witness(bundle, gains, B, [4.0, 206.0], u_bound=0.0)
    assert wit.eta == 0.5


def test_admissibility_witness_rejects_zero_margin(id_bundle):
    B = field_from_expression("4 - (x1-4)^2 - (x2-6)^2", 2, name="B")
    gains = build_iss_gains("V", identity(), identity(), identity(),
                            linear(1.0))
    with pytest.raises(DomainError):
        admissibility_witness(id_bundle, gains, B, [4.0, 7.0], u_bound=1.0)
