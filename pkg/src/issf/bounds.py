"""Gain construction and empirical validation of the safety inequality.

Given four class-Kinf comparison functions certified for a barrier on a
safety geometry, this module assembles the explicit gain bundle

    sigma = id,
    mu(s, t)  = epsilon * a1^{-1}( flow_t( a2(s) ) ),
    phi       = a2^{-1} . a1 . a3^{-1} . (a4 / theta),
    delta     = epsilon * kappa,

where ``flow_t`` is the comparison flow of ``ydot = (1-theta) a3(a1^{-1}(y))``
and kappa is the window-boundary clearance of the geometry.  It then checks
the pointwise inequality

    sigma(|x(t)|_D)  >=  min{ mu(|x0|_D, t), delta } - phi(|u(t)|)

along simulated trajectories, decides admissibility of (x0, u) tuples
(right-hand side strictly positive), and sweeps disturbance bounds into
safety envelopes (minimum certified initial distance per bound).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .comparison import (
    FlowCurve,
    KKFn,
    KLFn,
    MonotoneFn,
    compose,
    comparison_flow_curve,
    invert,
    linear,
    identity,
    require_class,
)
from .errors import DomainError
from .geometry import SafetyGeometry
from .dynamics import DisturbanceSignal, Trajectory

__all__ = [
    "ISSfGainBundle",
    "build_gains",
    "ISSfEvaluation",
    "evaluate_issf_inequality",
    "AdmissibilityResult",
    "admissibility_check",
    "SafetyEnvelope",
    "safety_envelope",
    "ISSGains",
    "build_iss_gains",
    "AdmissibilityWitness",
    "admissibility_witness",
]

_CONSECUTIVE_FAIL = 3


@dataclass(frozen=True)
class ISSfGainBundle:
    """The assembled gains plus everything needed to re-derive them.

    ``alphas`` keeps the certified comparison functions (keys a1..a4);
    ``mu`` and ``alpha_tilde`` are two-argument callables; ``sigma`` is the
    identity by construction.  The private cache memoizes flow curves per
    (initial distance, time grid) so batch evaluations don't re-integrate.
    """

    sigma: MonotoneFn
    mu: KKFn
    phi: MonotoneFn
    delta: float
    theta: float
    epsilon: float
    alpha_tilde: KKFn
    alphas: Dict[str, MonotoneFn]
    kappa: float
    geom: SafetyGeometry
    flow_step: float = 1e-3
    _curve_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def mu_curve(self, s: float, times) -> Tuple[np.ndarray, bool]:
        """mu(s, t) sampled on a nondecreasing time grid, via one flow
        integration; returns (values, saturated)."""
        t = np.asarray(times, dtype=float)
        key = (float(s), hashlib.sha1(t.tobytes()).hexdigest())
        if key not in self._curve_cache:
            a1, a2 = self.alphas["a1"], self.alphas["a2"]
            rate = compose([invert(a1), self.alphas["a3"]], name="a3.a1^-1")
            curve: FlowCurve = comparison_flow_curve(
                rate, self.theta, float(a2(s)), t, step=self.flow_step
            )
            vals = self.epsilon * np.asarray(a1.inverse(curve.values))
            self._curve_cache[key] = (vals, curve.saturated)
        return self._curve_cache[key]

    def describe(self) -> dict:
        return {
            "sigma": self.sigma.name,
            "phi": self.phi.name,
            "delta": self.delta,
            "theta": self.theta,
            "epsilon": self.epsilon,
            "kappa": self.kappa,
            "alphas": {k: {"name": f.name, **f.params}
                       for k, f in self.alphas.items()},
            "geometry": {
                "unsafe": self.geom.unsafe.describe(),
                "window": self.geom.window.describe(),
            },
        }


def build_gains(
    a1: MonotoneFn,
    a2: MonotoneFn,
    a3: MonotoneFn,
    a4: MonotoneFn,
    theta: float,
    epsilon: float,
    geom: SafetyGeometry,
    flow_step: float = 1e-3,
) -> ISSfGainBundle:
    """Assemble the gain bundle from certified comparison functions.

    Requires all four functions class Kinf and theta, epsilon in (0, 1).
    """
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0,1), got {theta}")
    if not 0.0 < epsilon < 1.0:
        raise DomainError(f"epsilon must lie in (0,1), got {epsilon}")
    for fn, nm in ((a1, "a1"), (a2, "a2"), (a3, "a3"), (a4, "a4")):
        require_class(fn, "Kinf", nm)

    rate = compose([invert(a1), a3], name="a3.a1^-1")

    def tilde(s, t):
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        if s_arr.ndim == 0 and t_arr.ndim == 0:
            curve = comparison_flow_curve(rate, theta, float(s_arr),
                                          np.asarray([float(t_arr)]),
                                          step=flow_step)
            return curve.values[0]
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        out = np.empty(s_b.shape)
        for idx in np.ndindex(s_b.shape):
            curve = comparison_flow_curve(rate, theta, float(s_b[idx]),
                                          np.asarray([float(t_b[idx])]),
                                          step=flow_step)
            out[idx] = curve.values[0]
        return out

    alpha_tilde = KKFn("alpha_tilde", tilde)

    def mu_fn(s, t):
        return epsilon * np.asarray(a1.inverse(tilde(a2(s), t)))

    mu = KKFn("mu", mu_fn)
    phi = compose(
        [a4, linear(1.0 / theta), invert(a3), a1, invert(a2)], name="phi"
    )
    kappa = geom.kappa()
    return ISSfGainBundle(
        sigma=identity(), mu=mu, phi=phi, delta=epsilon * kappa,
        theta=theta, epsilon=epsilon, alpha_tilde=alpha_tilde,
        alphas={"a1": a1, "a2": a2, "a3": a3, "a4": a4},
        kappa=kappa, geom=geom, flow_step=flow_step,
    )


# ---------------------------------------------------------------------------
# inequality evaluation along trajectories


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class ISSfEvaluation:
    """Residual series for one trajectory.

    residual(t) = sigma(|x(t)|_D) - min{mu(d0, t), delta} + phi(|u(t)|);
    the verdict tolerates isolated dips below -tol (events, interpolation)
    but fails on any violation persisting 3 consecutive samples.
    """

    times: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    admissible_flags: np.ndarray
    verdict: bool
    d0: float
    saturated: bool
    tol: float
    violations: int

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("t,lhs,rhs,residual,admissible_flag\n")
            for i in range(self.times.size):
                fh.write(",".join([
                    _fmt(self.times[i]), _fmt(self.lhs[i]), _fmt(self.rhs[i]),
                    _fmt(self.residual[i]),
                    str(int(self.admissible_flags[i])),
                ]) + "\n")


def _max_consecutive(mask: np.ndarray) -> int:
    worst = run = 0
    for m in mask:
        run = run + 1 if m else 0
        worst = max(worst, run)
    return worst


def evaluate_issf_inequality(
    bundle: ISSfGainBundle,
    traj: Trajectory,
    tol: float = 1e-9,
) -> ISSfEvaluation:
    """Check the safety inequality along a simulated trajectory.

    Uses the trajectory's stored distance series (consistent with the
    integrator) and one comparison-flow integration for the mu term.
    """
    d0 = float(traj.dist_to_D[0])
    mu_vals, saturated = bundle.mu_curve(d0, traj.times)
    u_norms = np.linalg.norm(traj.inputs, axis=-1)
    rhs = np.minimum(mu_vals, bundle.delta) - np.asarray(bundle.phi(u_norms))
    lhs = np.asarray(bundle.sigma(traj.dist_to_D))
    residual = lhs - rhs
    bad = residual < -tol
    verdict = _max_consecutive(bad) < _CONSECUTIVE_FAIL
    return ISSfEvaluation(
        times=traj.times, lhs=lhs, rhs=rhs, residual=residual,
        admissible_flags=rhs > 0.0, verdict=bool(verdict), d0=d0,
        saturated=saturated, tol=tol, violations=int(np.sum(bad)),
    )


@dataclass(frozen=True)
class AdmissibilityResult:
    admissible: bool
    first_violation_time: Optional[float]
    min_rhs: float
    samples: int


def admissibility_check(
    bundle: ISSfGainBundle,
    x0,
    u: DisturbanceSignal,
    horizon: float,
    step: float = 1e-2,
) -> AdmissibilityResult:
    """Strict positivity of the inequality's right-hand side over a horizon.

    The tuple (x0, u) is admissible when ``min{mu(d0,t), delta} - phi(|u(t)|)``
    stays strictly positive at every sample — equality anywhere already
    disqualifies, matching the strictness of the definition.
    """
    if horizon <= 0 or step <= 0:
        raise DomainError("horizon and step must be positive")
    x0 = np.asarray(x0, dtype=float)
    d0 = float(bundle.geom.unsafe.distance(x0[None, :])[0])
    times = np.arange(0.0, horizon + 0.5 * step, step)
    mu_vals, _ = bundle.mu_curve(d0, times)
    u_norms = np.linalg.norm(u.sample_times(times), axis=-1)
    rhs = np.minimum(mu_vals, bundle.delta) - np.asarray(bundle.phi(u_norms))
    bad = rhs <= 0.0
    if np.any(bad):
        first = float(times[int(np.argmax(bad))])
        return AdmissibilityResult(False, first, float(np.min(rhs)),
                                   times.size)
    return AdmissibilityResult(True, None, float(np.min(rhs)), times.size)


# ---------------------------------------------------------------------------
# safety envelopes


@dataclass(frozen=True)
class SafetyEnvelope:
    """Minimum certified initial distance as a function of the disturbance
    bound; the table is nondecreasing in the bound by construction."""

    u_bound: float
    min_safe_initial_distance: float
    samples: List[Tuple[float, float]]

    def write_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("k,s_star\n")
            for k, s in self.samples:
                fh.write(f"{_fmt(k)},{_fmt(s)}\n")


def safety_envelope(bundle: ISSfGainBundle,
                    k_values: Sequence[float]) -> SafetyEnvelope:
    """For each disturbance bound k, the smallest initial distance s with
    ``mu(s, 0) > phi(k)``, solved through the closed-form/bisection inverse
    of ``mu(., 0) = epsilon * a1^{-1}(a2(.))``.

    Raises a range error (from the inverse) if some phi(k) is unreachable.
    """
    a1, a2 = bundle.alphas["a1"], bundle.alphas["a2"]
    mu0 = compose([a2, invert(a1), linear(bundle.epsilon)], name="mu(.,0)")
    rows: List[Tuple[float, float]] = []
    for k in k_values:
        if k < 0:
            raise DomainError(f"disturbance bound must be nonnegative, got {k}")
        target = float(bundle.phi(float(k)))
        s_star = 0.0 if target <= 0.0 else float(mu0.inverse(target))
        rows.append((float(k), s_star))
    k_max = max(k for k, _ in rows)
    s_at_max = max(s for _, s in rows)
    return SafetyEnvelope(u_bound=k_max, min_safe_initial_distance=s_at_max,
                          samples=rows)


# ---------------------------------------------------------------------------
# stability-side gains and the admissibility threshold quantities


@dataclass(frozen=True)
class ISSGains:
    """Decay/gain pair for the stability estimate
    ``|x(t)| <= beta(|x0|, t) + gamma(|u|_inf)``, built from a certified
    Lyapunov sandwich by the standard comparison argument."""

    beta: KLFn
    gamma: MonotoneFn
    theta: float
    description: str


def build_iss_gains(
    V,
    a1: MonotoneFn,
    a2: MonotoneFn,
    a3: MonotoneFn,
    gamma_supply: MonotoneFn,
    theta: float = 0.5,
    flow_step: float = 1e-3,
) -> ISSGains:
    """Package ``beta(s,t) = a1^{-1}(z(t; a2(s)))`` with
    ``zdot = -(1-theta) a3(a2^{-1}(z))`` and
    ``gamma = a1^{-1} . a2 . a3^{-1} . (gamma_supply / theta)``.

    The caller vouches that the Lyapunov check passed for (V, a1, a2, a3,
    gamma_supply); V is retained for provenance only.
    """
    if not 0.0 < theta < 1.0:
        raise DomainError(f"theta must lie in (0,1), got {theta}")
    decay_rate = compose([invert(a2), a3], name="a3.a2^-1")

    def beta_fn(s, t):
        s_arr = np.asarray(s, dtype=float)
        t_arr = np.asarray(t, dtype=float)
        s_b, t_b = np.broadcast_arrays(s_arr, t_arr)
        out = np.empty(s_b.shape if s_b.shape else ())
        flat_s = np.atleast_1d(s_b).ravel()
        flat_t = np.atleast_1d(t_b).ravel()
        res = np.atleast_1d(out).ravel()
        for i in range(flat_s.size):
            z = float(a2(float(flat_s[i])))
            t_i = float(flat_t[i])
            steps = int(np.ceil(t_i / flow_step - 1e-12))
            tau = 0.0
            for _ in range(steps):
                h = min(flow_step, t_i - tau)

                def rhs(y):
                    return -(1.0 - theta) * float(decay_rate(max(y, 0.0)))

                k1 = rhs(z)
                k2 = rhs(z + 0.5 * h * k1)
                k3 = rhs(z + 0.5 * h * k2)
                k4 = rhs(z + h * k3)
                z = max(z + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), 0.0)
                tau += h
                if z == 0.0:
                    break
            res[i] = a1.inverse(z)
        return out if s_b.shape else float(res[0])

    beta = KLFn("beta", beta_fn)
    gamma = compose(
        [gamma_supply, linear(1.0 / theta), invert(a3), a2, invert(a1)],
        name="gamma_iss",
    )
    name = getattr(V, "name", str(V))
    return ISSGains(beta=beta, gamma=gamma, theta=theta,
                    description=f"comparison gains from {name}")


@dataclass(frozen=True)
class AdmissibilityWitness:
    """The threshold quantities from the sufficiency argument: the state-
    dependent input threshold rho, the stability reach D1, the unsafe-set
    reach D2, and the margin fraction eta in (0, 0.5]."""

    d1: float
    d2: float
    eta: float
    mu_tilde_0: float
    _rho: callable = field(repr=False)

    def rho_at(self, x) -> float:
        return float(self._rho(np.asarray(x, dtype=float)))


def admissibility_witness(
    bundle: ISSfGainBundle,
    iss: ISSGains,
    B_field,
    x0,
    u_bound: float,
) -> AdmissibilityWitness:
    """Assemble (rho, D1, D2, eta) for a concrete tuple.

    ``eta = min{0.5, (1-eps) mu~(d0, 0) / (D1 + D2)}`` with
    ``mu~(s,0) = a1^{-1}(a2(s))``; ``rho(x) = a4^{-1}(theta a3(a1^{-1}(-B(x))))``
    with the barrier value clamped to the nonpositive side of its domain.
    """
    x0 = np.asarray(x0, dtype=float)
    a1, a3, a4 = (bundle.alphas[k] for k in ("a1", "a3", "a4"))
    d0 = float(bundle.geom.unsafe.distance(x0[None, :])[0])
    mu_tilde_0 = float(a1.inverse(bundle.alphas["a2"](d0)))
    d1 = float(iss.beta(float(np.linalg.norm(x0)), 0.0)
               + iss.gamma(float(u_bound)))
    d2 = bundle.geom.d2()
    eta = min(0.5, (1.0 - bundle.epsilon) * mu_tilde_0 / (d1 + d2))
    if not 0.0 < eta <= 0.5:
        raise DomainError(f"eta fell outside (0, 0.5]: {eta}")

    def rho(x):
        val = -float(B_field(x))
        return a4.inverse(bundle.theta * a3(a1.inverse(max(val, 0.0))))

    return AdmissibilityWitness(d1=d1, d2=d2, eta=eta,
                                mu_tilde_0=mu_tilde_0, _rho=rho)
