"""Control-affine dynamics, disturbance signals, and trajectory integration.

Fixed-step RK4 (reproducibility and simple event refinement beat adaptive
stepping at this scale), vectorized over a batch of initial conditions.
Region-crossing events (enter/exit of the working window, entry into the
unsafe set) are located by bisecting the crossing step to dt/100.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DomainError, FiniteEscapeError
from .geometry import SafetyGeometry

__all__ = [
    "ControlAffineSystem",
    "FeedbackLaw",
    "DisturbanceSignal",
    "zero_signal",
    "constant_signal",
    "sinusoid_signal",
    "seeded_noise_signal",
    "sample_disturbance",
    "Trajectory",
    "integrate",
    "integrate_batch",
    "planar_integrator",
]

ESCAPE_NORM = 1e9
_NOISE_CHUNK = 1024


@dataclass(frozen=True)
class ControlAffineSystem:
    """Dynamics ``xdot = f(x) + g(x) u`` with vectorized field evaluators.

    ``f`` maps ``(..., n) -> (..., n)`` and ``g`` maps
    ``(..., n) -> (..., n, m)``.  ``jacobian_mode`` selects how
    :meth:`jacobian` is produced; only finite differences are built in.
    """

    name: str
    dim_x: int
    dim_u: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    jacobian_mode: str = "finite_difference"
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def drift(self, points) -> np.ndarray:
        return self.f(np.asarray(points, dtype=float))

    def input_matrix(self, points) -> np.ndarray:
        return self.g(np.asarray(points, dtype=float))

    def velocity(self, points, u) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.f(p) + np.einsum("...ij,...j->...i", self.g(p),
                                     np.asarray(u, dtype=float))

    def jacobian(self, x, h: float = 1e-6) -> np.ndarray:
        if self.jacobian_mode == "analytic" and self.jac is not None:
            return self.jac(np.asarray(x, dtype=float))
        x = np.asarray(x, dtype=float)
        cols = []
        for i in range(self.dim_x):
            e = np.zeros(self.dim_x)
            e[i] = h
            cols.append((self.drift(x + e) - self.drift(x - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def with_feedback(self, law: "FeedbackLaw") -> "ControlAffineSystem":
        """Fold a feedback law into the drift: the closed loop
        ``xdot = f + g k(x) + g v`` seen as a control-affine system in the
        residual input v."""
        base_f, base_g = self.f, self.g
        k = law.k

        def closed_f(p):
            return base_f(p) + np.einsum("...ij,...j->...i", base_g(p), k(p))

        return ControlAffineSystem(
            name=f"{self.name}+{law.description}", dim_x=self.dim_x,
            dim_u=self.dim_u, f=closed_f, g=base_g,
        )


def planar_integrator() -> ControlAffineSystem:
    """The planar single integrator: f = 0, g = I, two inputs."""

    def f(p):
        return np.zeros_like(p)

    def g(p):
        return np.broadcast_to(np.eye(2), p.shape[:-1] + (2, 2)).copy()

    return ControlAffineSystem("planar_integrator", 2, 2, f, g,
                               jacobian_mode="analytic",
                               jac=lambda x: np.zeros((2, 2)))


@dataclass(frozen=True)
class FeedbackLaw:
    """State feedback ``v = k(x)``.

    ``branch_gap``, when provided, evaluates the mismatch between the law's
    analytic branches at a point; the integrator records its maximum over
    detected window crossings as a continuity diagnostic.
    """

    k: Callable[[np.ndarray], np.ndarray]
    description: str = ""
    branch_gap: Optional[Callable[[np.ndarray], float]] = None


# ---------------------------------------------------------------------------
# disturbance signals


class DisturbanceSignal:
    """Deterministic disturbance ``u(t)`` with a known sup-norm bound."""

    kind: str
    dim_u: int
    linf_bound: float

    def sample(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def sample_times(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        return np.stack([self.sample(float(ti)) for ti in t], axis=0)

    def describe(self) -> str:
        return f"{self.kind}(bound={self.linf_bound:g})"


class _Zero(DisturbanceSignal):
    kind = "zero"

    def __init__(self, dim_u: int):
        self.dim_u = dim_u
        self.linf_bound = 0.0

    def sample(self, t: float) -> np.ndarray:
        return np.zeros(self.dim_u)

    def sample_times(self, times) -> np.ndarray:
        return np.zeros((np.asarray(times).size, self.dim_u))


class _Constant(DisturbanceSignal):
    kind = "constant"

    def __init__(self, vector):
        self.vector = np.asarray(vector, dtype=float)
        self.dim_u = self.vector.size
        self.linf_bound = float(np.linalg.norm(self.vector))

    def sample(self, t: float) -> np.ndarray:
        return self.vector.copy()

    def sample_times(self, times) -> np.ndarray:
        return np.tile(self.vector, (np.asarray(times).size, 1))


class _Sinusoid(DisturbanceSignal):
    kind = "sinusoid"

    def __init__(self, amplitudes, frequencies, phases=None):
        self.amp = np.asarray(amplitudes, dtype=float)
        self.freq = np.asarray(frequencies, dtype=float)
        self.phase = (np.zeros_like(self.amp) if phases is None
                      else np.asarray(phases, dtype=float))
        if not (self.amp.shape == self.freq.shape == self.phase.shape):
            raise DomainError("sinusoid channel arrays must share a shape")
        self.dim_u = self.amp.size
        self.linf_bound = float(np.linalg.norm(self.amp))

    def sample(self, t: float) -> np.ndarray:
        return self.amp * np.sin(2.0 * np.pi * self.freq * t + self.phase)

    def sample_times(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)[:, None]
        return self.amp * np.sin(2.0 * np.pi * self.freq * t + self.phase)


class _SeededNoise(DisturbanceSignal):
    """Piecewise-constant noise: on each window of length ``hold_dt`` the
    value is an independent draw uniform in the closed ball of radius
    ``bound``.  The table is generated in fixed-size chunks from a single
    seeded generator, so values are reproducible and independent of query
    order."""

    kind = "seeded_bounded_noise"

    def __init__(self, bound: float, seed: int, hold_dt: float, dim_u: int):
        if bound < 0 or hold_dt <= 0:
            raise DomainError(
                f"noise needs bound >= 0 and hold_dt > 0, got {bound}, {hold_dt}"
            )
        self.bound = float(bound)
        self.seed = int(seed)
        self.hold_dt = float(hold_dt)
        self.dim_u = int(dim_u)
        self.linf_bound = self.bound
        self._rng = np.random.default_rng(self.seed)
        self._table = np.zeros((0, self.dim_u))

    def _ensure(self, idx: int):
        while self._table.shape[0] <= idx:
            dirs = self._rng.standard_normal((_NOISE_CHUNK, self.dim_u))
            dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
            radii = self.bound * self._rng.random(_NOISE_CHUNK) ** (1.0 / self.dim_u)
            self._table = np.concatenate(
                [self._table, radii[:, None] * dirs], axis=0
            )

    def sample(self, t: float) -> np.ndarray:
        if t < 0:
            raise DomainError(f"signal time must be nonnegative, got {t}")
        idx = int(np.floor(t / self.hold_dt))
        self._ensure(idx)
        return self._table[idx].copy()

    def sample_times(self, times) -> np.ndarray:
        t = np.asarray(times, dtype=float)
        idx = np.floor(t / self.hold_dt).astype(int)
        self._ensure(int(idx.max(initial=0)))
        return self._table[idx]

    def describe(self) -> str:
        return (f"{self.kind}(bound={self.bound:g}, seed={self.seed}, "
                f"hold={self.hold_dt:g})")


def zero_signal(dim_u: int) -> DisturbanceSignal:
    return _Zero(dim_u)


def constant_signal(vector) -> DisturbanceSignal:
    return _Constant(vector)


def sinusoid_signal(amplitudes, frequencies, phases=None) -> DisturbanceSignal:
    return _Sinusoid(amplitudes, frequencies, phases)


def seeded_noise_signal(bound: float, seed: int, hold_dt: float,
                        dim_u: int) -> DisturbanceSignal:
    return _SeededNoise(bound, seed, hold_dt, dim_u)


def sample_disturbance(u: DisturbanceSignal, t: float) -> np.ndarray:
    if t < 0:
        raise DomainError(f"signal time must be nonnegative, got {t}")
    return u.sample(float(t))


# ---------------------------------------------------------------------------
# trajectories


def _fmt(x: float) -> str:
    return repr(float(x))


@dataclass
class Trajectory:
    """Sampled solution with the safety-relevant derived series attached."""

    times: np.ndarray
    states: np.ndarray
    inputs: np.ndarray
    dist_to_D: np.ndarray
    norm_x: np.ndarray
    in_window: np.ndarray
    events: List[Tuple[float, str]] = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def x0(self) -> np.ndarray:
        return self.states[0]

    def write_csv(self, path):
        n = self.states.shape[1]
        m = self.inputs.shape[1]
        header = (["t"] + [f"x{i+1}" for i in range(n)]
                  + [f"u{i+1}" for i in range(m)]
                  + ["dist_D", "norm_x", "in_X"])
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(self.times.size):
                row = ([_fmt(self.times[i])]
                       + [_fmt(v) for v in self.states[i]]
                       + [_fmt(v) for v in self.inputs[i]]
                       + [_fmt(self.dist_to_D[i]), _fmt(self.norm_x[i]),
                          str(int(self.in_window[i]))])
                fh.write(",".join(row) + "\n")

    def write_events_csv(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write("t,event\n")
            for t, name in self.events:
                fh.write(f"{_fmt(t)},{name}\n")


def _rk4_step(sys: ControlAffineSystem, law: Optional[FeedbackLaw],
              x: np.ndarray, u0: np.ndarray, um: np.ndarray,
              u1: np.ndarray, h: float) -> np.ndarray:
    """One vectorized RK4 step for the batch, with the disturbance already
    sampled at the three stage times (midpoint shared by stages 2 and 3)."""

    def rhs(state, u):
        v = u + law.k(state) if law is not None else u
        return sys.velocity(state, v)

    k1 = rhs(x, u0)
    k2 = rhs(x + 0.5 * h * k1, um)
    k3 = rhs(x + 0.5 * h * k2, um)
    k4 = rhs(x + h * k3, u1)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _sample_batch(signals: Sequence[DisturbanceSignal], t: float) -> np.ndarray:
    return np.stack([s.sample(t) for s in signals], axis=0)


def _refine_crossing(sys, law, signals, x_lo: np.ndarray, t_lo: float,
                     h: float, inside_lo: bool, member_fn, j: int,
                     tol_factor: float = 0.01) -> Tuple[float, np.ndarray]:
    """Bisect the fraction of a single step at which membership flips.

    Each probe integrates one fractional RK4 step from the left sample
    (disturbances sampled at the probe's own stage times), so the refined
    state is consistent with the integrator to within the step error.
    """

    def probe(frac):
        hh = frac * h
        return _rk4_step(
            sys, law, x_lo,
            _sample_batch(signals, t_lo),
            _sample_batch(signals, t_lo + 0.5 * hh),
            _sample_batch(signals, t_lo + hh),
            hh,
        )

    lo_frac, hi_frac = 0.0, 1.0
    x_hi = probe(1.0)
    while (hi_frac - lo_frac) > tol_factor:
        mid = 0.5 * (lo_frac + hi_frac)
        x_mid = probe(mid)
        if bool(member_fn(x_mid[j: j + 1])[0]) == inside_lo:
            lo_frac = mid
        else:
            hi_frac = mid
            x_hi = x_mid
    return t_lo + hi_frac * h, x_hi[j]


def integrate_batch(
    sys: ControlAffineSystem,
    x0s,
    signals,
    law: Optional[FeedbackLaw],
    t_end: float,
    dt: float,
    geom: SafetyGeometry,
    escape_norm: float = ESCAPE_NORM,
) -> List[Trajectory]:
    """Integrate a batch of initial conditions on a shared time grid.

    ``signals`` is either one signal shared by every trajectory or a list
    with one signal per initial condition.  Events are detected per
    trajectory from membership flips between consecutive samples and refined
    by bisection; a trajectory whose norm passes ``escape_norm`` raises
    :class:`FiniteEscapeError` (completeness is assumed, divergence is
    reported rather than handled).
    """
    if dt <= 0 or t_end <= 0:
        raise DomainError(f"need dt > 0 and t_end > 0, got dt={dt}, "
                          f"t_end={t_end}")
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    k = x0s.shape[0]
    if isinstance(signals, DisturbanceSignal):
        signals = [signals] * k
    if len(signals) != k:
        raise DomainError(f"{k} initial conditions but {len(signals)} signals")

    n_steps = int(np.ceil(t_end / dt - 1e-12))
    times = np.minimum(np.arange(n_steps + 1) * dt, t_end)
    D, X = geom.unsafe, geom.window

    # presample every signal at all stage times (samples + midpoints) in one
    # vectorized pass per distinct signal object
    stage_t = np.empty(2 * n_steps + 1)
    stage_t[0::2] = times
    stage_t[1::2] = 0.5 * (times[:-1] + times[1:])
    tables = {}
    for s in signals:
        if id(s) not in tables:
            tables[id(s)] = s.sample_times(stage_t)
    u_stage = np.stack([tables[id(s)] for s in signals], axis=1)

    states = np.empty((n_steps + 1, k, sys.dim_x))
    states[0] = x0s
    x = x0s.copy()
    for i in range(n_steps):
        h = float(times[i + 1] - times[i])
        x = _rk4_step(sys, law, x, u_stage[2 * i], u_stage[2 * i + 1],
                      u_stage[2 * i + 2], h)
        norms = np.linalg.norm(x, axis=-1)
        if np.any(norms > escape_norm):
            j = int(np.argmax(norms))
            raise FiniteEscapeError(times[i + 1], float(norms[j]), j)
        states[i + 1] = x

    inputs = u_stage[0::2]
    dists = D.distance(states)
    norms = np.linalg.norm(states, axis=-1)
    in_x = X.closure_contains(states)
    in_d = D.contains(states)

    out: List[Trajectory] = []
    for j in range(k):
        events: List[Tuple[float, str]] = []
        jump_max = 0.0
        for i in range(n_steps):
            h = float(times[i + 1] - times[i])
            flips = []
            if in_x[i, j] != in_x[i + 1, j]:
                name = "exit_X" if in_x[i, j] else "enter_X"
                flips.append((X.closure_contains, bool(in_x[i, j]), name))
            if in_d[i, j] != in_d[i + 1, j] and in_d[i + 1, j]:
                flips.append((D.contains, bool(in_d[i, j]), "enter_D"))
            for member_fn, inside_lo, name in flips:
                t_cross, x_cross = _refine_crossing(
                    sys, law, signals, states[i], float(times[i]), h,
                    inside_lo, member_fn, j,
                )
                events.append((t_cross, name))
                if name in ("enter_X", "exit_X") and law is not None \
                        and law.branch_gap is not None:
                    jump_max = max(jump_max, float(law.branch_gap(x_cross)))
        diagnostics = {"steps": n_steps, "dt": float(dt)}
        if law is not None and law.branch_gap is not None:
            diagnostics["law_jump_max_at_crossings"] = jump_max
        out.append(Trajectory(
            times=times.copy(),
            states=states[:, j].copy(),
            inputs=inputs[:, j].copy(),
            dist_to_D=dists[:, j].copy(),
            norm_x=norms[:, j].copy(),
            in_window=in_x[:, j].copy(),
            events=events,
            diagnostics=diagnostics,
        ))
    return out


def integrate(
    sys: ControlAffineSystem,
    x0,
    u: DisturbanceSignal,
    law: Optional[FeedbackLaw],
    t_end: float,
    dt: float,
    geom: SafetyGeometry,
    escape_norm: float = ESCAPE_NORM,
) -> Trajectory:
    """Single-trajectory convenience wrapper around :func:`integrate_batch`."""
    return integrate_batch(sys, np.asarray(x0, dtype=float)[None, :], [u],
                           law, t_end, dt, geom, escape_norm=escape_norm)[0]
