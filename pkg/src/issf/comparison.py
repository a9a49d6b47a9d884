"""Comparison functions: class P / K / K-infinity scalars, KL and two-argument
families, composition, numeric inversion, and the scalar comparison flow.

Everything here operates on nonnegative reals and is vectorized over numpy
arrays.  Functions are wrapped in :class:`MonotoneFn`, which carries a class
tag (``"P"``, ``"K"``, ``"Kinf"``), an optional closed-form inverse, and a
generic bracketed-bisection inverse used whenever no closed form is known.

The comparison flow ``flow(alpha, theta, s, t)`` integrates the scalar ODE

    dy/dt = (1 - theta) * alpha(y),   y(0) = s,

with classic RK4 at a fixed step.  Growth is capped: once ``y`` exceeds the
cap the curve is frozen there and the result is flagged as saturated, so
downstream consumers can distinguish "astronomically large" from "infinite
in finite time" without overflow.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, RangeError

__all__ = [
    "MonotoneFn",
    "KLFn",
    "KKFn",
    "FlowCurve",
    "identity",
    "linear",
    "power",
    "poly_odd",
    "quad_coeffs",
    "compose",
    "invert",
    "comparison_flow",
    "comparison_flow_curve",
    "is_class_k",
    "is_class_kinf",
]

_BRACKET_CAP = 1e15
_FLOW_CAP = 1e12


def _as_nonneg(s, what: str = "argument"):
    """Coerce to float array, rejecting negatives and NaN."""
    arr = np.asarray(s, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise DomainError(f"{what} must be nonnegative, got {s!r}")
    return arr


def _scalar_like(template, value):
    """Return a python float when the input was scalar, else the array."""
    if np.ndim(template) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class MonotoneFn:
    """A scalar comparison function on [0, inf).

    Parameters
    ----------
    name:
        Human-readable identifier, used in reports and error messages.
    class_tag:
        One of ``"P"`` (positive definite), ``"K"`` (strictly increasing,
        zero at zero), ``"Kinf"`` (class K and unbounded).
    fn:
        Vectorized implementation mapping ``(...,) -> (...,)`` nonneg floats.
    inv:
        Optional closed-form inverse.  When absent, :meth:`inverse` falls
        back to bracketed bisection.

    Notes
    -----
    Instances are frozen; derived functions (inverses, compositions, scalar
    multiples) are new objects.  The class tag is declarative — construction
    does not prove monotonicity; :func:`is_class_k` / :func:`is_class_kinf`
    provide sampled validation for tests and config loading.
    """

    name: str
    class_tag: str
    fn: Callable[[np.ndarray], np.ndarray]
    inv: Optional[Callable[[np.ndarray], np.ndarray]] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.class_tag not in ("P", "K", "Kinf"):
            raise ValueError(f"unknown class tag {self.class_tag!r}")

    def __call__(self, s):
        arr = _as_nonneg(s, f"{self.name} argument")
        return _scalar_like(s, self.fn(arr))

    def inverse(self, y, tol: float = 1e-10):
        """Evaluate the inverse at ``y`` (scalar or array).

        Uses the closed form when available; otherwise brackets the root in
        ``[0, hi]`` by doubling ``hi`` from 1 until ``fn(hi) >= y`` (raising
        :class:`RangeError` past ``1e15``, which for class-K functions means
        ``y`` exceeds the supremum) and bisects to absolute tolerance ``tol``
        in the argument.
        """
        arr = _as_nonneg(y, f"{self.name} inverse argument")
        if self.inv is not None:
            return _scalar_like(y, self.inv(arr))
        out = np.empty_like(arr, dtype=float)
        flat = arr.reshape(-1)
        res = out.reshape(-1)
        for i, yi in enumerate(flat):
            res[i] = self._bisect_inverse(float(yi), tol)
        return _scalar_like(y, out)

    def _bisect_inverse(self, y: float, tol: float) -> float:
        if y == 0.0:
            return 0.0
        lo, hi = 0.0, 1.0
        while float(self.fn(np.asarray(hi))) < y:
            hi *= 2.0
            if hi > _BRACKET_CAP:
                raise RangeError(
                    f"{self.name}: value {y:.6g} unreachable below "
                    f"argument {_BRACKET_CAP:.0e}"
                )
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if float(self.fn(np.asarray(mid))) < y:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def inverse_fn(self, tol: float = 1e-10) -> "MonotoneFn":
        """Package the inverse as a :class:`MonotoneFn`.

        The inverse of a class-Kinf function is class Kinf; for plain class K
        the inverse is only defined on the image, so the tag is kept but the
        bisection raises :class:`RangeError` beyond the supremum.
        """
        if self.inv is not None:
            return MonotoneFn(
                name=f"{self.name}^-1",
                class_tag=self.class_tag,
                fn=self.inv,
                inv=self.fn,
                params={"inverse_of": self.name},
            )
        outer = self

        def _inv(arr):
            out = np.empty_like(arr, dtype=float)
            res = out.reshape(-1)
            for i, yi in enumerate(arr.reshape(-1)):
                res[i] = outer._bisect_inverse(float(yi), tol)
            return out

        return MonotoneFn(
            name=f"{self.name}^-1",
            class_tag=self.class_tag,
            fn=_inv,
            inv=self.fn,
            params={"inverse_of": self.name, "tol": tol},
        )

    def scaled(self, c: float) -> "MonotoneFn":
        """Return ``s -> c * fn(s)`` (c > 0 preserves the class)."""
        if c <= 0:
            raise DomainError(f"scale factor must be positive, got {c}")
        inv = None
        if self.inv is not None:
            base_inv = self.inv
            inv = lambda y: base_inv(y / c)  # noqa: E731
        base = self.fn
        return MonotoneFn(
            name=f"{c:g}*{self.name}",
            class_tag=self.class_tag,
            fn=lambda s: c * base(s),
            inv=inv,
            params={"scale": c, "of": self.name},
        )

    def __repr__(self):  # keep reports readable
        return f"MonotoneFn({self.name}, {self.class_tag})"


@dataclass(frozen=True)
class KLFn:
    """Two-argument class-KL function: class K in s, decreasing to 0 in t."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, s, t):
        s_arr = _as_nonneg(s, f"{self.name} first argument")
        t_arr = _as_nonneg(t, f"{self.name} second argument")
        out = self.fn(s_arr, t_arr)
        if np.ndim(s) == 0 and np.ndim(t) == 0:
            return float(out)
        return out


@dataclass(frozen=True)
class KKFn:
    """Two-argument function that is class K in s for each fixed t and
    nondecreasing in t (the shape of the comparison flow and of decay
    envelopes built from it)."""

    name: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, s, t):
        s_arr = _as_nonneg(s, f"{self.name} first argument")
        t_arr = _as_nonneg(t, f"{self.name} second argument")
        out = self.fn(s_arr, t_arr)
        if np.ndim(s) == 0 and np.ndim(t) == 0:
            return float(out)
        return out


# ---------------------------------------------------------------------------
# catalog


def identity() -> MonotoneFn:
    """The identity map — class Kinf, its own inverse."""
    return MonotoneFn("id", "Kinf", lambda s: s, inv=lambda y: y)


def linear(c: float) -> MonotoneFn:
    """``s -> c*s`` with c > 0."""
    if c <= 0:
        raise DomainError(f"linear() needs c > 0, got {c}")
    return MonotoneFn(
        f"{c:g}*s", "Kinf", lambda s: c * s, inv=lambda y: y / c,
        params={"c": c},
    )


def power(p: float, c: float = 1.0) -> MonotoneFn:
    """``s -> c*s**p`` with p > 0, c > 0."""
    if p <= 0 or c <= 0:
        raise DomainError(f"power() needs p, c > 0, got p={p}, c={c}")
    return MonotoneFn(
        f"{c:g}*s^{p:g}",
        "Kinf",
        lambda s: c * np.power(s, p),
        inv=lambda y: np.power(y / c, 1.0 / p),
        params={"p": p, "c": c},
    )


def poly_odd(a: float, b: float) -> MonotoneFn:
    """``s -> a*s + b*s**3`` with a, b >= 0, not both zero.

    No tidy closed-form inverse worth carrying; bisection handles it.
    """
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise DomainError(f"poly_odd() needs a, b >= 0, a+b > 0; got {a}, {b}")
    return MonotoneFn(
        f"{a:g}*s+{b:g}*s^3",
        "Kinf",
        lambda s: a * s + b * s ** 3,
        params={"a": a, "b": b},
    )


def quad_coeffs(a: float, b: float) -> MonotoneFn:
    """``s -> a*s + b*s**2`` with a >= 0, b >= 0, a+b > 0.

    The workhorse family for fitted envelopes; the quadratic formula gives
    an exact inverse, which keeps decay-rate evaluation cheap on long time
    grids.
    """
    if a < 0 or b < 0 or (a == 0 and b == 0):
        raise DomainError(f"quad_coeffs() needs a, b >= 0, a+b > 0; got {a}, {b}")
    if b == 0:
        return linear(a)

    def _inv(y):
        # positive root of b s^2 + a s - y = 0
        return (np.sqrt(a * a + 4.0 * b * y) - a) / (2.0 * b)

    return MonotoneFn(
        f"{a:g}*s+{b:g}*s^2",
        "Kinf",
        lambda s: a * s + b * s ** 2,
        inv=_inv,
        params={"a": a, "b": b},
    )


def compose(fns: Sequence[MonotoneFn], name: Optional[str] = None) -> MonotoneFn:
    """Compose left-to-right: ``compose([f, g])(s) == g(f(s))``.

    The tag of the composition is the weakest tag among the parts
    (P < K < Kinf); closed-form inverses chain when every part has one.
    """
    if not fns:
        raise ValueError("compose() needs at least one function")
    order = {"P": 0, "K": 1, "Kinf": 2}
    tag = min((f.class_tag for f in fns), key=order.__getitem__)
    parts = list(fns)

    def _fwd(s):
        out = s
        for f in parts:
            out = f.fn(out)
        return out

    inv = None
    if all(f.inv is not None for f in parts):
        def _bwd(y):
            out = y
            for f in reversed(parts):
                out = f.inv(out)
            return out
        inv = _bwd

    label = name or " . ".join(f.name for f in reversed(parts))
    return MonotoneFn(label, tag, _fwd, inv=inv,
                      params={"parts": [f.name for f in parts]})


def invert(fn: MonotoneFn, tol: float = 1e-10) -> MonotoneFn:
    """Functional spelling of :meth:`MonotoneFn.inverse_fn`."""
    return fn.inverse_fn(tol=tol)


# ---------------------------------------------------------------------------
# comparison flow


@dataclass(frozen=True)
class FlowCurve:
    """Solution samples of the comparison ODE, plus a saturation flag."""

    times: np.ndarray
    values: np.ndarray
    saturated: bool
    cap: float = _FLOW_CAP


def comparison_flow_curve(
    alpha: MonotoneFn,
    theta: float,
    s: float,
    times,
    step: float = 1e-3,
    cap: float = _FLOW_CAP,
) -> FlowCurve:
    """Integrate ``dy/dt = (1-theta)*alpha(y)`` from ``y(0)=s`` and sample at
    ``times`` (nonnegative, nondecreasing).

    Fixed-step RK4 with step ``step``; each requested sample time is hit
    exactly with one fractional final step.  Once the state reaches ``cap``
    it is frozen there and the curve is marked saturated — the comparison
    function is nondecreasing, so the frozen tail is a lower bound on the
    true (possibly finite-escape) solution.
    """
    if step <= 0:
        raise DomainError(f"step must be positive, got {step}")
    if not (0.0 <= theta < 1.0):
        raise DomainError(f"theta must lie in [0, 1), got {theta}")
    t_arr = np.asarray(times, dtype=float)
    if t_arr.ndim != 1 or t_arr.size == 0:
        raise DomainError("times must be a nonempty 1-d array")
    if np.any(t_arr < 0) or np.any(np.diff(t_arr) < 0):
        raise DomainError("times must be nonnegative and nondecreasing")
    y0 = float(_as_nonneg(s, "initial value"))

    rate = 1.0 - theta
    g = alpha.fn

    def rhs(y):
        return rate * float(g(np.asarray(y)))

    values = np.empty(t_arr.size, dtype=float)
    saturated = False
    y = y0
    t = 0.0
    for k, tk in enumerate(t_arr):
        remaining = tk - t
        while remaining > 1e-15 and not saturated:
            h = step if remaining >= step else remaining
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            remaining = tk - t
            if y >= cap:
                y = cap
                saturated = True
        values[k] = y
        t = tk
    return FlowCurve(times=t_arr.copy(), values=values, saturated=saturated,
                     cap=cap)


def comparison_flow(
    alpha: MonotoneFn,
    theta: float,
    s: float,
    t: float,
    step: float = 1e-3,
    cap: float = _FLOW_CAP,
) -> float:
    """Value of the comparison flow at a single time; see
    :func:`comparison_flow_curve` for semantics."""
    if t < 0:
        raise DomainError(f"t must be nonnegative, got {t}")
    curve = comparison_flow_curve(alpha, theta, s, np.asarray([t]), step=step,
                                  cap=cap)
    return float(curve.values[0])


# ---------------------------------------------------------------------------
# sampled class validation (declarative tags are cheap; these check them)


def _sample_grid(hi: float, n: int = 200) -> np.ndarray:
    # geometric grid biased toward 0, where class-K violations usually hide
    return np.concatenate([[0.0], np.geomspace(1e-9, hi, n)])


def is_class_k(fn: MonotoneFn, hi: float = 100.0, strict_tol: float = 0.0) -> bool:
    """Sampled check: fn(0) == 0 and strictly increasing on [0, hi]."""
    grid = _sample_grid(hi)
    vals = fn.fn(grid)
    if abs(float(vals[0])) > 1e-12:
        return False
    return bool(np.all(np.diff(vals) > strict_tol))


def is_class_kinf(fn: MonotoneFn, hi: float = 100.0,
                  horizon: float = 1e12, floor: float = 10.0) -> bool:
    """Class K on [0, hi] plus an unboundedness heuristic at ``horizon``.

    The horizon is deliberately huge so that legitimately tiny fitted slopes
    still register as unbounded, while saturating functions (which plateau
    well below the floor) are rejected.
    """
    if not is_class_k(fn, hi=hi):
        return False
    return float(fn.fn(np.asarray(horizon))) >= floor


def require_class(fn: MonotoneFn, tag: str, what: str = "function") -> None:
    """Raise :class:`DomainError` if a sampled class check fails."""
    ok = is_class_kinf(fn) if tag == "Kinf" else is_class_k(fn)
    if not ok:
        raise DomainError(f"{what} ({fn.name}) failed sampled class-{tag} check")
