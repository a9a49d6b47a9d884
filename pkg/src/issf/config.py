"""Experiment specification: a strict JSON schema and its dataclass mirror.

A spec file pins everything a run needs — system, geometry, candidate
fields (as expressions), merge constants, gain parameters, disturbance,
initial conditions, horizon, grids, and which pipeline stages to emit.
Specs round-trip losslessly through ``to_dict``/``from_dict`` and hash to
a stable identity via canonical JSON.  Unknown keys are rejected rather
than ignored; a typo in a field name should never silently change a run.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from importlib import resources
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import SchemaError
from .expressions import parse_expression, field_from_expression
from .geometry import Region, SafetyGeometry, disk
from .dynamics import (
    ControlAffineSystem,
    DisturbanceSignal,
    planar_integrator,
    zero_signal,
    constant_signal,
    sinusoid_signal,
    seeded_noise_signal,
)
from .certification import GridSpec, input_sweep

__all__ = [
    "ExperimentSpec",
    "SystemSpec",
    "GeometrySpec",
    "MergeSpec",
    "GainSpec",
    "DisturbanceSpec",
    "HorizonSpec",
    "GridConfig",
    "spec_from_dict",
    "load_spec",
    "canonical_json",
    "spec_hash",
    "bundled_spec",
    "list_bundled",
    "STAGES",
]

STAGES = ("certify", "gains", "simulate", "issf", "envelope", "plots")

_SYSTEM_CATALOG = {
    "planar_integrator": planar_integrator,
}


def _require(cond: bool, msg: str):
    if not cond:
        raise SchemaError(msg)


def _take(d: dict, context: str, required: Tuple[str, ...],
          optional: Tuple[str, ...] = ()) -> dict:
    """Destructure a dict strictly: every required key present, no strays."""
    _require(isinstance(d, dict), f"{context} must be an object, got {type(d).__name__}")
    unknown = set(d) - set(required) - set(optional)
    _require(not unknown, f"{context}: unknown keys {sorted(unknown)}")
    missing = set(required) - set(d)
    _require(not missing, f"{context}: missing keys {sorted(missing)}")
    return d


def _floats(v, context: str) -> Tuple[float, ...]:
    _require(isinstance(v, (list, tuple)), f"{context} must be a list")
    out = []
    for x in v:
        _require(isinstance(x, (int, float)) and not isinstance(x, bool),
                 f"{context} entries must be numbers")
        out.append(float(x))
    return tuple(out)


@dataclass(frozen=True)
class SystemSpec:
    catalog: str

    def build(self) -> ControlAffineSystem:
        return _SYSTEM_CATALOG[self.catalog]()

    @staticmethod
    def from_dict(d: dict) -> "SystemSpec":
        _take(d, "system", ("catalog",))
        name = d["catalog"]
        _require(name in _SYSTEM_CATALOG,
                 f"system.catalog {name!r} not in {sorted(_SYSTEM_CATALOG)}")
        return SystemSpec(catalog=name)


@dataclass(frozen=True)
class GeometrySpec:
    unsafe_center: Tuple[float, ...]
    unsafe_radius: float
    window_radius: float

    def regions(self) -> Tuple[Region, Region]:
        c = self.unsafe_center
        return disk(c, self.unsafe_radius), disk(c, self.window_radius)

    def build(self) -> SafetyGeometry:
        D, X = self.regions()
        return SafetyGeometry(D, X)

    @staticmethod
    def from_dict(d: dict) -> "GeometrySpec":
        _take(d, "geometry", ("unsafe_center", "unsafe_radius", "window_radius"))
        c = _floats(d["unsafe_center"], "geometry.unsafe_center")
        _require(len(c) == 2, "geometry.unsafe_center must have 2 entries")
        r, rx = float(d["unsafe_radius"]), float(d["window_radius"])
        _require(r > 0, "geometry.unsafe_radius must be positive")
        _require(rx > r,
                 "geometry.window_radius must exceed unsafe_radius (the "
                 "unsafe set must sit strictly inside the window)")
        return GeometrySpec(unsafe_center=c, unsafe_radius=r, window_radius=rx)


@dataclass(frozen=True)
class MergeSpec:
    k1: float
    k2: float
    depth: float

    @staticmethod
    def from_dict(d: dict) -> "MergeSpec":
        _take(d, "merge", ("k1", "k2", "depth"))
        k1, k2, depth = (float(d[k]) for k in ("k1", "k2", "depth"))
        _require(k1 > 0, "merge.k1 must be positive")
        _require(depth > 0, "merge.depth must be positive")
        return MergeSpec(k1=k1, k2=k2, depth=depth)


@dataclass(frozen=True)
class GainSpec:
    theta: float
    epsilon: float
    locality_radii: Tuple[float, ...]
    headroom: float

    @staticmethod
    def from_dict(d: dict, geom: GeometrySpec) -> "GainSpec":
        _take(d, "gains", ("theta", "epsilon", "locality_radii", "headroom"))
        theta, eps = float(d["theta"]), float(d["epsilon"])
        _require(0 < theta < 1, "gains.theta must lie in (0,1)")
        _require(0 < eps < 1, "gains.epsilon must lie in (0,1)")
        radii = _floats(d["locality_radii"], "gains.locality_radii")
        _require(len(radii) > 0, "gains.locality_radii must be nonempty")
        for r in radii:
            _require(geom.unsafe_radius < r <= geom.window_radius,
                     f"locality radius {r} must lie in "
                     f"({geom.unsafe_radius}, {geom.window_radius}]")
        head = float(d["headroom"])
        _require(head >= 1.0, "gains.headroom must be at least 1")
        return GainSpec(theta=theta, epsilon=eps,
                        locality_radii=tuple(sorted(radii)), headroom=head)


@dataclass(frozen=True)
class DisturbanceSpec:
    kind: str
    bound: float
    hold_dt: float = 0.1
    vector: Optional[Tuple[float, ...]] = None
    amplitudes: Optional[Tuple[float, ...]] = None
    frequencies: Optional[Tuple[float, ...]] = None

    def build(self, dim_u: int, seed: int) -> DisturbanceSignal:
        if self.kind == "zero":
            return zero_signal(dim_u)
        if self.kind == "constant":
            return constant_signal(self.vector)
        if self.kind == "sinusoid":
            return sinusoid_signal(self.amplitudes, self.frequencies)
        return seeded_noise_signal(self.bound, seed=seed,
                                   hold_dt=self.hold_dt, dim_u=dim_u)

    @staticmethod
    def from_dict(d: dict, dim_u: int) -> "DisturbanceSpec":
        _take(d, "disturbance", ("kind",),
              ("bound", "hold_dt", "vector", "amplitudes", "frequencies"))
        kind = d["kind"]
        if kind == "zero":
            return DisturbanceSpec(kind="zero", bound=0.0)
        if kind == "constant":
            v = _floats(d.get("vector", ()), "disturbance.vector")
            _require(len(v) == dim_u, "disturbance.vector length != dim_u")
            return DisturbanceSpec(kind="constant", vector=v,
                                   bound=float(np.linalg.norm(v)))
        if kind == "sinusoid":
            a = _floats(d.get("amplitudes", ()), "disturbance.amplitudes")
            f = _floats(d.get("frequencies", ()), "disturbance.frequencies")
            _require(len(a) == dim_u and len(f) == dim_u,
                     "disturbance amplitudes/frequencies length != dim_u")
            return DisturbanceSpec(kind="sinusoid", amplitudes=a,
                                   frequencies=f,
                                   bound=float(np.linalg.norm(a)))
        if kind == "seeded_bounded_noise":
            _require("bound" in d, "seeded noise needs a bound")
            bound = float(d["bound"])
            hold = float(d.get("hold_dt", 0.1))
            _require(bound >= 0, "disturbance.bound must be nonnegative")
            _require(hold > 0, "disturbance.hold_dt must be positive")
            return DisturbanceSpec(kind=kind, bound=bound, hold_dt=hold)
        raise SchemaError(f"unknown disturbance kind {kind!r}")


@dataclass(frozen=True)
class HorizonSpec:
    t_end: float
    dt: float

    @staticmethod
    def from_dict(d: dict) -> "HorizonSpec":
        _take(d, "horizon", ("t_end", "dt"))
        t_end, dt = float(d["t_end"]), float(d["dt"])
        _require(t_end > 0, "horizon.t_end must be positive")
        _require(0 < dt <= t_end, "horizon.dt must lie in (0, t_end]")
        return HorizonSpec(t_end=t_end, dt=dt)


@dataclass(frozen=True)
class GridConfig:
    bounds: Tuple[Tuple[float, float], ...]
    resolution: int
    n_r: int
    n_theta: int
    input_norms: Tuple[float, ...]
    n_angles: int

    @staticmethod
    def from_dict(d: dict, geom: GeometrySpec) -> "GridConfig":
        _take(d, "grid",
              ("bounds", "resolution", "annulus", "input_norms", "n_angles"))
        bounds = tuple(tuple(_floats(b, "grid.bounds row")) for b in d["bounds"])
        _require(len(bounds) == 2 and all(len(b) == 2 for b in bounds),
                 "grid.bounds must be a 2x2 array of [lo, hi] rows")
        for lo, hi in bounds:
            _require(lo < hi, "grid.bounds rows must satisfy lo < hi")
        cx, cy = geom.unsafe_center
        rx = geom.window_radius
        _require(bounds[0][0] <= cx - rx and bounds[0][1] >= cx + rx
                 and bounds[1][0] <= cy - rx and bounds[1][1] >= cy + rx,
                 "grid.bounds must contain the certification window")
        res = d["resolution"]
        _require(isinstance(res, int) and res >= 2,
                 "grid.resolution must be an integer >= 2")
        ann = _take(d["annulus"], "grid.annulus", ("n_r", "n_theta"))
        n_r, n_theta = ann["n_r"], ann["n_theta"]
        _require(isinstance(n_r, int) and n_r >= 2, "annulus.n_r >= 2")
        _require(isinstance(n_theta, int) and n_theta >= 4, "annulus.n_theta >= 4")
        norms = _floats(d["input_norms"], "grid.input_norms")
        _require(all(v > 0 for v in norms), "grid.input_norms must be positive")
        n_ang = d["n_angles"]
        _require(isinstance(n_ang, int) and n_ang >= 1, "grid.n_angles >= 1")
        return GridConfig(bounds=bounds, resolution=res, n_r=n_r,
                          n_theta=n_theta, input_norms=norms, n_angles=n_ang)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything one run needs, as data."""

    name: str
    description: str
    seed: int
    system: SystemSpec
    geometry: GeometrySpec
    fields: Dict[str, str]
    merge: MergeSpec
    gains: GainSpec
    disturbance: DisturbanceSpec
    initial_conditions: Tuple[Tuple[float, ...], ...]
    horizon: HorizonSpec
    grid: GridConfig
    envelope_bounds: Tuple[float, ...]
    outputs: Tuple[str, ...]

    # -- construction helpers ------------------------------------------------

    def build_system(self) -> ControlAffineSystem:
        return self.system.build()

    def build_fields(self) -> dict:
        sys = self.build_system()
        return {k: field_from_expression(expr, sys.dim_x, name=k)
                for k, expr in self.fields.items()}

    def build_sweep(self):
        sys = self.build_system()
        return input_sweep(sys.dim_u, self.disturbance.bound,
                           norms=self.grid.input_norms,
                           n_angles=self.grid.n_angles)

    def build_grid(self, input_samples=None) -> GridSpec:
        return GridSpec.cartesian(
            [list(b) for b in self.grid.bounds],
            resolution=self.grid.resolution,
            input_samples=(self.build_sweep()
                           if input_samples is None else input_samples),
            label=f"{self.name}-cartesian",
        )

    def build_disturbance(self, seed: Optional[int] = None) -> DisturbanceSignal:
        sys = self.build_system()
        return self.disturbance.build(sys.dim_u,
                                      self.seed if seed is None else seed)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "description": self.description,
            "seed": self.seed,
            "system": {"catalog": self.system.catalog},
            "geometry": {
                "unsafe_center": list(self.geometry.unsafe_center),
                "unsafe_radius": self.geometry.unsafe_radius,
                "window_radius": self.geometry.window_radius,
            },
            "fields": dict(self.fields),
            "merge": {"k1": self.merge.k1, "k2": self.merge.k2,
                      "depth": self.merge.depth},
            "gains": {"theta": self.gains.theta,
                      "epsilon": self.gains.epsilon,
                      "locality_radii": list(self.gains.locality_radii),
                      "headroom": self.gains.headroom},
            "disturbance": {"kind": self.disturbance.kind},
            "initial_conditions": [list(x) for x in self.initial_conditions],
            "horizon": {"t_end": self.horizon.t_end, "dt": self.horizon.dt},
            "grid": {
                "bounds": [list(b) for b in self.grid.bounds],
                "resolution": self.grid.resolution,
                "annulus": {"n_r": self.grid.n_r,
                            "n_theta": self.grid.n_theta},
                "input_norms": list(self.grid.input_norms),
                "n_angles": self.grid.n_angles,
            },
            "envelope_bounds": list(self.envelope_bounds),
            "outputs": list(self.outputs),
        }
        dist = d["disturbance"]
        if self.disturbance.kind == "seeded_bounded_noise":
            dist["bound"] = self.disturbance.bound
            dist["hold_dt"] = self.disturbance.hold_dt
        elif self.disturbance.kind == "constant":
            dist["vector"] = list(self.disturbance.vector)
        elif self.disturbance.kind == "sinusoid":
            dist["amplitudes"] = list(self.disturbance.amplitudes)
            dist["frequencies"] = list(self.disturbance.frequencies)
        return d

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(canonical_json(self.to_dict()) + "\n")


def spec_from_dict(d: dict) -> ExperimentSpec:
    _take(d, "spec", ("name", "seed", "system", "geometry", "fields",
                      "merge", "gains", "disturbance", "initial_conditions",
                      "horizon", "grid", "envelope_bounds", "outputs"),
          ("description",))
    name = d["name"]
    _require(isinstance(name, str) and name, "name must be a nonempty string")
    seed = d["seed"]
    _require(isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0,
             "seed must be a nonnegative integer")
    system = SystemSpec.from_dict(d["system"])
    sys = system.build()
    geometry = GeometrySpec.from_dict(d["geometry"])
    _require(len(geometry.unsafe_center) == sys.dim_x,
             "geometry dimension != system dimension")

    fields_d = d["fields"]
    _require(isinstance(fields_d, dict) and set(fields_d) >= {"V", "B"},
             "fields must define at least 'V' and 'B'")
    for key, expr in fields_d.items():
        _require(isinstance(expr, str), f"fields[{key!r}] must be a string")
        parse_expression(expr, sys.dim_x)  # raises SchemaError on bad input

    merge = MergeSpec.from_dict(d["merge"])
    gains = GainSpec.from_dict(d["gains"], geometry)
    dist = DisturbanceSpec.from_dict(d["disturbance"], sys.dim_u)

    ics_raw = d["initial_conditions"]
    _require(isinstance(ics_raw, list) and ics_raw,
             "initial_conditions must be a nonempty list")
    D, _ = geometry.regions()
    ics = []
    for row in ics_raw:
        x = _floats(row, "initial condition")
        _require(len(x) == sys.dim_x, "initial condition dimension mismatch")
        _require(float(D.distance(np.asarray(x)[None, :])[0]) > 0,
                 f"initial condition {list(x)} starts inside the unsafe set")
        ics.append(x)

    horizon = HorizonSpec.from_dict(d["horizon"])
    grid = GridConfig.from_dict(d["grid"], geometry)
    env = _floats(d["envelope_bounds"], "envelope_bounds")
    _require(len(env) > 0 and all(v >= 0 for v in env),
             "envelope_bounds must be nonempty and nonnegative")

    outputs = d["outputs"]
    _require(isinstance(outputs, list) and outputs, "outputs must be nonempty")
    for st in outputs:
        _require(st in STAGES, f"unknown output stage {st!r}; "
                 f"valid stages: {list(STAGES)}")
    ordered = tuple(s for s in STAGES if s in outputs)

    return ExperimentSpec(
        name=name, description=d.get("description", ""), seed=seed,
        system=system, geometry=geometry, fields=dict(fields_d), merge=merge,
        gains=gains, disturbance=dist, initial_conditions=tuple(ics),
        horizon=horizon, grid=grid, envelope_bounds=tuple(env),
        outputs=ordered,
    )


def load_spec(path) -> ExperimentSpec:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: not valid JSON ({e})") from e
    return spec_from_dict(d)


def canonical_json(d: dict) -> str:
    """Key-sorted, compact, float-exact serialization used for hashing."""
    return json.dumps(d, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def spec_hash(spec: ExperimentSpec) -> str:
    return hashlib.sha256(canonical_json(spec.to_dict()).encode()).hexdigest()


def bundled_spec(name: str) -> ExperimentSpec:
    """Load one of the specs shipped inside the package by bare name."""
    base = resources.files("issf") / "_bundled"
    path = base / f"{name}.json"
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise SchemaError(
            f"no bundled spec named {name!r}; available: {list_bundled()}")
    return spec_from_dict(json.loads(text))


def list_bundled():
    base = resources.files("issf") / "_bundled"
    return sorted(p.name[:-5] for p in base.iterdir()
                  if p.name.endswith(".json"))
