"""Experiment orchestration: run the requested stages of a spec in order,
write artifacts, and record a manifest.

Stage order is fixed — certify, gains, simulate, issf, envelope, plots —
and each stage only runs when the spec asks for it.  Heavyweight shared
objects (the locality scan, the gain bundle, the trajectory batch) are
computed lazily and reused across stages, so e.g. a certify-only run never
integrates a trajectory and an issf-only run doesn't re-fit envelopes per
trajectory.

Determinism contract: the same spec and seed produce byte-identical CSV
and JSON artifacts.  The manifest lists every output with its SHA-256 and
carries an ``identity_hash`` over the deterministic artifacts (SVG files
and wall-clock timings are excluded — vector output is only required to
be visually stable, not byte-stable).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from ._version import __version__
from .errors import ToolkitError, RangeError
from .geometry import SafetyGeometry, disk
from .certification import (
    GridSpec,
    check_barrier_certificate,
    check_iss_lyapunov,
    check_issf_barrier,
    check_merged_w,
    check_robust_barrier,
    check_strict_barrier,
    fit_iss_envelopes,
    fit_issf_envelopes,
    fit_merged_envelopes,
)
from .dynamics import FeedbackLaw, integrate_batch
from .merging import CompactBarrier, compact_support_transform, merged_W, gradient_control
from .bounds import (
    ISSfGainBundle,
    admissibility_check,
    build_gains,
    evaluate_issf_inequality,
    safety_envelope,
)
from .config import ExperimentSpec, spec_hash, bundled_spec

__all__ = ["RunManifest", "run_experiment", "reproduce_paper", "derive_locality",
           "LocalityResult"]


def _fmt(x) -> str:
    return repr(float(x))


def _np_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON-serializable: {type(o)!r}")


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_np_default)
        fh.write("\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# locality derivation


@dataclass(frozen=True)
class LocalityResult:
    """Outcome of the window-radius scan: the largest radius whose envelope
    fit is feasible and whose admissible disturbance bound clears the
    required headroom, plus the per-radius scan table."""

    selected_radius: float
    bundle: ISSfGainBundle
    fit: object
    k_admissible: float
    required_bound: float
    d0_min: float
    rows: List[dict]


def derive_locality(spec: ExperimentSpec, Bf, closed, D, sweep) -> LocalityResult:
    """Scan candidate window radii for the largest one that certifies.

    The full window often fails the dissipation fit (the merged gradient
    need not point away from the unsafe set near the window rim where the
    barrier's gradient dies out), so the radius is shrunk until the fitted
    gains both exist and tolerate ``headroom * disturbance_bound``.
    """
    ics = np.asarray(spec.initial_conditions, dtype=float)
    d0_min = float(np.min(D.distance(ics)))
    required = spec.gains.headroom * spec.disturbance.bound
    rows: List[dict] = []
    best = None
    for rp in spec.gains.locality_radii:
        Xp = disk(spec.geometry.unsafe_center, rp)
        fit = fit_issf_envelopes(Bf, closed, D, Xp, sweep,
                                 n_r=spec.grid.n_r, n_theta=spec.grid.n_theta)
        row = {"r_prime": float(rp), "feasible": bool(fit.feasible),
               "mu0": None, "delta": None, "k_admissible": None}
        if fit.feasible:
            geom_p = SafetyGeometry(D, Xp)
            bundle = build_gains(fit.a1, fit.a2, fit.a3, fit.a4,
                                 spec.gains.theta, spec.gains.epsilon, geom_p)
            mu0 = bundle.epsilon * float(
                bundle.alphas["a1"].inverse(bundle.alphas["a2"](d0_min)))
            level = min(mu0, bundle.delta)
            try:
                k_adm = float(bundle.phi.inverse(level)) if level > 0 else 0.0
            except RangeError:
                k_adm = float("inf")
            row.update(mu0=mu0, delta=bundle.delta, k_admissible=k_adm)
            if k_adm >= required:
                best = LocalityResult(
                    selected_radius=float(rp), bundle=bundle, fit=fit,
                    k_admissible=k_adm, required_bound=required,
                    d0_min=d0_min, rows=rows)
        rows.append(row)
    if best is None:
        raise ToolkitError(
            "no candidate window radius yields a feasible envelope fit with "
            f"admissible bound >= {required}; scanned "
            f"{list(spec.gains.locality_radii)}")
    for row in rows:
        row["selected"] = row["r_prime"] == best.selected_radius
    return best


# ---------------------------------------------------------------------------
# shared run context


class _RunContext:
    """Lazily-computed shared state for one experiment run."""

    def __init__(self, spec: ExperimentSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.sys = spec.build_system()
        self.D, self.X = spec.geometry.regions()
        self.geom = SafetyGeometry(self.D, self.X)
        fields = spec.build_fields()
        self.V, self.B = fields["V"], fields["B"]
        self.Bt: CompactBarrier = compact_support_transform(
            self.B, self.D, self.X)
        self.Bf = self.Bt.as_field()
        self.W = merged_W(self.V, self.Bt, spec.merge.k1, spec.merge.k2)
        self.Wf = self.W.as_field()
        self.law: FeedbackLaw = gradient_control(self.W)
        self.closed = self.sys.with_feedback(self.law)
        self.sweep = spec.build_sweep()
        self.grid = spec.build_grid(input_samples=self.sweep)
        self._locality: Optional[LocalityResult] = None
        self._trajs = None
        self._signal = None

    def locality(self) -> LocalityResult:
        if self._locality is None:
            self._locality = derive_locality(self.spec, self.Bf, self.closed,
                                             self.D, self.sweep)
        return self._locality

    def signal(self):
        if self._signal is None:
            self._signal = self.spec.build_disturbance(self.seed)
        return self._signal

    def trajectories(self):
        if self._trajs is None:
            ics = np.asarray(self.spec.initial_conditions, dtype=float)
            self._trajs = integrate_batch(
                self.sys, ics, self.signal(), law=self.law,
                t_end=self.spec.horizon.t_end, dt=self.spec.horizon.dt,
                geom=self.geom)
        return self._trajs


# ---------------------------------------------------------------------------
# stages


def _stage_certify(ctx: _RunContext, out: Path, artifacts: List[Path]):
    spec = ctx.spec
    reports = []

    # Stability premise: the value function against its own gradient loop.
    nominal = ctx.sys.with_feedback(
        FeedbackLaw(k=lambda p: -ctx.V.grad(p), description="value-gradient law"))
    iss_fit = fit_iss_envelopes(ctx.V, nominal, ctx.grid, ctx.sweep)
    reports.append(check_iss_lyapunov(
        ctx.V, nominal, iss_fit.a1, iss_fit.a2, iss_fit.a3, iss_fit.gamma,
        ctx.grid, U_samples=ctx.sweep))

    ics = np.asarray(spec.initial_conditions, dtype=float)
    reports.append(check_barrier_certificate(
        ctx.Bf, ctx.closed, ctx.D, ics, ctx.grid))

    loc = ctx.locality()
    cD = spec.geometry.unsafe_center
    annulus = GridSpec.annulus(cD, spec.geometry.unsafe_radius,
                               loc.selected_radius, n_r=spec.grid.n_r,
                               n_theta=spec.grid.n_theta,
                               input_samples=ctx.sweep)
    reports.append(check_strict_barrier(
        ctx.Bf, ctx.closed, ctx.D, loc.bundle.alphas["a3"], annulus))

    # Expected to fail: without feedback the barrier alone cannot reject
    # worst-case inputs pushing toward the unsafe set.
    reports.append(check_robust_barrier(ctx.Bf, ctx.sys, ctx.sweep, annulus))

    Xp = disk(cD, loc.selected_radius)
    reports.append(check_issf_barrier(
        ctx.Bf, ctx.closed, ctx.D, Xp, loc.fit.a1, loc.fit.a2, loc.fit.a3,
        loc.fit.a4, ctx.sweep, annulus))

    merged_fit = fit_merged_envelopes(ctx.Wf, ctx.closed, ctx.D, ctx.X,
                                      ctx.sweep, ctx.grid)
    reports.append(check_merged_w(
        ctx.Wf, ctx.closed, ctx.D, ctx.X, merged_fit.c, *merged_fit.alphas(),
        ctx.sweep, ctx.grid))

    payload = [r.to_dict() for r in reports]
    rp = out / "reports.json"
    _write_json(rp, payload)
    artifacts.append(rp)

    lines = [f"certification summary: {spec.name} (seed {ctx.seed})",
             f"window radius used for barrier conditions: "
             f"{loc.selected_radius}", ""]
    n_pass = sum(1 for r in reports if r.verdict)
    for r in reports:
        lines.extend(r.summary_lines())
        lines.append("")
    lines.append(f"{n_pass}/{len(reports)} certificates passed")
    sp = out / "summary.txt"
    sp.write_text("\n".join(lines) + "\n")
    artifacts.append(sp)
    return {"passed": n_pass, "total": len(reports)}


def _stage_gains(ctx: _RunContext, out: Path, artifacts: List[Path]):
    loc = ctx.locality()
    scan_path = out / "locality_scan.csv"
    with open(scan_path, "w", newline="\n") as fh:
        fh.write("r_prime,feasible,mu0,delta,k_admissible,selected\n")
        for row in loc.rows:
            fh.write(",".join([
                _fmt(row["r_prime"]),
                str(int(row["feasible"])),
                _fmt(row["mu0"]) if row["mu0"] is not None else "nan",
                _fmt(row["delta"]) if row["delta"] is not None else "nan",
                (_fmt(row["k_admissible"])
                 if row["k_admissible"] is not None else "nan"),
                str(int(row.get("selected", False))),
            ]) + "\n")
    artifacts.append(scan_path)

    b = loc.bundle
    payload = {
        "selected_radius": loc.selected_radius,
        "required_admissible_bound": loc.required_bound,
        "k_admissible": loc.k_admissible,
        "d0_min": loc.d0_min,
        "bundle": b.describe(),
        "scan": loc.rows,
    }
    gp = out / "gains.json"
    _write_json(gp, payload)
    artifacts.append(gp)
    return {"selected_radius": loc.selected_radius,
            "k_admissible": loc.k_admissible}


def _stage_simulate(ctx: _RunContext, out: Path, artifacts: List[Path]):
    trajs = ctx.trajectories()
    for i, tr in enumerate(trajs):
        tp = out / f"traj_{i:02d}.csv"
        tr.write_csv(tp)
        artifacts.append(tp)
        ep = out / f"events_{i:02d}.csv"
        tr.write_events_csv(ep)
        artifacts.append(ep)
    return {
        "trajectories": len(trajs),
        "final_norms": [float(tr.norm_x[-1]) for tr in trajs],
        "min_dist_to_unsafe": [float(tr.dist_to_D.min()) for tr in trajs],
    }


def _stage_issf(ctx: _RunContext, out: Path, artifacts: List[Path]):
    loc = ctx.locality()
    trajs = ctx.trajectories()
    sig = ctx.signal()
    adm_rows = []
    verdicts = []
    for i, tr in enumerate(trajs):
        adm = admissibility_check(loc.bundle, tr.x0, sig,
                                  ctx.spec.horizon.t_end)
        adm_rows.append({
            "x0": [float(v) for v in tr.x0],
            "d0": float(tr.dist_to_D[0]),
            "admissible": adm.admissible,
            "first_violation_time": adm.first_violation_time,
            "min_rhs": adm.min_rhs,
        })
        ev = evaluate_issf_inequality(loc.bundle, tr)
        verdicts.append(ev.verdict)
        rp = out / f"residuals_{i:02d}.csv"
        ev.write_csv(rp)
        artifacts.append(rp)
    payload = {
        "u_bound": ctx.spec.disturbance.bound,
        "k_admissible": loc.k_admissible,
        "selected_radius": loc.selected_radius,
        "per_initial_condition": adm_rows,
        "inequality_verdicts": verdicts,
    }
    ap = out / "admissibility.json"
    _write_json(ap, payload)
    artifacts.append(ap)
    return {"verdicts": verdicts}


def _stage_envelope(ctx: _RunContext, out: Path, artifacts: List[Path]):
    env = safety_envelope(ctx.locality().bundle, ctx.spec.envelope_bounds)
    ep = out / "envelope.csv"
    env.write_csv(ep)
    artifacts.append(ep)
    return {"max_bound": env.u_bound,
            "min_safe_initial_distance": env.min_safe_initial_distance}


def _circle_csv(path: Path, center, radius, n=256):
    th = np.linspace(0.0, 2.0 * np.pi, n, endpoint=True)
    with open(path, "w", newline="\n") as fh:
        fh.write("x1,x2\n")
        for t in th:
            fh.write(f"{_fmt(center[0] + radius * np.cos(t))},"
                     f"{_fmt(center[1] + radius * np.sin(t))}\n")


def _stage_plots(ctx: _RunContext, out: Path, artifacts: List[Path]):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = ctx.spec.name
    plots = out / "plots"
    plots.mkdir(exist_ok=True)
    spec = ctx.spec
    trajs = ctx.trajectories()

    c = spec.geometry.unsafe_center
    dpath = plots / "boundary_D.csv"
    _circle_csv(dpath, c, spec.geometry.unsafe_radius)
    artifacts.append(dpath)
    xpath = plots / "boundary_X.csv"
    _circle_csv(xpath, c, spec.geometry.window_radius)
    artifacts.append(xpath)

    detail = {}
    if ctx.sys.dim_x == 2:
        fig, ax = plt.subplots(figsize=(6.0, 6.0))
        ax.add_patch(plt.Circle(c, spec.geometry.unsafe_radius,
                                color="#d62728", alpha=0.35, zorder=1))
        ax.add_patch(plt.Circle(c, spec.geometry.window_radius, fill=False,
                                linestyle="--", color="#555555", zorder=1))
        for i, tr in enumerate(trajs):
            ax.plot(tr.states[:, 0], tr.states[:, 1], lw=1.2, zorder=2,
                    label=f"x0=({tr.x0[0]:g}, {tr.x0[1]:g})")
            ax.plot([tr.x0[0]], [tr.x0[1]], "o", ms=4, color="black", zorder=3)
        ax.plot([0.0], [0.0], "+", ms=10, color="black", zorder=3)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
        ax.set_aspect("equal")
        if trajs:
            ax.legend(loc="upper left", fontsize=8)
        ax.set_title(f"{spec.name}: state portrait")
        fig.tight_layout()
        pp = plots / "portrait.svg"
        fig.savefig(pp, metadata={"Date": None})
        plt.close(fig)
        artifacts.append(pp)
        detail["portrait"] = str(pp.relative_to(out))

    if trajs:
        fig, axes = plt.subplots(3, 1, figsize=(7.0, 7.5), sharex=True)
        for tr in trajs:
            axes[0].plot(tr.times, tr.norm_x, lw=1.0)
            axes[1].plot(tr.times, tr.dist_to_D, lw=1.0)
            axes[2].plot(tr.times, np.linalg.norm(tr.inputs, axis=-1), lw=0.8)
        axes[0].set_ylabel("|x(t)|")
        axes[1].set_ylabel("dist to unsafe set")
        axes[1].axhline(0.0, color="#d62728", lw=0.8)
        axes[2].set_ylabel("|u(t)|")
        axes[2].set_xlabel("t")
        fig.tight_layout()
        tp = plots / "timeseries.svg"
        fig.savefig(tp, metadata={"Date": None})
        plt.close(fig)
        artifacts.append(tp)
        detail["final_norms"] = [float(tr.norm_x[-1]) for tr in trajs]
        detail["min_dist_to_unsafe"] = [float(tr.dist_to_D.min())
                                        for tr in trajs]
    return detail


_STAGE_FNS = {
    "certify": _stage_certify,
    "gains": _stage_gains,
    "simulate": _stage_simulate,
    "issf": _stage_issf,
    "envelope": _stage_envelope,
    "plots": _stage_plots,
}


# ---------------------------------------------------------------------------
# manifest + entry points


@dataclass(frozen=True)
class RunManifest:
    spec_name: str
    spec_hash: str
    seed: int
    version: str
    stages: Dict[str, dict]
    files: Dict[str, str]
    identity_hash: str

    def to_dict(self) -> dict:
        return {
            "spec_name": self.spec_name,
            "spec_hash": self.spec_hash,
            "seed": self.seed,
            "version": self.version,
            "stages": self.stages,
            "files": self.files,
            "identity_hash": self.identity_hash,
        }


def _identity_hash(spec_h: str, seed: int, version: str,
                   files: Dict[str, str]) -> str:
    stable = {k: v for k, v in sorted(files.items())
              if not k.endswith(".svg")}
    blob = json.dumps({"spec_hash": spec_h, "seed": seed, "version": version,
                       "files": stable}, sort_keys=True,
                      separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def run_experiment(spec: ExperimentSpec, out_dir, seed: Optional[int] = None,
                   ) -> RunManifest:
    """Execute the spec's requested stages into ``out_dir``.

    Per-stage failures are recorded in the manifest rather than aborting
    the whole run; stages whose inputs failed are marked skipped.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    use_seed = spec.seed if seed is None else int(seed)
    ctx = _RunContext(spec, use_seed)
    artifacts: List[Path] = []
    stages: Dict[str, dict] = {}
    failed = set()

    deps = {"issf": {"simulate", "gains"}, "envelope": {"gains"},
            "plots": {"simulate"}}
    for name in spec.outputs:
        blocked = failed & deps.get(name, set()) & set(spec.outputs)
        if blocked:
            stages[name] = {"status": f"skipped (needs {sorted(blocked)})",
                            "seconds": 0.0}
            continue
        t0 = time.perf_counter()
        try:
            detail = _STAGE_FNS[name](ctx, out, artifacts) or {}
            stages[name] = {"status": "ok",
                            "seconds": round(time.perf_counter() - t0, 3),
                            **{k: v for k, v in detail.items()}}
        except Exception as e:  # recorded, not fatal to later stages
            failed.add(name)
            stages[name] = {"status": f"failed: {type(e).__name__}: {e}",
                            "seconds": round(time.perf_counter() - t0, 3)}

    files = {str(p.relative_to(out)): _sha256(p) for p in artifacts}
    h = spec_hash(spec)
    manifest = RunManifest(
        spec_name=spec.name, spec_hash=h, seed=use_seed, version=__version__,
        stages=stages, files=files,
        identity_hash=_identity_hash(h, use_seed, __version__, files),
    )
    _write_json(out / "manifest.json", manifest.to_dict())
    return manifest


def reproduce_paper(out_dir, seed: Optional[int] = None,
                    spec: Optional[ExperimentSpec] = None) -> List[RunManifest]:
    """Run the bundled reference experiments (or one explicit spec) into
    per-spec subdirectories of ``out_dir``."""
    specs = ([spec] if spec is not None
             else [bundled_spec("paper_sec4"), bundled_spec("paper_sec4_nominal")])
    out = Path(out_dir)
    return [run_experiment(s, out / s.name, seed) for s in specs]
