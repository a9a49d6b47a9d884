"""Command-line front end.

    issf certify   --spec spec.json --out results/
    issf gains     --spec spec.json --out results/
    issf simulate  --spec spec.json --out results/ --seed 7
    issf envelope  --spec spec.json --out results/
    issf reproduce-paper --out results/

Each verb runs a slice of the pipeline on the given spec; bundled specs
can be named directly (e.g. ``--spec paper_sec4``).  ``reproduce-paper``
with no --spec runs both bundled reference experiments.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentSpec, bundled_spec, list_bundled, load_spec
from .errors import SchemaError, ToolkitError
from .pipeline import reproduce_paper, run_experiment

_VERB_STAGES = {
    "certify": ("certify",),
    "gains": ("gains",),
    "simulate": ("simulate",),
    "envelope": ("gains", "envelope"),
}


def _resolve_spec(value: str) -> ExperimentSpec:
    path = Path(value)
    if path.exists():
        return load_spec(path)
    if value in list_bundled():
        return bundled_spec(value)
    raise SchemaError(f"spec {value!r} is neither a file nor a bundled name "
                      f"(bundled: {list_bundled()})")


def _with_outputs(spec: ExperimentSpec, stages) -> ExperimentSpec:
    d = spec.to_dict()
    d["outputs"] = list(stages)
    from .config import spec_from_dict
    return spec_from_dict(d)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="issf",
        description="certify, simulate, and evaluate disturbance-robust "
                    "safety for control-affine systems")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, help_text in [
        ("certify", "run the certification checks and write reports"),
        ("gains", "derive the gain bundle via the locality scan"),
        ("simulate", "integrate the closed loop from the spec's initial "
                     "conditions"),
        ("envelope", "tabulate minimum certified initial distance per "
                     "disturbance bound"),
        ("reproduce-paper", "run the bundled reference experiments "
                            "end to end"),
    ]:
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--spec", default=None,
                       help="spec JSON path or bundled spec name"
                            + (" (default: both bundled specs)"
                               if verb == "reproduce-paper"
                               else " (default: paper_sec4)"))
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override the spec's seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "reproduce-paper":
            spec = _resolve_spec(args.spec) if args.spec else None
            manifests = reproduce_paper(args.out, seed=args.seed, spec=spec)
        else:
            spec = _resolve_spec(args.spec or "paper_sec4")
            spec = _with_outputs(spec, _VERB_STAGES[args.verb])
            manifests = [run_experiment(spec, args.out, seed=args.seed)]
    except (SchemaError, ToolkitError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    bad = 0
    for m in manifests:
        print(f"{m.spec_name}: seed={m.seed} identity={m.identity_hash[:16]}")
        for name, st in m.stages.items():
            print(f"  {name:<9} {st['status']} ({st['seconds']}s)")
            if st["status"] != "ok":
                bad += 1
    return 1 if bad else 0


if __name__ == "__main__":
    raise SystemExit(main())
