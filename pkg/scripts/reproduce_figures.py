#!/usr/bin/env python3
"""Run the bundled reference experiments end to end and report what came out.

Equivalent to ``issf reproduce-paper`` but prints a compact per-stage
digest (status, artifact counts, identity hash) suitable for pasting into
a lab notebook.  Two runs with the same --seed must agree on every hash;
pass --check to run twice and verify that on the spot.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from issf import bundled_spec, load_spec, reproduce_paper


def digest(manifest) -> str:
    lines = [f"{manifest.spec_name}  (seed {manifest.seed})"]
    for stage, info in manifest.stages.items():
        status = info["status"] if isinstance(info, dict) else str(info)
        lines.append(f"  {stage:<10} {status}")
    csvs = sum(1 for f in manifest.files if f.endswith(".csv"))
    svgs = sum(1 for f in manifest.files if f.endswith(".svg"))
    lines.append(f"  artifacts: {len(manifest.files)} "
                 f"({csvs} csv, {svgs} svg)")
    lines.append(f"  identity:  {manifest.identity_hash}")
    return "\n".join(lines)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("out/reproduction"))
    ap.add_argument("--seed", type=int, default=None,
                    help="override the spec seeds")
    ap.add_argument("--spec", default=None,
                    help="run one spec (bundled name or JSON path) instead "
                         "of the full bundled set")
    ap.add_argument("--check", action="store_true",
                    help="run twice and require identical identity hashes")
    args = ap.parse_args(argv)

    spec = None
    if args.spec is not None:
        p = Path(args.spec)
        spec = load_spec(p) if p.is_file() else bundled_spec(args.spec)

    manifests = reproduce_paper(args.out / "run", seed=args.seed, spec=spec)
    for m in manifests:
        print(digest(m))
        print()

    failed = [
        (m.spec_name, stage)
        for m in manifests
        for stage, info in m.stages.items()
        if (info["status"] if isinstance(info, dict) else str(info)) != "ok"
    ]
    if failed:
        for name, stage in failed:
            print(f"stage failed: {name}/{stage}", file=sys.stderr)
        return 1

    if args.check:
        twins = reproduce_paper(args.out / "run_check", seed=args.seed,
                                spec=spec)
        for a, b in zip(manifests, twins):
            ok = a.identity_hash == b.identity_hash
            print(f"determinism {a.spec_name}: "
                  f"{'ok' if ok else 'HASH MISMATCH'}")
            if not ok:
                return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
