"""Run gen-labels -> refine -> update -> eval on a manifest and time each stage.

Defaults to the bundled synthetic dataset. Extra arguments are passed to
every stage, e.g. ``--crf-exact`` or ``--phi 0.2``.
"""

import argparse
import sys
import time
from pathlib import Path

from sisweak import cli

ROOT = Path(__file__).resolve().parent.parent


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--manifest", type=Path, default=ROOT / "data" / "synthetic10" / "manifest.json")
    p.add_argument("--out", type=Path, default=ROOT / "out")
    args, extra = p.parse_known_args()
    for stage in ("gen-labels", "refine", "update", "eval"):
        t0 = time.perf_counter()
        code = cli.main([stage, "--manifest", str(args.manifest), "--out", str(args.out), *extra])
        print(f"[{stage}] exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
