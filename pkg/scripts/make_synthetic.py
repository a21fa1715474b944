"""Regenerate the bundled synthetic dataset (default: data/synthetic10)."""

import argparse
from pathlib import Path

from sisweak.synthetic import make_dataset


def main():
    root = Path(__file__).resolve().parent.parent
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", type=Path, default=root / "data" / "synthetic10")
    p.add_argument("--images", type=int, default=10)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    manifest = make_dataset(args.out, args.images, args.size, args.seed)
    print(f"wrote {args.images} images, manifest at {manifest}")


if __name__ == "__main__":
    main()
