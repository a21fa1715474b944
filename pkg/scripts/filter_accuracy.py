"""Measure the lattice filter against the exact O(N^2) filter on random images.

Prints relative error and timings per image size for both CRF kernels.
"""

import argparse
import time

import numpy as np

from sisweak.densecrf import default_params, kernel_features
from sisweak.filtering import ExactGaussianFilter, GridGaussianFilter, relative_error


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64])
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    params = default_params()
    print(f"{'size':>5} {'kernel':>11} {'max rel err':>12} {'exact s':>8} {'grid s':>8}")
    for size in args.sizes:
        for _ in range(args.trials):
            img = rng.uniform(0, 255, size=(size, size, 3))
            v = rng.uniform(size=size * size)
            for name, (f, s) in zip(("appearance", "smoothness"), kernel_features(img, params)):
                t0 = time.perf_counter()
                exact = ExactGaussianFilter(f, s).apply(v)
                t1 = time.perf_counter()
                approx = GridGaussianFilter(f, s).apply(v)
                t2 = time.perf_counter()
                print(f"{size:>5} {name:>11} {relative_error(approx, exact):>12.2e} "
                      f"{t1 - t0:>8.3f} {t2 - t1:>8.3f}")


if __name__ == "__main__":
    main()
