#!/usr/bin/env python3
"""Independent oracle for phantom voxel statistics.

Computes, by brute-force voxel counting over the analytic shell geometry
(no shared code with vtcd.phantom), the guaranteed band for the fraction of
voxels brighter than (background + membrane) / 2 in a 64x64x32 phantom with
5 cells, radius range [4, 8], membrane thickness 1:

  lower bound: a single smallest shell (all five cells could nearly coincide)
  upper bound: five largest shells, disjoint

Also Monte-Carlo samples valid configurations to show typical values, and
estimates the std-of-the-sample-std for the degradation noise checks.

Run: python scripts/phantom_band_oracle.py
The printed numbers are frozen into tests/test_phantom.py.
"""
import math

import numpy as np

DIMS = (64, 64, 32)
THICKNESS = 1.0
R_RANGE = (4.0, 8.0)
N_CELLS = 5
# Gaussian profile exceeds half its peak within this distance of the shell
HALF_WIDTH = THICKNESS * math.sqrt(2.0 * math.log(2.0))


def count_above_threshold(cells, dims):
    """Brute-force voxel count of the union of above-threshold shells."""
    h, w, c = dims
    hit = np.zeros(dims, dtype=bool)
    xs = np.arange(h)[:, None, None]
    ys = np.arange(w)[None, :, None]
    zs = np.arange(c)[None, None, :]
    for (cx, cy, cz), (a, b, cc) in cells:
        rho = np.sqrt(((xs - cx) / a) ** 2 + ((ys - cy) / b) ** 2 + ((zs - cz) / cc) ** 2)
        r_geo = (a * b * cc) ** (1.0 / 3.0)
        hit |= np.abs((rho - 1.0) * r_geo) <= HALF_WIDTH
    return int(hit.sum())


def sample_valid_config(rng):
    cells = []
    while len(cells) < N_CELLS:
        semi = rng.uniform(*R_RANGE, size=3)
        margin = semi + 2 * THICKNESS
        lo = margin
        hi = np.array(DIMS) - 1 - margin
        if np.any(hi < lo):
            continue
        center = rng.uniform(lo, hi)
        mean_r = semi.mean()
        if all(
            np.linalg.norm(center - c0) >= 0.8 * min(mean_r, np.mean(s0))
            for c0, s0 in cells
        ):
            cells.append((center, semi))
    return cells


def main():
    n_vox = np.prod(DIMS)

    # guaranteed lower bound: one smallest shell centered in the volume
    center = tuple(d / 2 for d in DIMS)
    lo_count = count_above_threshold([(center, (R_RANGE[0],) * 3)], DIMS)
    frac_lo = lo_count / n_vox

    # guaranteed upper bound: five largest shells counted without overlap
    hi_count = N_CELLS * count_above_threshold([(center, (R_RANGE[1],) * 3)], DIMS)
    frac_hi = hi_count / n_vox

    print(f"band lower bound (single min shell): {frac_lo:.6f}")
    print(f"band upper bound (5 disjoint max shells): {frac_hi:.6f}")

    rng = np.random.default_rng(2024)
    fracs = []
    for _ in range(40):
        cells = sample_valid_config(rng)
        fracs.append(count_above_threshold(cells, DIMS) / n_vox)
    fracs = np.array(fracs)
    print(f"MC fractions over 40 valid configs: min={fracs.min():.6f} "
          f"max={fracs.max():.6f} mean={fracs.mean():.6f}")

    # std-of-the-sample-std for per-slice noise estimates (n = 64*64 samples)
    n = 64 * 64
    for sigma in (0.02, 0.10):
        draws = rng.standard_normal((4000, n)) * sigma
        stds = draws.std(axis=1, ddof=1)
        analytic = sigma / math.sqrt(2 * (n - 1))
        print(
            f"sigma={sigma}: measured std-of-std={stds.std():.3e}, "
            f"analytic={analytic:.3e}, 3x analytic={3 * analytic:.3e}"
        )


if __name__ == "__main__":
    main()
