"""Counting partition functions and checking them by sampling.

Z_{N,M} is the integral over the torus of the product of block-averaged
empirical densities at the particles.  It reduces to a sum over occupation
numbers, which we evaluate exactly, bracket by fitted power laws, and
reproduce by Monte Carlo under a non-uniform reference density.
"""

import math

import numpy as np

from pkslab import GridDensity
from pkslab.experiments import fixed_point_kernel
from pkslab.ldp import fit_bound_constants, ldp_fixed_point, log_znm_exact, znm_bounds, znm_exact, znm_monte_carlo

n_values, p_values = [16, 32, 64, 128, 256], [2, 4, 8]
c_low, c_up, _ = fit_bound_constants(n_values, p_values)
print(f"fitted constants: lower {c_low:.3f}, upper {c_up:.4f}")
print(f"{'N':>5} {'p':>3} {'log Z':>10} {'log lower':>10} {'log upper':>10}")
for p in p_values:
    for n in n_values:
        lo, hi = znm_bounds(n, p, c_low, c_up)
        print(f"{n:>5} {p:>3} {log_znm_exact(n, p):>10.4f} {math.log(lo):>10.4f} {math.log(hi):>10.4f}")

x = (np.arange(64) + 0.5) / 64
rho = GridDensity(1 + 0.5 * np.cos(2 * np.pi * x))
mc = znm_monte_carlo(8, 2, rho, 200_000, seed=0)
print(f"\nZ(8, 2) exact {znm_exact(8, 2):.5f}, Monte Carlo {mc.mean:.5f} +- {mc.stderr:.5f}")

# with a weak short-range kernel the only critical point is the reference itself
out = ldp_fixed_point(fixed_point_kernel(256, 0.01), GridDensity.uniform(256, 1), u0=0.1 * np.cos(2 * np.pi * (np.arange(256) + 0.5) / 256))
print(f"fixed point: {out.iterations} iterations, max|u| = {np.abs(out.u).max():.1e}, I = {out.i_value:.1e}, "
      f"undamped contraction {out.undamped_ratio(0.5):.3f}")
