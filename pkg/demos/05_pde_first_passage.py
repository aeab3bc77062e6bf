# # Absorbed Fokker-Planck against the reflection principle
#
# A Brownian particle started at 1 survives to T = 1/4 with probability
# 1 - 2 P(N > 2).  The Crank-Nicolson solver reproduces it and the error falls
# by about 4 each time the grid is refined by 2.

# %%
import numpy as np
from scipy.stats import norm

from fragile_nets.core import DensitySpec, Grid
from fragile_nets.pde import evolve, init_density

exact = 1 - 2 * norm.sf(2.0)
prev = None
for n_y, n_t in ((400, 200), (801, 400), (1603, 800)):
    grid = Grid(6.0, n_y, n_t)
    p0 = init_density(DensitySpec("truncated_gaussian", {"mean": 1.0, "sd": 0.02}), grid)
    theta = evolve(p0[None], np.zeros((1, n_t)), 1.0, 0.25 / n_t, grid.dy, n_t).theta[0, -1]
    line = f"n_y = {n_y:4d}  theta_T = {theta:.6f}  rel. error {abs(theta - exact) / exact:.2e}"
    if prev is not None:
        line += f"  change {theta - prev:+.2e}"
    print(line)
    prev = theta
print(f"exact      {exact:.6f}")
