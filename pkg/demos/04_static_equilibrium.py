# # Static equilibrium of a small credit network
#
# Three types lend along a chain a -> b -> c.  Given the default intensities
# lambda_bar the solver returns rates, lending and borrowing amounts, the
# allocation nu and the resulting drifts.

# %%
import numpy as np

from fragile_nets.core import TypedNetwork
from fragile_nets.static_eq import check_static, solve_static

O = np.array([[0, 1, 0], [0, 0, 1], [0, 0, 0]])
net = TypedNetwork(("a", "b", "c"), [0.3, 0.3, 0.4], [1, 1, 1], O.astype(float), O)
alpha = np.array([0.5, 1.0, 1.5])
alpha_prime = np.array([0.2, 0.1, 0.0])
lb = np.array([-0.1, -0.3, -0.05])

eq = solve_static(lb, net, alpha, alpha_prime, cbar=1.0)
for i, t in enumerate(net.types):
    print(f"{t}: r = {eq.r[i]:.3f}  R = {eq.R[i]:.3f}  lends {eq.cl[i]:.3f}  borrows {eq.cb[i]:.3f}  drift {eq.drift[i]:.3f}")
print("allocation nu:\n", eq.nu)
print("violated invariants:", check_static(eq, lb, net, alpha, 1.0) or "none")
