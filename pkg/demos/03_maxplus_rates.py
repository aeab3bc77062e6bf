# # Interest rates as a max-plus fixed point
#
# Rates solve r = A (x) r (+) alpha with A[i, j] = lambda_bar(j) on lending
# edges.  The minimal solution is A* (x) alpha.

# %%
import numpy as np

from fragile_nets.core import TypedNetwork
from fragile_nets.maxplus import MaxPlusMatrix, is_unique_solution, kleene_star, min_solution, mp_matvec
from fragile_nets.static_eq import build_A

NI = -np.inf
A = MaxPlusMatrix([[NI, -0.5], [-0.5, NI]])
print("A* =\n", kleene_star(A).entries)
print("r  =", min_solution(A, [2.0, 1.0]))

# %% [markdown]
# A lending cycle with no default risk is a credit bubble: every constant
# vector solves the system, and only the minimal one, r = 0, is meaningful.

# %%
O = np.zeros((3, 3), int)
O[0, 1] = O[1, 2] = O[2, 0] = 1
net = TypedNetwork((0, 1, 2), np.full(3, 1 / 3), np.ones(3), O.astype(float), O)
A = build_A(np.zeros(3), net)
for level in (0.0, 0.5, 3.0):
    r = np.full(3, level)
    print(f"r = {level}: solves the system: {np.array_equal(np.maximum(mp_matvec(A, r), 0.0), r)}")
print("minimal solution:", min_solution(A, np.zeros(3)), " unique:", is_unique_solution(A))
