# # Fragility of a single type
#
# One type, loss weight C = 1 and g = log.  With a uniform initial density on
# (0, a) the density at the boundary is 1/a, so the logarithmic Perron-Frobenius
# eigenvalue is log(C / a): positive means an immediate cascade.

# %%
import numpy as np

from fragile_nets.core import DensitySpec, InteractionFn, TypedNetwork
from fragile_nets.fragility import FragilityInput, classify

net = TypedNetwork(("x",), [1.0], [1.0], [[1.0]])
log = InteractionFn("log")

# %%
for a in (0.25, 0.5, 0.9, 1.0, 1.1, 2.0):
    inp = FragilityInput([DensitySpec("uniform", {"lo": 0.0, "hi": a})], [1.0], log, net)
    rep = classify(inp)
    print(f"a = {a:4.2f}  rho = {rep.components[0].rho:+.4f}  log(1/a) = {np.log(1 / a):+.4f}  {rep.verdict.value}")

# %% [markdown]
# At a = 1 the two envelopes meet at rho = 0 and the verdict is Inconclusive;
# the series diagnostic then looks at the growth of the jump expansion.

# %%
rep = classify(FragilityInput([DensitySpec("uniform", {"lo": 0.0, "hi": 1.0})], [1.0], log, net), semimart={})
print(rep.table())
