# # Clustering versus full connection
#
# Two types with C p(0) = (1.5, 0.3).  When each type only lends to itself the
# fragile core is a closed class of its own; mixing the two dilutes the loss to
# the mean weight 0.9 < 1.

# %%
import json
from pathlib import Path

import numpy as np

from fragile_nets.core import DensitySpec, InteractionFn, TypedNetwork, clustered_kernel, config_from_dict, uniform_kernel
from fragile_nets.fragility import FragilityInput, classify
from fragile_nets.particles import run_sim

margs = [DensitySpec("uniform", {"lo": 0.0, "hi": 1.0})] * 2
for name, kernel in (("clustered", clustered_kernel(2)), ("uniform", uniform_kernel(2))):
    net = TypedNetwork(("core", "periphery"), [0.5, 0.5], [1.5, 0.3], kernel)
    rep = classify(FragilityInput(margs, [1.0, 1.0], InteractionFn("log"), net))
    print(f"{name:9s} max closed rho = {rep.max_closed_rho:+.4f}  verdict {rep.verdict.value}")
print(f"log 1.5 = {np.log(1.5):+.4f}, log 0.9 = {np.log(0.9):+.4f}")

# %% [markdown]
# The particle system shows the same thing: in the clustered network the core
# loses almost everything in a single step, the connected network only sheds a
# few percent.

# %%
cfg = config_from_dict(json.loads((Path(__file__).parent / "configs" / "two_types.json").read_text()))
for name, kernel in (("clustered", clustered_kernel(2)), ("uniform", uniform_kernel(2))):
    res = run_sim(cfg.replace(network=cfg.network.with_kappa(kernel)))
    drop = res.max_step_drop()
    print(f"{name:9s} largest one-step drop: core {drop[0]:.3f}, periphery {drop[1]:.3f}")
