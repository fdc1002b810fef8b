# %% [markdown]
# # Local exact steering in projection
#
# Targets close to the freely evolved eigenstates are reached exactly on the
# first N modes by a Newton iteration whose linear step is a real moment
# problem.

# %%
import numpy as np

from bilinear_control import (
    assemble_frequencies,
    build_x_squared,
    neighborhood_distance,
    perturbed_spectrum,
    perturbed_targets,
    steer_local_newton,
)

N = 2
B = build_x_squared(24)
spec = perturbed_spectrum(B, 0.2)
T = 2 * assemble_frequencies(spec, N).base_horizon
print(f"horizon T = {T:.4f}")

# %%
targets = perturbed_targets(spec, N, T, distance=1e-2, rng=0)
print("H3 distance of the targets:", neighborhood_distance(spec, targets, T))

res = steer_local_newton(spec, B, targets, N, T)
for i, h in enumerate(res.history):
    print(f"iteration {i}: projected defect {h['defect']:.3e}")
print("phases:", np.round(res.phases, 6), " max |u1| =", np.max(np.abs(res.control.values - spec.u0)))
