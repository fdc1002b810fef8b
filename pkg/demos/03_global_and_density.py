# %% [markdown]
# # Global steering, exact concatenation and mixed states
#
# A random unitary image of {phi_1, phi_2} is far from the eigenbasis.  An
# SU(3) target is split into planar rotations on admissible transitions; each
# rotation is realized by a weak resonant pulse.  A local Newton stage then
# removes the remaining error, and the same control steers a mixed state.

# %%
import time

import numpy as np

from bilinear_control import (
    admissible_transitions,
    build_x_squared,
    compose,
    from_ensemble,
    lie_closure,
    periodic_pulse,
    perturbed_spectrum,
    pulse_error,
    steer_density,
    steer_exact,
    su_decompose,
)

B = build_x_squared(16)
spec = perturbed_spectrum(B, 0.2)
rng = np.random.default_rng(0)

tr = admissible_transitions(spec, B, 3)
print("admissible pairs:", tr.pairs, " closure dimension:", lie_closure(tr)["dimension"])

# %%
Q, R = np.linalg.qr(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)))
U = Q * (np.diag(R) / np.abs(np.diag(R)))
U /= np.linalg.det(U) ** (1 / 3)
factors = su_decompose(U, tr)
print(f"{len(factors)} planar factors, reconstruction error {np.max(np.abs(compose(factors, 3) - U)):.2e}")

# %% [markdown]
# Pulse error falls as the amplitude shrinks like 1/n and the duration grows like n.

# %%
for n in (4, 8, 16, 32):
    p = periodic_pulse((1, 2), 0.7, 0.3, n, spec, B)
    b = p.bounds()
    print(f"n = {n:3d}: error {pulse_error(p, spec, B):.2e}  L_inf {b['linf']:.4f}  T*L_inf {b['t_linf']:.3f}")

# %%
V = spec.eigenvectors
initial, targets = V[:, :2], V[:, :3] @ U[:, :2]
t0 = time.perf_counter()
res = steer_exact(spec, B, initial, targets)
print(f"exact steering: projected defect {res.projected_defect:.2e}, "
      f"T = {res.control.total_time:.1f}, {time.perf_counter() - t0:.1f}s")

# %%
rho1 = from_ensemble([0.7, 0.3], initial)
rho2 = from_ensemble([0.7, 0.3], targets)
dres = steer_density(spec, B, rho1, rho2)
print(f"density steering: projected defect {dres.defect:.2e}")
