"""Fit a virtual battery to data where the answer is known.

States come from dx/dt = -a x - u with a = 1.5 1/h. The fit recovers a,
the energy envelope and validates on a fresh signal.
"""
import numpy as np

from vbident import vb

a_true, dt = 1.5, 1 / 60  # hours
rng = np.random.default_rng(3)
regs = [np.full(400, -15.0), np.full(400, 15.0)] + [np.repeat(rng.uniform(-8, 8, 30), 10) for _ in range(3)]
states = [vb.simulate(0.0, a_true, u, dt) for u in regs]

phi = vb.identify_from_series(states, regs, dt, power_limits=(-12.0, 12.0))
for key in vb.FIELDS:
    print(f"{key:8s} {getattr(phi, key):9.3f} {vb.UNITS[key]}")

u_new = np.repeat(rng.uniform(-10, 10, 20), 15)
truth = vb.simulate(0.0, a_true, u_new, dt)
print("validation:", vb.validate(phi, u_new, truth, dt))
