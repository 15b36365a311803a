"""Twenty air conditioners following a regulation signal.

Builds a desynchronized ensemble, measures its baseline draw, tracks a
synthetic signal and searches the sustained power limits.
"""
import numpy as np

from vbident.ensemble import baseline_power, build_dataset, make_ensemble, power_limits, simulate_tracking
from vbident.signals import scale_signal, synth_signal

ens = make_ensemble("ac", 20, seed=0)
base = baseline_power(ens, 3600)
print(f"{len(ens)} devices, {ens.total_rated_power:.0f} kW rated, baseline {base:.1f} kW")

signal = scale_signal(synth_signal(1, duration=1800), ens.total_rated_power, 0.2)
traj = simulate_tracking(ens, signal, base)
err = traj.tracking_error
print(f"tracked {len(traj)} of {len(signal)} s, mean |error| {err.mean():.2f} kW, worst {err.max():.2f} kW")

# three times the request: the ensemble runs out of flexibility
hard = scale_signal(synth_signal(1, duration=1800), ens.total_rated_power, 0.6)
traj2 = simulate_tracking(ens, hard, base)
print("at 60% of rating the run fails at step", traj2.failure_step)

data = build_dataset([traj, traj2], ens)
print("dataset", data.data.shape, "->", data.layout())

p_minus, p_plus = power_limits(ens, 1800, tol=2.0, baseline=base)
print(f"sustained for 30 min: {p_minus:+.0f} .. {p_plus:+.0f} kW around baseline")
on_fraction = np.mean(traj.powers > 0)
print(f"average on fraction while tracking: {on_fraction:.2f}")
