"""Compress the ensemble state to one number, then reuse the model for a bigger ensemble.

The code of a linear autoencoder with a one-unit bottleneck is the battery
state. Growing the ensemble from 20 to 23 devices widens only the input and
output layers, so the trained model is a warm start.
"""
from vbident.ensemble import baseline_power, build_dataset, grow_ensemble, make_ensemble, simulate_signals
from vbident.net2net import transfer
from vbident.sae import build_sae, encode, pca_floor, train_sae
from vbident.signals import scale_signal, synth_signal


def rows(ensemble, seeds):
    base = baseline_power(ensemble, 3600)
    sigs = [scale_signal(synth_signal(s, duration=1800), ensemble.total_rated_power) for s in seeds]
    return build_dataset(simulate_signals(ensemble, sigs, base), ensemble).data


small = make_ensemble("ac", 20, seed=0)
large = grow_ensemble(small, 23, seed=1000)
X20, X23 = rows(small, range(4)), rows(large, range(4))
target = 1.05 * max(pca_floor(X20), pca_floor(X23))
print(f"{X20.shape[0]} rows, rank-1 floor {pca_floor(X20):.4f}, target loss {target:.4f}")

sae, hist = train_sae(build_sae(X20.shape[1], seed=0), X20, epochs=100, lr=0.5, target_loss=target)
print(f"20-device autoencoder reached the target after {len(hist)} epochs")
codes = encode(sae, X20)
print(f"battery state range {codes.min():.2f} .. {codes.max():.2f}")

warm, report = transfer(sae, X23.shape[1], seed=0)
print("transfer:", {k: report[k] for k in ("pretrained_parameters", "untrained_parameters")})
hidden = [layer.n_out for layer in sae.layers[:sae.meta["code_layer"]]]
_, h_warm = train_sae(warm, X23, epochs=100, lr=0.5, target_loss=target, checks_per_epoch=10)
_, h_cold = train_sae(build_sae(X23.shape[1], hidden=hidden, seed=7), X23, epochs=100, lr=0.5,
                      target_loss=target, checks_per_epoch=10)
print(f"epochs to target on 23 devices: transferred {len(h_warm) / 10:.1f}, from scratch {len(h_cold) / 10:.1f}")
