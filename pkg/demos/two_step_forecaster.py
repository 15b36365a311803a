"""Teacher forcing, then training on the model's own rollouts.

A small conv + LSTM model learns x_{t+1} from the last few states and
regulation values of a noisy first-order system. Free-running error is
compared before and after the second step.
"""
import numpy as np

from vbident import forecaster as fc
from vbident.signals import synth_signal


def system(seed, n, noise=0.01):
    rng = np.random.default_rng(seed)
    u = synth_signal(seed, duration=n, bandwidth=1 / 40).samples
    x = np.zeros(n)
    for t in range(n - 1):
        x[t + 1] = 0.9 * x[t] - 0.1 * u[t] + noise * rng.standard_normal()
    return x, u


x, u = system(0, 2000)
x_test, u_test = system(50, 501)
d = 4
model = fc.build_forecaster(d, seed=0)
fc.fit_normalization(model, x, u)
data = fc.make_supervised(x, u, d)

fc.train_stage1(model, data.X, data.Y, epochs=5, seed=0)
print(f"after stage 1: closed-loop RMSE {fc.closed_loop_rmse(model, x_test, u_test):.4f}")

gamma, beta = fc.closed_loop_rollout(model, data.X, data.Y)
print("first d rollout outputs equal the truth:", np.array_equal(beta[:d], data.Y[:d]))
fc.train_stage2(model, gamma, data.Y, epochs=5, seed=0, X=data.X)
print(f"after stage 2: closed-loop RMSE {fc.closed_loop_rmse(model, x_test, u_test):.4f}")

ahead = fc.forecast(model, x_test[96:101], u_test[100:110], 10, u_history=u_test[96:100])
print("10-step forecast  ", np.round(ahead, 3))
print("what actually came", np.round(x_test[101:111], 3))
