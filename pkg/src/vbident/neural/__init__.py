from .functional import (
    conv1d_forward,
    conv1d_output_length,
    dense_forward,
    lstm_step,
    pool_forward,
    pool_output_length,
)
from .layers import LSTM, Conv1D, Dense, MaxPool1D
from .network import Network, dense_stack, grad_check, lipschitz_estimate, sgd_step, train

__all__ = [
    "LSTM",
    "Conv1D",
    "Dense",
    "MaxPool1D",
    "Network",
    "conv1d_forward",
    "conv1d_output_length",
    "dense_forward",
    "dense_stack",
    "grad_check",
    "lipschitz_estimate",
    "lstm_step",
    "pool_forward",
    "pool_output_length",
    "sgd_step",
    "train",
]
