"""Order-flow modelling toolkit: featurization, tokenization, a limit order book simulator,
stochastic baselines, a toy autoregressive model, closed-loop rollouts and evaluation."""

__version__ = "0.1.0"
