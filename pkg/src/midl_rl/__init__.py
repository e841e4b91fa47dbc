"""Model-based offline reinforcement learning with an adaptive, model-error
weighted conservative penalty, plus exact tabular checks of its guarantees."""

__version__ = "0.1.0"
