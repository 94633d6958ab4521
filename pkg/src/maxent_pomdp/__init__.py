"""State entropy maximisation in finite-horizon tabular POMDPs."""

__version__ = "0.1.0"
