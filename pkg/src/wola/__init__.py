"""Byzantine-robust federated learning under label skew, with label-aligned loss weights."""

__version__ = "0.1.0"
