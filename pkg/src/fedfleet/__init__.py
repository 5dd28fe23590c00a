"""Federated learning and analytics coordinator for a simulated device fleet."""

__version__ = "0.1.0"
