"""LTE-LAA / Wi-Fi coexistence simulation and misbehavior detection."""

__version__ = "0.1.0"
