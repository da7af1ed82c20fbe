"""Discrete-event simulator for operator migration in stream processing."""

__version__ = "0.1.0"
