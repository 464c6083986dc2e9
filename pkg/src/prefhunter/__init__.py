"""Attacker preference inference from system audit logs."""

__version__ = "0.1.0"
