"""Permissioned ledger for reverse-logistics traceability of mobile phones."""

__version__ = "0.1.0"
