"""Resilient-dispatch toolkit: DC sensitivities, saturated cut-set screening,
swing-equation simulation, transfer-capability learning, and security- and
stability-constrained redispatch, behind a JSON service and CLI."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
