"""Synthesis of asset-level, monthly emissions inventories from heterogeneous inputs."""

from .model import (
    Asset,
    ConfidenceLevel,
    EmissionRecord,
    Gas,
    GwpTable,
    Period,
    Provenance,
    Subsector,
    compute_activity,
    compute_emissions,
    decompose_emissions,
    to_co2e,
)

__version__ = "0.1.0"

__all__ = [
    "Asset",
    "ConfidenceLevel",
    "EmissionRecord",
    "Gas",
    "GwpTable",
    "Period",
    "Provenance",
    "Subsector",
    "compute_activity",
    "compute_emissions",
    "decompose_emissions",
    "to_co2e",
]
