"""Nanosatellite EPS fault simulation and residual-based fault diagnosis."""

from .eps_plant import EPS_CLASSES, PV_CLASSES, FaultKind, PlantConfig, simulate
from .env_orbit import OrbitConfig

__all__ = ["EPS_CLASSES", "PV_CLASSES", "FaultKind", "OrbitConfig", "PlantConfig", "simulate"]
