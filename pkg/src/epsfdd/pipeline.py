"""End-to-end pipeline stages shared by the CLI and the acceptance suite."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from .classify import LabeledDataset
from .config import ResolvedConfig
from .eps_plant import ALL_FAULTS, EPS_CLASSES, PV_CLASSES, FaultKind, TelemetrySample, simulate, telemetry_arrays
from .errors import CompletenessError
from .features import eps_feature_matrix, load_soc_features, pv_residuals
from .sysid import ModelBank, bank_inputs_targets, build_model_bank

Telemetry = Mapping[FaultKind, Sequence[TelemetrySample]]

TASKS = ("eps", "pv", "load_soc")
EPS_FEATURE_NAMES = ("r0_healthy", "r1_battery_ground", "r2_mppt_igbt_open", "r3_reg_igbt_open", "r4_reg_igbt_short")


def simulate_all(cfg: ResolvedConfig, faults: Sequence[FaultKind] = ALL_FAULTS) -> dict[FaultKind, list[TelemetrySample]]:
    return {f: simulate(cfg.orbit, cfg.plant, f, cfg.run.n_samples, cfg.run.dt_s) for f in faults}


def _require(telemetry: Telemetry, classes: Sequence[FaultKind]) -> None:
    for f in classes:
        if f not in telemetry:
            raise CompletenessError(f"missing telemetry for fault {f.value}")


def train_bank(cfg: ResolvedConfig, telemetry: Telemetry) -> ModelBank:
    _require(telemetry, ALL_FAULTS)
    return build_model_bank({f: bank_inputs_targets(list(s)) for f, s in telemetry.items()}, cfg.train)


def eps_dataset(telemetry: Telemetry, bank: ModelBank, with_moment: bool) -> LabeledDataset:
    """Residual features for the five EPS classes, one row per sample."""
    _require(telemetry, EPS_CLASSES)
    blocks, labels = [], []
    for i, f in enumerate(EPS_CLASSES):
        blocks.append(eps_feature_matrix(telemetry[f], bank, with_moment))
        labels.append(np.full(len(telemetry[f]), i))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), EPS_CLASSES)


def eps_feature_names(with_moment: bool) -> list[str]:
    return list(EPS_FEATURE_NAMES) + (["m1_running_mean_i_load"] if with_moment else [])


def pv_dataset(telemetry: Telemetry, bank: ModelBank) -> LabeledDataset:
    """PV residual pairs for sunlit samples; in eclipse every class reads (0, 0)."""
    _require(telemetry, PV_CLASSES)
    blocks, labels = [], []
    for i, f in enumerate(PV_CLASSES):
        sun = telemetry_arrays(telemetry[f])["irradiance_w_m2"] > 0
        blocks.append(pv_residuals(telemetry[f], bank.healthy_pv)[sun])
        labels.append(np.full(int(sun.sum()), i))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), PV_CLASSES)


def load_soc_dataset(cfg: ResolvedConfig, telemetry: Telemetry) -> LabeledDataset:
    """(i_load, SOC) pairs for the five EPS classes."""
    _require(telemetry, EPS_CLASSES)
    blocks, labels = [], []
    for i, f in enumerate(EPS_CLASSES):
        blocks.append(
            load_soc_features(telemetry[f], cfg.plant.battery_capacity_ah, cfg.kalman, cfg.run.dt_s, cfg.run.true_soc)
        )
        labels.append(np.full(len(telemetry[f]), i))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), EPS_CLASSES)
