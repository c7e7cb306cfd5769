"""Diagnosis features: residual banks, running moment and Kalman SOC.

A residual is measured output minus model prediction. Against a bank of
per-mode models, the residual closest to zero points at the active mode.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .eps_plant import FaultKind, TelemetrySample, telemetry_arrays
from .errors import ConfigError, DataError, LabelError, ShapeError
from .sysid import ModelBank, MlpRegressor, predict

N_EPS_RESIDUALS = 5


@dataclass(frozen=True)
class SocKalmanConfig:
    """Scalar filter on SOC; the measurement is the battery terminal voltage."""

    process_noise_q: float = 1e-7
    measurement_noise_r: float = 1e-4
    ocv_slope_v_per_soc: float = 2.4
    ocv_offset_v: float = 6.0
    soc_init_estimate: float = 0.9
    p_init: float = 0.01

    def validate(self) -> None:
        if not (math.isfinite(self.process_noise_q) and self.process_noise_q >= 0):
            raise ConfigError("process_noise_q", "must be >= 0")
        if not (math.isfinite(self.measurement_noise_r) and self.measurement_noise_r > 0):
            raise ConfigError("measurement_noise_r", f"must be > 0, got {self.measurement_noise_r!r}")
        if not self.ocv_slope_v_per_soc > 0:
            raise ConfigError("ocv_slope_v_per_soc", "must be > 0")
        if not math.isfinite(self.ocv_offset_v):
            raise ConfigError("ocv_offset_v", "must be finite")
        if not 0.0 <= self.soc_init_estimate <= 1.0:
            raise ConfigError("soc_init_estimate", "must lie in [0, 1]")
        if not (math.isfinite(self.p_init) and self.p_init >= 0):
            raise ConfigError("p_init", "must be >= 0")


@dataclass
class KalmanTrace:
    soc: np.ndarray
    gain: np.ndarray
    covariance: np.ndarray


def _env_inputs(a: dict[str, np.ndarray]) -> np.ndarray:
    return np.column_stack([a["irradiance_w_m2"], a["panel_temp_c"]])


def eps_residuals(telemetry: Sequence[TelemetrySample], bank: ModelBank) -> np.ndarray:
    """Residuals of i_load against the five EPS models, shape N x 5."""
    models = bank.eps_models()
    if len(models) != N_EPS_RESIDUALS:
        raise ShapeError(f"bank must hold {N_EPS_RESIDUALS} EPS models, has {len(models)}")
    a = telemetry_arrays(telemetry)
    x = _env_inputs(a)
    cols = []
    for m in models:
        if m.n_in != 2 or m.n_out != 1:
            raise ShapeError(f"EPS models map 2 inputs to 1 output, got {m.n_in} -> {m.n_out}")
        cols.append(a["i_load_a"] - predict(m, x)[:, 0])
    return np.column_stack(cols)


def pv_residuals(telemetry: Sequence[TelemetrySample], pv_model: MlpRegressor) -> np.ndarray:
    """(V_pv - V_hat, I_pv - I_hat) against the healthy PV model, shape N x 2."""
    if pv_model.n_in != 2 or pv_model.n_out != 2:
        raise ShapeError(f"PV model maps 2 inputs to 2 outputs, got {pv_model.n_in} -> {pv_model.n_out}")
    a = telemetry_arrays(telemetry)
    y_hat = predict(pv_model, _env_inputs(a))
    return np.column_stack([a["v_pv_v"], a["i_pv_a"]]) - y_hat


def running_moment(i_load: Sequence[float]) -> np.ndarray:
    """Causal cumulative mean of the load current."""
    x = np.asarray(i_load, dtype=float)
    if x.size == 0:
        raise DataError("running_moment needs a nonempty sequence")
    return np.cumsum(x) / np.arange(1, x.size + 1)


def soc_kalman_trace(
    i_batt_a: Sequence[float],
    v_batt_v: Sequence[float],
    battery_capacity_ah: float,
    config: SocKalmanConfig,
    dt_s: float,
) -> KalmanTrace:
    """Coulomb-counting predict, OCV update. Returns estimates, gains and P."""
    config.validate()
    if not battery_capacity_ah > 0:
        raise ConfigError("battery_capacity_ah", "must be > 0")
    if not dt_s > 0:
        raise ConfigError("dt_s", "must be > 0")
    i = np.asarray(i_batt_a, dtype=float)
    z = np.asarray(v_batt_v, dtype=float)
    if i.shape != z.shape:
        raise ShapeError("current and voltage sequences differ in length")

    slope, offset = config.ocv_slope_v_per_soc, config.ocv_offset_v
    r, q = config.measurement_noise_r, config.process_noise_q
    scale = dt_s / (3600.0 * battery_capacity_ah)
    soc, p = config.soc_init_estimate, config.p_init
    out, gains, covs = np.empty(i.size), np.empty(i.size), np.empty(i.size)
    for k in range(i.size):
        soc_prior = soc + i[k] * scale
        p_prior = p + q
        gain = p_prior * slope / (slope * slope * p_prior + r)
        soc = soc_prior + gain * (z[k] - (slope * soc_prior + offset))
        p = (1.0 - gain * slope) * p_prior
        soc = min(max(soc, 0.0), 1.0)
        out[k], gains[k], covs[k] = soc, gain, p
    return KalmanTrace(out, gains, covs)


def soc_kalman(
    telemetry: Sequence[TelemetrySample],
    battery_capacity_ah: float,
    config: SocKalmanConfig,
    dt_s: float,
) -> np.ndarray:
    """SOC estimates from the battery current and voltage sensors."""
    a = telemetry_arrays(telemetry)
    return soc_kalman_trace(a["i_batt_a"], a["v_batt_v"], battery_capacity_ah, config, dt_s).soc


def feature_vector(residuals: Sequence[float], moment: float | None = None) -> np.ndarray:
    r = np.asarray(residuals, dtype=float)
    if r.shape != (N_EPS_RESIDUALS,):
        raise ShapeError(f"expected {N_EPS_RESIDUALS} residuals, got shape {r.shape}")
    return r.copy() if moment is None else np.append(r, float(moment))


def eps_feature_matrix(
    telemetry: Sequence[TelemetrySample], bank: ModelBank, with_moment: bool
) -> np.ndarray:
    """Row-wise feature vectors for one run; the moment restarts with each run."""
    res = eps_residuals(telemetry, bank)
    if not with_moment:
        return res
    m1 = running_moment(telemetry_arrays(telemetry)["i_load_a"])
    return np.column_stack([res, m1])


def load_soc_features(
    telemetry: Sequence[TelemetrySample],
    battery_capacity_ah: float,
    config: SocKalmanConfig,
    dt_s: float,
    true_soc: bool = False,
) -> np.ndarray:
    """(i_load, SOC) pairs; SOC is the Kalman estimate unless ``true_soc``."""
    a = telemetry_arrays(telemetry)
    soc = a["soc_true"] if true_soc else soc_kalman(telemetry, battery_capacity_ah, config, dt_s)
    return np.column_stack([a["i_load_a"], soc])


# --------------------------------------------------------------------------
# Feature CSV
# --------------------------------------------------------------------------


def feature_header(n_features: int) -> list[str]:
    return ["label"] + [f"f{j}" for j in range(n_features)]


def write_feature_csv(
    path: str | Path,
    features: np.ndarray,
    labels: Sequence[FaultKind],
    feature_names: Sequence[str],
    provenance: dict[str, str],
) -> Path:
    """Write ``label,f0..fK`` rows plus a ``.meta.txt`` sidecar; returns the sidecar path."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise ShapeError("features must be N x K with one label per row")
    if len(feature_names) != x.shape[1]:
        raise ShapeError("one name per feature column is required")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(feature_header(x.shape[1]))
        for lab, row in zip(labels, x):
            w.writerow([FaultKind(lab).value] + [repr(float(v)) for v in row])
    sidecar = path.with_suffix(path.suffix + ".meta.txt")
    lines = [f"f{j} = {name}" for j, name in enumerate(feature_names)]
    lines += [f"{k} = {v}" for k, v in sorted(provenance.items())]
    lines.append(f"sha256 = {hashlib.sha256(path.read_bytes()).hexdigest()}")
    sidecar.write_text("\n".join(lines) + "\n")
    return sidecar


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, list[FaultKind]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["label"]:
        raise DataError(f"{path}: missing 'label,f0,...' header")
    width = len(rows[0]) - 1
    if rows[0] != feature_header(width):
        raise DataError(f"{path}: malformed header {rows[0]!r}")
    labels, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width + 1:
            raise DataError(f"{path}:{lineno}: expected {width + 1} fields, got {len(row)}")
        try:
            labels.append(FaultKind(row[0]))
        except ValueError:
            raise LabelError(f"{path}:{lineno}: unknown label {row[0]!r}") from None
        try:
            vals = [float(v) for v in row[1:]]
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}:{lineno}: non-finite feature")
        data.append(vals)
    return np.array(data, dtype=float).reshape(len(data), width), labels
