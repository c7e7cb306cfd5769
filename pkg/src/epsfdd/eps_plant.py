"""Nanosatellite EPS plant with injectable component faults.

Power path: PV array -> MPPT converter -> battery/charge bus -> regulator
-> load bus. The load bus carries a resistive base load and, in sunlight,
a payload that is granted a fixed share of the converter output left after
any battery-side leakage. The battery is an ideal coulomb reservoir with a
linear open-circuit voltage.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .env_orbit import EnvSample, OrbitConfig, generate_profile
from .errors import ConfigError, DataError

IV_EXPONENT = 12
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class FaultKind(str, enum.Enum):
    Healthy = "Healthy"
    PvOpenCircuit = "PvOpenCircuit"
    PvLineLine = "PvLineLine"
    MpptIgbtOpen = "MpptIgbtOpen"
    RegIgbtOpen = "RegIgbtOpen"
    RegIgbtShort = "RegIgbtShort"
    BatteryGround = "BatteryGround"

    @classmethod
    def parse(cls, tag: str) -> "FaultKind":
        try:
            return cls(tag)
        except ValueError:
            valid = ", ".join(f.value for f in cls)
            raise ConfigError("fault", f"unknown fault tag {tag!r}; valid tags: {valid}") from None


PV_CLASSES = (FaultKind.Healthy, FaultKind.PvLineLine, FaultKind.PvOpenCircuit)
EPS_CLASSES = (
    FaultKind.Healthy,
    FaultKind.BatteryGround,
    FaultKind.MpptIgbtOpen,
    FaultKind.RegIgbtOpen,
    FaultKind.RegIgbtShort,
)
ALL_FAULTS = tuple(FaultKind)


@dataclass(frozen=True)
class PlantConfig:
    n_series: int = 12
    n_parallel: int = 4
    i_sc_ref_a: float = 0.16
    v_oc_ref_v: float = 7.2
    alpha_i_per_c: float = 8.0e-5
    beta_v_per_c: float = -0.0264
    g_ref_w_m2: float = 1361.0
    converter_efficiency: float = 0.9
    regulator_setpoint_v: float = 3.3
    battery_capacity_ah: float = 3.0
    soc_init: float = 0.9
    load_resistance_ohm: float = 16.0
    ground_fault_leak_a: float = 0.2
    lineline_shorted_cells: int = 2
    igbt_open_residual_gain: float = 0.25
    # (v_pv, i_pv, i_load) sensor sigmas; None selects 1 % of healthy full scale
    measurement_noise_sigma: tuple[float, float, float] | None = None
    payload_share: float = 0.15
    battery_ocv_slope_v: float = 2.4
    battery_ocv_offset_v: float = 6.0
    battery_current_noise_sigma: float = 0.005
    battery_voltage_noise_sigma: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if int(self.n_series) != self.n_series or self.n_series < 1:
            raise ConfigError("n_series", "must be an integer >= 1")
        if int(self.n_parallel) != self.n_parallel or self.n_parallel < 1:
            raise ConfigError("n_parallel", "must be an integer >= 1")
        positive = (
            "i_sc_ref_a",
            "v_oc_ref_v",
            "g_ref_w_m2",
            "regulator_setpoint_v",
            "battery_capacity_ah",
            "load_resistance_ohm",
            "battery_ocv_slope_v",
        )
        for name in positive:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be > 0, got {value!r}")
        if not math.isfinite(self.alpha_i_per_c):
            raise ConfigError("alpha_i_per_c", "must be finite")
        if not (math.isfinite(self.beta_v_per_c) and self.beta_v_per_c <= 0):
            raise ConfigError("beta_v_per_c", "must be <= 0")
        if not (0.0 < self.converter_efficiency <= 1.0):
            raise ConfigError("converter_efficiency", "must lie in (0, 1]")
        if not (0.0 <= self.soc_init <= 1.0):
            raise ConfigError("soc_init", "must lie in [0, 1]")
        if not (self.ground_fault_leak_a >= 0):
            raise ConfigError("ground_fault_leak_a", "must be >= 0")
        if int(self.lineline_shorted_cells) != self.lineline_shorted_cells or not (
            1 <= self.lineline_shorted_cells < self.n_series
        ):
            raise ConfigError("lineline_shorted_cells", "must be an integer in [1, n_series)")
        if not (0.0 <= self.igbt_open_residual_gain < 1.0):
            raise ConfigError("igbt_open_residual_gain", "must lie in [0, 1)")
        if self.measurement_noise_sigma is not None:
            sig = tuple(self.measurement_noise_sigma)
            if len(sig) != 3 or any(not (math.isfinite(s) and s >= 0) for s in sig):
                raise ConfigError("measurement_noise_sigma", "needs three finite values >= 0")
        if not (0.0 <= self.payload_share < 1.0):
            raise ConfigError("payload_share", "must lie in [0, 1)")
        for name in ("battery_current_noise_sigma", "battery_voltage_noise_sigma"):
            if not getattr(self, name) >= 0:
                raise ConfigError(name, "must be >= 0")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", "must be an unsigned integer")

    def ocv(self, soc: float) -> float:
        return self.battery_ocv_slope_v * soc + self.battery_ocv_offset_v

    def noise_sigmas(self) -> tuple[float, float, float]:
        if self.measurement_noise_sigma is not None:
            return tuple(float(s) for s in self.measurement_noise_sigma)
        return tuple(0.01 * fs for fs in healthy_full_scale(self))

    def noiseless(self) -> "PlantConfig":
        return replace(
            self,
            measurement_noise_sigma=(0.0, 0.0, 0.0),
            battery_current_noise_sigma=0.0,
            battery_voltage_noise_sigma=0.0,
        )


@dataclass(frozen=True)
class TelemetrySample:
    env: EnvSample
    v_pv_v: float
    i_pv_a: float
    i_load_a: float
    soc_true: float
    fault: FaultKind
    i_batt_a: float = 0.0  # battery current sensor, charging positive
    v_batt_v: float = 0.0  # battery terminal voltage sensor
    v_bus_v: float = 0.0  # load bus voltage, noise-free


# --------------------------------------------------------------------------
# PV array
# --------------------------------------------------------------------------


def _string_params(g: float, temp_c: float, config: PlantConfig) -> tuple[float, float]:
    i_sc = (g / config.g_ref_w_m2) * (config.i_sc_ref_a + config.alpha_i_per_c * (temp_c - 25.0))
    v_oc = config.v_oc_ref_v + config.beta_v_per_c * (temp_c - 25.0)
    return max(i_sc, 0.0), max(v_oc, 0.0)


def _strings(env: EnvSample, config: PlantConfig, fault: FaultKind) -> list[tuple[float, float, int]]:
    """(i_sc, v_oc, count) groups of identical strings in the array."""
    i_sc, v_oc = _string_params(env.irradiance_w_m2, env.panel_temp_c, config)
    n = config.n_parallel
    if fault is FaultKind.PvOpenCircuit:
        return [(i_sc, v_oc, n - 1)]
    if fault is FaultKind.PvLineLine:
        ratio = (config.n_series - config.lineline_shorted_cells) / config.n_series
        return [(i_sc, v_oc, n - 1), (i_sc, v_oc * ratio, 1)]
    return [(i_sc, v_oc, n)]


def array_current(v: float, groups: Sequence[tuple[float, float, int]]) -> float:
    total = 0.0
    for i_sc, v_oc, count in groups:
        if count and v_oc > 0 and v < v_oc:
            total += count * i_sc * (1.0 - (max(v, 0.0) / v_oc) ** IV_EXPONENT)
    return total


def _golden_max(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def pv_operating_point(env: EnvSample, config: PlantConfig, fault: FaultKind) -> tuple[float, float]:
    """Maximum power point (V, I) of the array under ``fault``.

    Array power is concave between consecutive string open-circuit voltages,
    so a golden-section search per segment finds the global maximum.
    """
    if env.irradiance_w_m2 <= 0:
        return 0.0, 0.0
    groups = [g for g in _strings(env, config, fault) if g[2] > 0 and g[1] > 0 and g[0] > 0]
    if not groups:
        return 0.0, 0.0
    edges = sorted({0.0, *(g[1] for g in groups)})
    v_max = edges[-1]
    tol = 1e-10 * v_max

    def power(v: float) -> float:
        return v * array_current(v, groups)

    best_v, best_p = 0.0, 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        v = _golden_max(power, lo, hi, tol)
        p = power(v)
        if p > best_p:
            best_v, best_p = v, p
    return best_v, array_current(best_v, groups)


# --------------------------------------------------------------------------
# Power flow
# --------------------------------------------------------------------------


def healthy_full_scale(config: PlantConfig) -> tuple[float, float, float]:
    """Noise-free healthy (v_pv, i_pv, i_load) at reference irradiance and 25 C."""
    env = EnvSample(0.0, config.g_ref_w_m2, 25.0)
    v, i = pv_operating_point(env, config, FaultKind.Healthy)
    p_conv = config.converter_efficiency * v * i
    p_load = config.regulator_setpoint_v**2 / config.load_resistance_ohm + config.payload_share * p_conv
    return v, i, p_load / config.regulator_setpoint_v


@dataclass(frozen=True)
class _FlowResult:
    v_pv: float
    i_pv: float
    i_load: float
    v_bus: float
    i_batt: float
    soc: float


def _power_flow(soc: float, env: EnvSample, config: PlantConfig, fault: FaultKind, dt_s: float) -> _FlowResult:
    v_pv, i_pv = pv_operating_point(env, config, fault)
    gain = config.igbt_open_residual_gain

    p_conv = config.converter_efficiency * v_pv * i_pv
    if fault is FaultKind.MpptIgbtOpen:
        p_conv *= gain

    v_batt = config.ocv(soc)
    p_leak = config.ground_fault_leak_a * v_batt if fault is FaultKind.BatteryGround else 0.0
    p_payload = config.payload_share * max(p_conv - p_leak, 0.0)

    if fault is FaultKind.RegIgbtShort:
        v_target = v_pv
        p_load = v_pv**2 / config.load_resistance_ohm + (p_payload if v_pv > 0 else 0.0)
    else:
        v_target = config.regulator_setpoint_v
        p_load = v_target**2 / config.load_resistance_ohm + p_payload
        if fault is FaultKind.RegIgbtOpen:
            p_load *= gain
            v_target *= math.sqrt(gain)

    # battery limits for this step, expressed as power at the terminal
    q_step = 3600.0 * config.battery_capacity_ah / dt_s  # A that moves SOC by 1 in one step
    p_dis_max = soc * q_step * v_batt
    p_chg_max = (1.0 - soc) * q_step * v_batt

    p_net = p_conv - p_load - p_leak
    if p_net < -p_dis_max:
        # battery runs dry within the step: leak first, load gets the remainder
        supply = p_conv + p_dis_max
        p_leak = min(p_leak, supply)
        p_load_actual = supply - p_leak
        p_net = -p_dis_max
    else:
        p_load_actual = p_load
        p_net = min(p_net, p_chg_max)  # surplus above full charge is shunted

    if p_load > 0 and v_target > 0:
        r_eff = v_target**2 / p_load
        v_bus = math.sqrt(max(p_load_actual, 0.0) * r_eff)
        i_load = v_bus / r_eff
    else:
        v_bus, i_load = v_target, 0.0

    i_batt = p_net / v_batt if v_batt > 0 else 0.0
    new_soc = soc + i_batt * dt_s / (3600.0 * config.battery_capacity_ah)
    new_soc = min(max(new_soc, 0.0), 1.0)
    return _FlowResult(v_pv, i_pv, i_load, v_bus, i_batt, new_soc)


def _noisy(value: float, sigma: float, z: float) -> float:
    return max(value + sigma * z, 0.0)


def step(
    prev: TelemetrySample | float,
    env: EnvSample,
    config: PlantConfig,
    fault: FaultKind,
    dt_s: float,
    noise: np.ndarray | None = None,
) -> TelemetrySample:
    """Advance the plant one step from ``prev`` (a sample or an initial SOC).

    ``noise`` holds five standard-normal draws for the (v_pv, i_pv, i_load,
    i_batt, v_batt) sensors; None means noise-free readings.
    """
    if not dt_s > 0:
        raise ConfigError("dt_s", f"must be > 0, got {dt_s!r}")
    soc = prev if isinstance(prev, (int, float)) else prev.soc_true
    flow = _power_flow(float(soc), env, config, fault, dt_s)

    z = np.zeros(5) if noise is None else noise
    s_v, s_i, s_l = config.noise_sigmas()
    return TelemetrySample(
        env=env,
        v_pv_v=_noisy(flow.v_pv, s_v, z[0]),
        i_pv_a=_noisy(flow.i_pv, s_i, z[1]),
        i_load_a=_noisy(flow.i_load, s_l, z[2]),
        soc_true=flow.soc,
        fault=fault,
        i_batt_a=flow.i_batt + config.battery_current_noise_sigma * z[3],
        v_batt_v=config.ocv(flow.soc) + config.battery_voltage_noise_sigma * z[4],
        v_bus_v=flow.v_bus,
    )


def true_battery_currents(
    env: Sequence[EnvSample], config: PlantConfig, fault: FaultKind, dt_s: float
) -> np.ndarray:
    """Noise-free battery current per step, used to check SOC bookkeeping."""
    soc = config.soc_init
    out = np.empty(len(env))
    for k, e in enumerate(env):
        flow = _power_flow(soc, e, config, fault, dt_s)
        out[k] = flow.i_batt
        soc = flow.soc
    return out


def simulate(
    orbit: OrbitConfig, plant: PlantConfig, fault: FaultKind, n_samples: int, dt_s: float
) -> list[TelemetrySample]:
    orbit.validate()
    plant.validate()
    env = generate_profile(orbit, n_samples, dt_s)
    fault = FaultKind(fault)
    seq = np.random.SeedSequence([int(plant.seed), ALL_FAULTS.index(fault)])
    z = np.random.default_rng(seq).standard_normal((n_samples, 5))
    out = []
    prev: TelemetrySample | float = plant.soc_init
    for k, e in enumerate(env):
        prev = step(prev, e, plant, fault, dt_s, z[k])
        out.append(prev)
    return out


# --------------------------------------------------------------------------
# Reliability
# --------------------------------------------------------------------------

# Failure rates at 40 C in units of 1e-9 per hour. Entries printed as "10--9"
# in the source table are ambiguous and stored as 10.
FAULT_RATE_TABLE_1E9 = {
    "Transistor": 10.0,
    "Trustor (power switch family)": 10.0,
    "Digital integrated circuit": 30.0,
    "Logical elements": 30.0,
    "Analog switches": 2000.0,
    "Amplifier": 10.0,
    "Diode": 10.0,
    "Battery Li-Ion": 10.0,
    "Solar array": 10.0,
}
AMBIGUOUS_RATE_ENTRIES = frozenset(k for k, v in FAULT_RATE_TABLE_1E9.items() if v == 10.0)


def fault_rate(n_faulty: int, n_total: int, hours: float) -> float:
    """Failures per component-hour: n_faulty / (n_total * hours)."""
    if n_total < 1 or not hours > 0:
        raise ZeroDivisionError("fault rate needs n_total >= 1 and hours > 0")
    if not (0 <= n_faulty <= n_total):
        raise ValueError("n_faulty must lie in [0, n_total]")
    return n_faulty / (n_total * hours)


def component_fault_rate(name: str) -> float:
    """Tabulated failure rate of a component, per hour."""
    return FAULT_RATE_TABLE_1E9[name] * 1e-9


# --------------------------------------------------------------------------
# Telemetry CSV
# --------------------------------------------------------------------------

TELEMETRY_HEADER = (
    "t_s",
    "irradiance_w_m2",
    "panel_temp_c",
    "v_pv_v",
    "i_pv_a",
    "i_load_a",
    "soc_true",
    "fault",
    "i_batt_a",
    "v_batt_v",
    "v_bus_v",
)


def write_telemetry_csv(path: str | Path, samples: Iterable[TelemetrySample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TELEMETRY_HEADER)
        for s in samples:
            writer.writerow(
                [
                    repr(float(s.env.t_s)),
                    repr(float(s.env.irradiance_w_m2)),
                    repr(float(s.env.panel_temp_c)),
                    repr(float(s.v_pv_v)),
                    repr(float(s.i_pv_a)),
                    repr(float(s.i_load_a)),
                    repr(float(s.soc_true)),
                    s.fault.value,
                    repr(float(s.i_batt_a)),
                    repr(float(s.v_batt_v)),
                    repr(float(s.v_bus_v)),
                ]
            )


def read_telemetry_csv(path: str | Path) -> list[TelemetrySample]:
    """Parse a telemetry CSV; malformed rows raise DataError with the line number."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:8]) != TELEMETRY_HEADER[:8]:
            raise DataError(f"{path}: line 1: unexpected header {header!r}")
        n_cols = len(header)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols:
                raise DataError(f"{path}: line {lineno}: expected {n_cols} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row[:7]]
                fault = FaultKind(row[7])
                extra = [float(x) for x in row[8:11]]
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from None
            if not all(math.isfinite(v) for v in vals + extra):
                raise DataError(f"{path}: line {lineno}: non-finite value")
            extra += [0.0] * (3 - len(extra))
            out.append(
                TelemetrySample(
                    env=EnvSample(vals[0], vals[1], vals[2]),
                    v_pv_v=vals[3],
                    i_pv_a=vals[4],
                    i_load_a=vals[5],
                    soc_true=vals[6],
                    fault=fault,
                    i_batt_a=extra[0],
                    v_batt_v=extra[1],
                    v_bus_v=extra[2],
                )
            )
    return out


def telemetry_arrays(samples: Sequence[TelemetrySample]) -> dict[str, np.ndarray]:
    return {
        "t_s": np.array([s.env.t_s for s in samples]),
        "irradiance_w_m2": np.array([s.env.irradiance_w_m2 for s in samples]),
        "panel_temp_c": np.array([s.env.panel_temp_c for s in samples]),
        "v_pv_v": np.array([s.v_pv_v for s in samples]),
        "i_pv_a": np.array([s.i_pv_a for s in samples]),
        "i_load_a": np.array([s.i_load_a for s in samples]),
        "soc_true": np.array([s.soc_true for s in samples]),
        "i_batt_a": np.array([s.i_batt_a for s in samples]),
        "v_batt_v": np.array([s.v_batt_v for s in samples]),
        "v_bus_v": np.array([s.v_bus_v for s in samples]),
    }
