"""LEO environment profiles: sunlit/eclipse irradiance and panel temperature.

Irradiance is a square wave at the solar constant. Each orbit starts in
sunlight and the last ``eclipse_fraction`` of the period is dark. Panel
temperature relaxes exponentially toward a sunlit or an eclipse
equilibrium.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError

PROFILE_HEADER = ("t_s", "irradiance_w_m2", "panel_temp_c")


@dataclass(frozen=True)
class OrbitConfig:
    orbit_period_s: float = 5400.0
    eclipse_fraction: float = 0.35
    solar_constant_w_m2: float = 1361.0
    temp_sunlit_c: float = 60.0
    temp_eclipse_c: float = -20.0
    thermal_time_constant_s: float = 600.0
    irradiance_noise_sigma: float = 5.0
    seed: int = 0

    def validate(self) -> None:
        for name in ("orbit_period_s", "solar_constant_w_m2", "thermal_time_constant_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(name, f"must be > 0, got {value!r}")
        if not (0.0 <= self.eclipse_fraction <= 0.5):
            raise ConfigError("eclipse_fraction", f"must lie in [0, 0.5], got {self.eclipse_fraction!r}")
        if not (math.isfinite(self.irradiance_noise_sigma) and self.irradiance_noise_sigma >= 0):
            raise ConfigError("irradiance_noise_sigma", "must be >= 0")
        for name in ("temp_sunlit_c", "temp_eclipse_c"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(name, "must be finite")
        if int(self.seed) != self.seed or self.seed < 0:
            raise ConfigError("seed", f"must be an unsigned integer, got {self.seed!r}")


@dataclass(frozen=True)
class EnvSample:
    t_s: float
    irradiance_w_m2: float
    panel_temp_c: float


def in_eclipse(t_s: float, config: OrbitConfig) -> bool:
    """True when ``t_s`` falls in the dark tail of its orbit."""
    if config.eclipse_fraction == 0.0:
        return False
    phase = math.fmod(t_s, config.orbit_period_s)
    return phase >= (1.0 - config.eclipse_fraction) * config.orbit_period_s


def panel_temperature(
    irradiance_w_m2: float, prev_temp_c: float, config: OrbitConfig, dt_s: float
) -> float:
    """Advance panel temperature by one step of first-order relaxation."""
    if not dt_s > 0:
        raise ConfigError("dt_s", f"must be > 0, got {dt_s!r}")
    target = config.temp_sunlit_c if irradiance_w_m2 > 0 else config.temp_eclipse_c
    decay = math.exp(-dt_s / config.thermal_time_constant_s)
    return target + (prev_temp_c - target) * decay


def generate_profile(config: OrbitConfig, n_samples: int, dt_s: float) -> list[EnvSample]:
    """Sample ``n_samples`` environment points at ``t = k * dt_s``.

    Sensor noise is added to sunlit irradiance only and clamped at zero, so
    eclipse samples read exactly zero. The panel starts at the eclipse
    equilibrium (the spacecraft has just left the shadow).
    """
    config.validate()
    if n_samples < 1:
        raise ConfigError("n_samples", f"must be >= 1, got {n_samples!r}")
    if not dt_s > 0:
        raise ConfigError("dt_s", f"must be > 0, got {dt_s!r}")

    rng = np.random.default_rng(config.seed)
    noise = rng.normal(0.0, 1.0, size=n_samples) * config.irradiance_noise_sigma

    samples = []
    temp = config.temp_eclipse_c
    for k in range(n_samples):
        t = k * dt_s
        if in_eclipse(t, config):
            g = 0.0
        else:
            g = max(config.solar_constant_w_m2 + float(noise[k]), 0.0)
        temp = panel_temperature(g, temp, config, dt_s)
        samples.append(EnvSample(t_s=t, irradiance_w_m2=g, panel_temp_c=temp))
    return samples


def write_profile_csv(path: str | Path, samples: Iterable[EnvSample]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROFILE_HEADER)
        for s in samples:
            writer.writerow([repr(float(s.t_s)), repr(float(s.irradiance_w_m2)), repr(float(s.panel_temp_c))])


def profile_arrays(samples: Sequence[EnvSample]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([s.t_s for s in samples])
    g = np.array([s.irradiance_w_m2 for s in samples])
    temp = np.array([s.panel_temp_c for s in samples])
    return t, g, temp
