"""Synthetic 10-minute SCADA data for a 3.3 MW pitch-regulated turbine.

Wind speed follows a Weibull marginal through a Gaussian copula with AR(1)
step correlation; direction is a wrapped random walk. Power, rotor speed,
generator speed and current come from idealised turbine curves, a
direction-dependent wake deficit on power, and additive Gaussian noise.

Random numbers come from numpy's ``SeedSequence`` -> ``PCG64`` stack, so
every output is a pure function of its arguments and the 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import log_ndtr

from .kernels import ar1_filter
from .scada_data import COLUMNS, NOMINAL_SPACING, SCADADataset

PRNG_NAME = "numpy.SeedSequence/PCG64"
DEFAULT_START = 1_577_836_800  # 2020-01-01T00:00:00Z
ROWS_PER_DAY = 144
NOISE_CLIP = 5.0


@dataclass(frozen=True)
class TurbineSpec:
    rated_power: float = 3300.0  # kW
    cut_in: float = 3.0  # m/s
    rated_wind: float = 13.0  # m/s
    cut_out: float = 25.0  # m/s
    rotor_min: float = 6.5  # rpm
    rotor_rated: float = 13.6  # rpm
    gearbox_ratio: float = 113.0
    line_voltage: float = 0.69  # kV
    power_factor: float = 0.95

    def __post_init__(self):
        if not 0 < self.cut_in < self.rated_wind < self.cut_out:
            raise ValueError("need 0 < cut_in < rated_wind < cut_out")
        if self.rated_power <= 0:
            raise ValueError("rated_power must be > 0")
        if not self.rotor_min < self.rotor_rated:
            raise ValueError("need rotor_min < rotor_rated")
        if self.gearbox_ratio <= 1:
            raise ValueError("gearbox_ratio must be > 1")
        if self.line_voltage <= 0 or not 0 < self.power_factor <= 1:
            raise ValueError("line_voltage must be > 0 and power_factor in (0, 1]")


@dataclass(frozen=True)
class WindFieldConfig:
    weibull_shape: float = 2.0
    weibull_scale: float = 8.0  # m/s
    ar1_rho: float = 0.97
    direction_drift_deg: float = 4.0  # per 10-min step
    # Centred on 180 deg so the sector is symmetric under theta -> 360 - theta
    # and stays visible to the cos-only direction encoding.
    wake_sector_center: float = 180.0
    wake_sector_width: float = 40.0
    wake_deficit: float = 0.03

    def __post_init__(self):
        if self.weibull_shape <= 0 or self.weibull_scale <= 0:
            raise ValueError("Weibull shape and scale must be > 0")
        if not 0 <= self.ar1_rho < 1:
            raise ValueError("ar1_rho must be in [0, 1)")
        if not 0 <= self.wake_deficit < 1:
            raise ValueError("wake_deficit must be in [0, 1)")
        if self.direction_drift_deg < 0 or self.wake_sector_width < 0:
            raise ValueError("direction drift and wake sector width must be >= 0")


@dataclass(frozen=True)
class NoiseConfig:
    """Per-channel Gaussian sigma as a fraction of the channel's rated value."""

    active_power: float = 0.015
    rotor_speed: float = 0.015
    generator_speed: float = 0.015
    current: float = 0.015

    def __post_init__(self):
        if min(asdict(self).values()) < 0:
            raise ValueError("noise sigmas must be >= 0")

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0, 0.0)


FAULT_KINDS = ("power-derate", "rotor-bias", "stuck-sensor")


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    onset: int
    magnitude: float = 0.0
    channel: str | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"fault kind must be one of {FAULT_KINDS}, got {self.kind!r}")
        if not math.isfinite(self.magnitude):
            raise ValueError("fault magnitude must be finite")
        if self.kind == "stuck-sensor" and self.channel not in COLUMNS[1:]:
            raise ValueError(f"stuck-sensor needs a channel in {COLUMNS[1:]}")


def ideal_power(v, spec: TurbineSpec = TurbineSpec()):
    """Cubic region-II power curve, flat at rated power, zero outside [cut_in, cut_out)."""
    v = np.asarray(v, dtype=np.float64)
    ci3 = spec.cut_in**3
    ramp = spec.rated_power * (v**3 - ci3) / (spec.rated_wind**3 - ci3)
    p = np.where(v < spec.rated_wind, ramp, spec.rated_power)
    return np.where((v < spec.cut_in) | (v >= spec.cut_out), 0.0, p)


def ideal_rotor_speed(v, spec: TurbineSpec = TurbineSpec()):
    v = np.asarray(v, dtype=np.float64)
    frac = (v - spec.cut_in) / (spec.rated_wind - spec.cut_in)
    ramp = spec.rotor_min + (spec.rotor_rated - spec.rotor_min) * frac
    w = np.where(v < spec.rated_wind, ramp, spec.rotor_rated)
    return np.where((v < spec.cut_in) | (v >= spec.cut_out), 0.0, w)


def derived_channels(power, rotor, spec: TurbineSpec = TurbineSpec()):
    """Generator speed (rpm) and line current (A) from power (kW) and rotor speed."""
    power = np.asarray(power, dtype=np.float64)
    rotor = np.asarray(rotor, dtype=np.float64)
    gen = rotor * spec.gearbox_ratio
    current = 1000.0 * power / (math.sqrt(3.0) * spec.line_voltage * 1000.0 * spec.power_factor)
    return gen, current


def rated_current(spec: TurbineSpec = TurbineSpec()) -> float:
    return float(derived_channels(spec.rated_power, 0.0, spec)[1])


def in_wake_sector(direction, config: WindFieldConfig = WindFieldConfig()):
    offset = np.mod(np.asarray(direction) - config.wake_sector_center + 180.0, 360.0) - 180.0
    return np.abs(offset) <= config.wake_sector_width / 2


def simulate_wind(n: int, config: WindFieldConfig = WindFieldConfig(), seed=0):
    """Return ``(speed, direction)`` series of length ``n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n)
    d0 = rng.uniform(0.0, 360.0)
    steps = rng.normal(0.0, config.direction_drift_deg, n - 1)

    rho = config.ar1_rho
    innov = eps * math.sqrt(1.0 - rho * rho)
    innov[0] = eps[0]  # start from the stationary N(0, 1) law
    z = ar1_filter(innov, rho)
    # Weibull quantile of Phi(z): scale * (-ln(1 - Phi(z)))**(1/shape)
    speed = config.weibull_scale * (-log_ndtr(-z)) ** (1.0 / config.weibull_shape)

    direction = np.mod(d0 + np.concatenate([[0.0], np.cumsum(steps)]), 360.0)
    direction = np.where(direction >= 360.0, direction - 360.0, direction)
    return speed, direction


def generate_dataset(
    days: int,
    spec: TurbineSpec = TurbineSpec(),
    wind: WindFieldConfig = WindFieldConfig(),
    noise: NoiseConfig = NoiseConfig(),
    seed: int = 0,
    start: int = DEFAULT_START,
) -> SCADADataset:
    if days < 1:
        raise ValueError("days must be >= 1")
    n = ROWS_PER_DAY * int(days)
    wind_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    speed, direction = simulate_wind(n, wind, wind_ss)

    power = ideal_power(speed, spec) * np.where(in_wake_sector(direction, wind), 1.0 - wind.wake_deficit, 1.0)
    rotor = ideal_rotor_speed(speed, spec)
    gen, current = derived_channels(power, rotor, spec)

    nominal = {
        "active_power": spec.rated_power,
        "rotor_speed": spec.rotor_rated,
        "generator_speed": spec.rotor_rated * spec.gearbox_ratio,
        "current": rated_current(spec),
    }
    clean = {"active_power": power, "rotor_speed": rotor, "generator_speed": gen, "current": current}
    rng = np.random.default_rng(noise_ss)
    cols = [speed, direction]
    for name in ("active_power", "rotor_speed", "generator_speed", "current"):
        draw = np.clip(rng.standard_normal(n), -NOISE_CLIP, NOISE_CLIP)
        sigma = getattr(noise, name) * nominal[name]
        cols.append(np.maximum(clean[name] + sigma * draw, 0.0))

    ts = start + NOMINAL_SPACING * np.arange(n, dtype=np.int64)
    return SCADADataset(ts, np.column_stack(cols))


def inject_fault(ds: SCADADataset, fault: FaultSpec):
    """Apply ``fault`` from its onset row onward; returns ``(dataset, labels)``."""
    if not 0 <= fault.onset < ds.m:
        raise ValueError(f"fault onset {fault.onset} outside dataset of {ds.m} rows")
    labels = np.zeros(ds.m, dtype=np.int64)
    labels[fault.onset:] = 1
    if fault.kind == "power-derate":
        col = ds.column("active_power").copy()
        col[fault.onset:] *= 1.0 - fault.magnitude
        return ds.with_column("active_power", col), labels
    if fault.kind == "rotor-bias":
        col = ds.column("rotor_speed").copy()
        col[fault.onset:] = np.maximum(col[fault.onset:] + fault.magnitude, 0.0)
        return ds.with_column("rotor_speed", col), labels
    col = ds.column(fault.channel).copy()
    col[fault.onset:] = col[fault.onset]
    return ds.with_column(fault.channel, col), labels


def generation_metadata(days, spec, wind, noise, seed, start=DEFAULT_START) -> dict:
    meta = {"prng": PRNG_NAME, "seed": int(seed), "days": int(days), "start": int(start)}
    for prefix, obj in (("spec", spec), ("wind", wind), ("noise", noise)):
        for k, v in asdict(obj).items():
            meta[f"{prefix}.{k}"] = v
    return meta


def format_key_values(meta: dict) -> str:
    lines = []
    for k, v in meta.items():
        lines.append(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"


def format_labels(ds: SCADADataset, labels) -> str:
    rows = ["timestamp,label"]
    rows += [f"{t},{int(l)}" for t, l in zip(ds.timestamps.tolist(), np.asarray(labels).tolist())]
    return "\n".join(rows) + "\n"
