"""Deterministic synthesis of acoustic, vibration, magnetic and current channels.

Each stepper axis radiates a harmonic series at its step frequency
``|v| * steps_per_mm``; the phase of that series is accumulated sample by
sample so it runs on smoothly across row boundaries. Sensors see a weighted
sum of the axes (their gain vector) plus white noise. The current sensor
sees a baseline, a per-active-motor draw and a slow heater square wave.

Randomness comes from a Philox stream keyed by ``(seed, sensor_id)``, so a
channel's samples do not depend on which other channels are simulated or in
which order.
"""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .kinematics import (
    AXES,
    DEFAULT_STEPS_PER_MM,
    ControlTrace,
    MotionSegment,
    grid_index,
    sample_trace,
    step_rates,
)

MODALITIES = ("acoustic", "vibration", "magnetic", "current")
RECORDING_FORMAT = 1


class SimulationError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class SensorSpec:
    modality: str
    sensor_id: str
    sample_rate: float
    gain: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ConfigurationError(f"unknown modality {self.modality!r}")
        if len(self.gain) != len(AXES):
            raise ConfigurationError(f"{self.sensor_id}: gain needs one entry per axis {AXES}")
        if any(g < 0 for g in self.gain):
            raise ConfigurationError(f"{self.sensor_id}: gains must be non-negative")
        if self.noise_sigma < 0:
            raise ConfigurationError(f"{self.sensor_id}: noise_sigma must be non-negative")
        if not self.sample_rate > 0:
            raise ConfigurationError(f"{self.sensor_id}: sample_rate must be positive")
        object.__setattr__(self, "gain", tuple(float(g) for g in self.gain))


def _own_axis_gains(i: int, own=1.0, cross=0.3) -> tuple[float, ...]:
    return tuple(own if j == i else cross for j in range(len(AXES)))


def default_sensors() -> tuple[SensorSpec, ...]:
    sensors = []
    for i in range(3):
        sensors.append(SensorSpec("acoustic", f"mic{i + 1}", 8000.0, _own_axis_gains(i), 0.08))
    sensors.append(SensorSpec("acoustic", "mic4", 8000.0, (0.6,) * len(AXES), 0.08))
    for i in range(3):
        sensors.append(SensorSpec("vibration", f"acc{i + 1}", 1000.0, _own_axis_gains(i), 0.08))
    for i in range(3):
        sensors.append(SensorSpec("magnetic", f"mag{i + 1}", 1000.0, _own_axis_gains(i), 0.08))
    sensors.append(SensorSpec("current", "cur1", 1000.0, (0.0,) * len(AXES), 0.03))
    return tuple(sensors)


@dataclass(frozen=True)
class SimConfig:
    sensors: tuple[SensorSpec, ...] = field(default_factory=default_sensors)
    steps_per_mm: tuple[float, ...] = DEFAULT_STEPS_PER_MM
    harmonic_amplitudes: tuple[float, ...] = (1.0, 0.5, 0.25)
    motor_current_per_active_axis: float = 0.4
    baseline_current: float = 0.6
    heater_current: float = 0.5
    heater_frequency: float = 0.5
    seed: int = 0

    def __post_init__(self):
        ids = [s.sensor_id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("sensor ids must be unique")
        if len(self.steps_per_mm) != len(AXES):
            raise ConfigurationError(f"steps_per_mm needs one entry per axis {AXES}")
        object.__setattr__(self, "sensors", tuple(self.sensors))
        object.__setattr__(self, "steps_per_mm", tuple(float(v) for v in self.steps_per_mm))
        object.__setattr__(
            self, "harmonic_amplitudes", tuple(float(v) for v in self.harmonic_amplitudes)
        )

    @property
    def max_step_rate(self) -> float | None:
        """Lowest acoustic Nyquist frequency, or None without microphones."""
        rates = [s.sample_rate for s in self.sensors if s.modality == "acoustic"]
        return min(rates) / 2.0 if rates else None

    def with_seed(self, seed: int) -> "SimConfig":
        return replace(self, seed=int(seed))

    def with_noise_scale(self, scale: float) -> "SimConfig":
        sensors = tuple(replace(s, noise_sigma=s.noise_sigma * scale) for s in self.sensors)
        return replace(self, sensors=sensors)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sensors"] = [dict(s, gain=list(s["gain"])) for s in d["sensors"]]
        for key in ("steps_per_mm", "harmonic_amplitudes"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if "sensors" in d:
            d["sensors"] = tuple(
                SensorSpec(**dict(s, gain=tuple(s.get("gain", (0.0,) * len(AXES)))))
                for s in d["sensors"]
            )
        for key in ("steps_per_mm", "harmonic_amplitudes"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def sensor_rng(seed: int, sensor_id: str) -> np.random.Generator:
    key = np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(sensor_id.encode())])
    return np.random.Generator(np.random.Philox(key))


def check_step_limit(segments: Sequence[MotionSegment], config: SimConfig) -> None:
    limit = config.max_step_rate
    if limit is None:
        return
    for seg in segments:
        rates = step_rates(seg.velocity, seg.extrusion_rate, config.steps_per_mm)
        bad = np.flatnonzero(rates >= limit)
        if bad.size:
            raise SimulationError(
                f"row {seg.row_id}: {AXES[bad[0]]} step rate {rates[bad[0]]:.1f} Hz "
                f"is not below the acoustic Nyquist limit {limit:g} Hz"
            )


@dataclass
class EmissionRecording:
    channels: dict[str, np.ndarray]
    trace: ControlTrace
    config: SimConfig
    config_digest: str

    @property
    def control_rate(self) -> float:
        return self.trace.sample_rate

    def sensor(self, sensor_id: str) -> SensorSpec:
        for s in self.config.sensors:
            if s.sensor_id == sensor_id:
                return s
        raise KeyError(sensor_id)

    @property
    def duration(self) -> float:
        """Observed length in seconds, from the channel data alone."""
        spans = [len(x) / self.sensor(sid).sample_rate for sid, x in self.channels.items()]
        return max(spans) if spans else 0.0

    def save(self, path: str | Path) -> Path:
        return save_recording(self, path)


def _upsample_factor(sensor: SensorSpec, control_rate: float) -> int:
    ratio = sensor.sample_rate / control_rate
    factor = int(round(ratio))
    if factor < 1 or abs(ratio - factor) > 1e-9:
        raise ConfigurationError(
            f"{sensor.sensor_id}: sample rate {sensor.sample_rate:g} Hz is not a multiple "
            f"of the control rate {control_rate:g} Hz"
        )
    return factor


def _control_rows(trace: ControlTrace, sensor: SensorSpec) -> np.ndarray:
    factor = _upsample_factor(sensor, trace.sample_rate)
    n = grid_index(trace.total_duration, sensor.sample_rate) if len(trace) else 0
    return np.minimum(np.arange(n) // factor, len(trace) - 1)


def _axis_rates(trace: ControlTrace, idx: np.ndarray, config: SimConfig) -> np.ndarray:
    v = np.column_stack([trace.velocity, trace.extrusion_rate])[idx]
    return np.abs(v) * np.asarray(config.steps_per_mm)


def simulate_recording(trace: ControlTrace, config: SimConfig) -> EmissionRecording:
    """Synthesize every configured sensor channel for ``trace``."""
    check_step_limit(trace.segments, config)
    amps = np.asarray(config.harmonic_amplitudes)
    cache: dict[float, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    channels: dict[str, np.ndarray] = {}
    for sensor in config.sensors:
        rate = sensor.sample_rate
        if rate not in cache:
            idx = _control_rows(trace, sensor)
            freqs = _axis_rates(trace, idx, config)
            phase = np.zeros_like(freqs)
            if len(freqs):
                phase[1:] = 2.0 * np.pi * np.cumsum(freqs[:-1], axis=0) / rate
            cache[rate] = (idx, freqs, phase)
        idx, freqs, phase = cache[rate]
        n = len(idx)
        rng = sensor_rng(config.seed, sensor.sensor_id)
        offsets = rng.uniform(0.0, 2.0 * np.pi, size=len(AXES))
        if sensor.modality == "current":
            active = (freqs > 0).sum(axis=1)
            t = np.arange(n) / rate
            heater = ((t * config.heater_frequency) % 1.0) < 0.5
            x = (
                config.baseline_current
                + config.motor_current_per_active_axis * active
                + config.heater_current * heater
            )
        else:
            x = np.zeros(n)
            for a, g in enumerate(sensor.gain):
                if g == 0.0:
                    continue
                moving = freqs[:, a] > 0
                if not moving.any():
                    continue
                series = np.zeros(n)
                for h, amp in enumerate(amps):
                    series += amp * np.sin((h + 1) * phase[:, a] + offsets[a])
                x += g * np.where(moving, series, 0.0)
        if sensor.noise_sigma > 0:
            x = x + sensor.noise_sigma * rng.standard_normal(n)
        channels[sensor.sensor_id] = np.ascontiguousarray(x, dtype="<f8")
    return EmissionRecording(channels, trace, config, config.digest())


def _segment_to_dict(s: MotionSegment) -> dict:
    return asdict(s)


def _segment_from_dict(d: dict) -> MotionSegment:
    return MotionSegment(
        row_id=int(d["row_id"]),
        start=tuple(d["start"]),
        end=tuple(d["end"]),
        velocity=tuple(d["velocity"]),
        extrusion_rate=d["extrusion_rate"],
        duration=d["duration"],
        start_time=d["start_time"],
        feedrate=d["feedrate"],
    )


def save_recording(rec: EmissionRecording, path: str | Path) -> Path:
    """Write ``recording.json`` plus one raw little-endian float64 file per channel."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    for sensor in rec.config.sensors:
        data = rec.channels[sensor.sensor_id]
        fname = f"{sensor.sensor_id}.f64"
        (path / fname).write_bytes(np.asarray(data, dtype="<f8").tobytes())
        index.append(
            {
                "sensor_id": sensor.sensor_id,
                "modality": sensor.modality,
                "sample_rate": sensor.sample_rate,
                "file": fname,
                "length": int(len(data)),
            }
        )
    meta = {
        "format": RECORDING_FORMAT,
        "config_digest": rec.config_digest,
        "control_rate": rec.trace.sample_rate,
        "config": rec.config.to_dict(),
        "channels": index,
        "segments": [_segment_to_dict(s) for s in rec.trace.segments],
    }
    (path / "recording.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    (path / "trace.csv").write_text(rec.trace.to_csv())
    return path


def load_recording(path: str | Path) -> EmissionRecording:
    path = Path(path)
    meta = json.loads((path / "recording.json").read_text())
    if meta.get("format") != RECORDING_FORMAT:
        raise ConfigurationError(f"{path}: unsupported recording format {meta.get('format')!r}")
    config = SimConfig.from_dict(meta["config"])
    if config.digest() != meta["config_digest"]:
        raise ConfigurationError(f"{path}: config digest mismatch")
    channels = {}
    for entry in meta["channels"]:
        data = np.fromfile(path / entry["file"], dtype="<f8")
        if len(data) != entry["length"]:
            raise ConfigurationError(f"{path}: channel {entry['sensor_id']} is truncated")
        channels[entry["sensor_id"]] = data
    segments = [_segment_from_dict(d) for d in meta["segments"]]
    trace = sample_trace(segments, meta["control_rate"])
    return EmissionRecording(channels, trace, config, meta["config_digest"])
