"""Constant-velocity motion planning and uniformly sampled control traces."""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .gcode import ResolvedMove

logger = logging.getLogger(__name__)

AXES = ("X", "Y", "Z", "E")
DEFAULT_STEPS_PER_MM = (80.0, 80.0, 400.0, 93.0)
# Nyquist of the default 8 kHz microphones
DEFAULT_MAX_STEP_RATE = 4000.0
DEFAULT_CONTROL_RATE = 1000.0

_GRID_EPS = 1e-9


class PlanningError(ValueError):
    pass


def grid_index(t: float, rate: float) -> int:
    """First sample index whose time ``i / rate`` is not before ``t``."""
    return int(math.ceil(t * rate - _GRID_EPS))


@dataclass(frozen=True)
class MotionSegment:
    row_id: int
    start: tuple[float, float, float]
    end: tuple[float, float, float]
    velocity: tuple[float, float, float]
    extrusion_rate: float
    duration: float
    start_time: float
    feedrate: float

    @property
    def end_time(self) -> float:
        return self.start_time + self.duration

    @property
    def speed(self) -> float:
        """Commanded path speed in mm/s; 0 for extrusion-only rows."""
        moving = any(v != 0.0 for v in self.velocity)
        return self.feedrate / 60.0 if moving else 0.0

    @property
    def axis_active(self) -> tuple[bool, bool, bool]:
        return tuple(abs(v) > 1e-12 for v in self.velocity)


def step_rates(velocity, extrusion_rate, steps_per_mm=DEFAULT_STEPS_PER_MM) -> np.ndarray:
    """Per-axis (X, Y, Z, E) stepper frequency in Hz."""
    v = np.abs(np.append(np.asarray(velocity, dtype=float), extrusion_rate))
    return v * np.asarray(steps_per_mm, dtype=float)


def plan_segments(
    moves: Sequence[ResolvedMove],
    steps_per_mm=DEFAULT_STEPS_PER_MM,
    max_step_rate: float | None = DEFAULT_MAX_STEP_RATE,
) -> list[MotionSegment]:
    """Realize resolved moves as back-to-back constant-velocity segments.

    Rows that neither move nor extrude are dropped. ``max_step_rate=None``
    disables the step-frequency limit.
    """
    segments = []
    t = 0.0
    for mv in moves:
        start = np.asarray(mv.start, dtype=float)
        end = np.asarray(mv.target, dtype=float)
        delta = end - start
        de = mv.extrusion_target - mv.extrusion_start
        length = float(np.sqrt(np.dot(delta, delta)))
        speed = mv.feedrate / 60.0
        if length == 0.0 and de == 0.0:
            logger.info("dropping degenerate row %d (line %d)", mv.row_id, mv.source_line)
            continue
        if length > 0.0:
            duration = length / speed
            velocity = tuple(float(v) for v in speed * delta / length)
        else:
            duration = abs(de) / speed
            velocity = (0.0, 0.0, 0.0)
        e_rate = de / duration
        if max_step_rate is not None:
            rates = step_rates(velocity, e_rate, steps_per_mm)
            bad = np.flatnonzero(rates >= max_step_rate)
            if bad.size:
                axis = AXES[bad[0]]
                raise PlanningError(
                    f"row {mv.row_id} (line {mv.source_line}): {axis} step rate "
                    f"{rates[bad[0]]:.1f} Hz reaches the {max_step_rate:g} Hz limit"
                )
        segments.append(
            MotionSegment(
                row_id=mv.row_id,
                start=tuple(float(v) for v in start),
                end=tuple(float(v) for v in end),
                velocity=velocity,
                extrusion_rate=float(e_rate),
                duration=float(duration),
                start_time=t,
                feedrate=float(mv.feedrate),
            )
        )
        t += duration
    return segments


@dataclass(frozen=True)
class ControlState:
    t: float
    axis_velocity: tuple[float, float, float]
    extrusion_rate: float
    row_id: int


class ControlTrace:
    """Uniformly sampled control signals with per-row provenance.

    Samples are stored column-wise (``time``, ``velocity``, ``extrusion_rate``,
    ``row_id``); ``states`` materializes them as :class:`ControlState`.
    Row boundaries are kept both in seconds and as sample indices on the
    control grid, so every consumer slices rows identically.
    """

    def __init__(self, segments: Sequence[MotionSegment], sample_rate: float):
        if not sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = float(sample_rate)
        self.segments = tuple(segments)
        m = len(self.segments)
        self.row_ids = np.array([s.row_id for s in self.segments], dtype=np.int64)
        self.start_times = np.array([s.start_time for s in self.segments], dtype=float)
        self.end_times = np.array([s.end_time for s in self.segments], dtype=float)
        total = float(self.end_times[-1]) if m else 0.0
        self.total_duration = total
        edges = [grid_index(t, self.sample_rate) for t in self.start_times]
        n = grid_index(total, self.sample_rate) if m else 0
        self.first_index = np.array(edges + [n], dtype=np.int64)

        counts = np.diff(self.first_index)
        vel = np.array([s.velocity for s in self.segments], dtype=float).reshape(m, 3)
        erate = np.array([s.extrusion_rate for s in self.segments], dtype=float)
        self.time = np.arange(n, dtype=float) / self.sample_rate
        self.velocity = np.repeat(vel, counts, axis=0)
        self.extrusion_rate = np.repeat(erate, counts)
        self.row_id = np.repeat(self.row_ids, counts)

    def __len__(self) -> int:
        return len(self.time)

    @property
    def boundaries(self) -> list[tuple[float, float]]:
        return list(zip(self.start_times.tolist(), self.end_times.tolist()))

    @property
    def states(self) -> list[ControlState]:
        return [
            ControlState(float(t), tuple(v), float(e), int(r))
            for t, v, e, r in zip(
                self.time, self.velocity.tolist(), self.extrusion_rate, self.row_id
            )
        ]

    def row_at(self, t: float) -> int | None:
        k = int(np.searchsorted(self.start_times, t, side="right")) - 1
        if k < 0 or t >= self.total_duration:
            return None
        return int(self.row_ids[k])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,vx,vy,vz,e_rate,row_id\n")
        for t, (vx, vy, vz), e, r in zip(
            self.time.tolist(), self.velocity.tolist(), self.extrusion_rate.tolist(),
            self.row_id.tolist(),
        ):
            buf.write(f"{t!r},{vx!r},{vy!r},{vz!r},{e!r},{r}\n")
        return buf.getvalue()


def sample_trace(segments: Sequence[MotionSegment], sample_rate: float = DEFAULT_CONTROL_RATE) -> ControlTrace:
    """Sample segment velocities every ``1 / sample_rate`` seconds.

    Sample ``i`` takes the segment whose half-open interval contains
    ``i / sample_rate``; an empty segment list gives an empty trace.
    """
    for a, b in zip(segments, segments[1:]):
        if not math.isclose(a.end_time, b.start_time, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"segments {a.row_id} and {b.row_id} are not contiguous")
    return ControlTrace(segments, sample_rate)


def total_duration(segments: Sequence[MotionSegment]) -> float:
    return segments[-1].end_time if segments else 0.0
