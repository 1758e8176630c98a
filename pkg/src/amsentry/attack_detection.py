"""Sabotage injection into G-code and mismatch-based attack detection.

Detection trusts the program, not the printer: expected labels and the row
timeline both come from the trusted G-code, and the observed emissions are
cut along that timeline. An attack that changes what the motors do, or when
they do it, shows up as rows whose inferred labels disagree with the
expected ones.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .emission_sim import EmissionRecording
from .estimation import LayoutMismatchError, ModelSet
from .features import (
    AXIS_TASKS,
    feature_layout,
    layout_digest,
    recording_features,
    segment_labels,
)
from .gcode import Command, Word, _resolve, parse_program, resolve_modal, serialize_program
from .kinematics import (
    DEFAULT_MAX_STEP_RATE,
    DEFAULT_STEPS_PER_MM,
    plan_segments,
    sample_trace,
)

ATTACK_KINDS = ("feedrate_scale", "void", "reroute", "extrusion_scale")


class AttackError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    """A firmware-level sabotage over motion rows ``[row_range[0], row_range[1])``."""

    kind: str
    row_range: tuple[int, int]
    factor: float | None = None
    offset: tuple[float, float, float] | None = None
    description: str = ""

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        lo, hi = (int(v) for v in self.row_range)
        if lo < 0 or hi <= lo:
            raise AttackError(f"row range {self.row_range} is empty or negative")
        object.__setattr__(self, "row_range", (lo, hi))
        if self.kind in ("feedrate_scale", "extrusion_scale"):
            if self.factor is None or not self.factor > 0 or self.factor == 1:
                raise AttackError(f"{self.kind} needs a factor > 0 and != 1, got {self.factor}")
        if self.kind == "reroute":
            if self.offset is None or len(self.offset) != 3 or not any(self.offset):
                raise AttackError("reroute needs a non-zero 3-vector offset")
            object.__setattr__(self, "offset", tuple(float(v) for v in self.offset))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["row_range"] = list(self.row_range)
        if self.offset is not None:
            d["offset"] = list(self.offset)
        return {k: v for k, v in d.items() if v is not None and v != ""}

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        d = dict(d)
        d["row_range"] = tuple(d["row_range"])
        if d.get("offset") is not None:
            d["offset"] = tuple(d["offset"])
        return cls(**d)


def _explicit(cmd: Command, target, e, feed) -> Command:
    words = (
        Word("X", target[0]), Word("Y", target[1]), Word("Z", target[2]),
        Word("E", e), Word("F", feed),
    )
    return Command(cmd.kind, cmd.code, words, cmd.source_line)


def inject_attack(
    program: Sequence[Command],
    spec: AttackSpec,
    steps_per_mm=DEFAULT_STEPS_PER_MM,
    max_step_rate: float | None = DEFAULT_MAX_STEP_RATE,
) -> list[Command]:
    """Return a sabotaged copy of ``program``.

    Every motion command of the result carries explicit X, Y, Z, E and F, so
    rows outside the attacked range resolve exactly as before. The result is
    re-parsed, resolved and planned before it is returned; a mutation that
    breaks the step-rate limit raises instead.
    """
    moves, cmd_index = _resolve(program)
    lo, hi = spec.row_range
    if hi > len(moves):
        raise AttackError(f"row range {spec.row_range} exceeds the {len(moves)} motion rows")
    row_of = {ci: r for r, ci in enumerate(cmd_index)}
    first_cmd, last_cmd = cmd_index[lo], cmd_index[hi - 1]

    new_target = {r: moves[r].target for r in range(len(moves))}
    new_e = {r: moves[r].extrusion_target for r in range(len(moves))}
    new_feed = {r: moves[r].feedrate for r in range(len(moves))}
    rows = range(lo, hi)
    if spec.kind == "feedrate_scale":
        for r in rows:
            new_feed[r] = moves[r].feedrate * spec.factor
    elif spec.kind == "reroute":
        for r in rows:
            new_target[r] = tuple(a + b for a, b in zip(moves[r].target, spec.offset))
    elif spec.kind == "extrusion_scale":
        running = None
        for r in rows:
            mv = moves[r]
            same_frame = r > lo and mv.extrusion_start == moves[r - 1].extrusion_target
            base = running if same_frame else mv.extrusion_start
            running = base + spec.factor * (mv.extrusion_target - mv.extrusion_start)
            new_e[r] = running

    out: list[Command] = []
    tail_reset = spec.kind in ("extrusion_scale", "void") and last_cmd < len(program) - 1
    for ci, cmd in enumerate(program):
        in_void = spec.kind == "void" and first_cmd <= ci <= last_cmd
        if in_void:
            if cmd.kind == "M":
                out.append(cmd)
            if ci == last_cmd:
                removed = [moves[r] for r in rows]
                moving = [m.feedrate for m in removed if m.target != m.start] or [removed[0].feedrate]
                end = moves[hi - 1].target
                bridge = (Word("X", end[0]), Word("Y", end[1]), Word("Z", end[2]),
                          Word("F", max(moving)))
                out.append(Command("G", 0, bridge, cmd.source_line))
        elif ci in row_of:
            r = row_of[ci]
            out.append(_explicit(cmd, new_target[r], new_e[r], new_feed[r]))
        else:
            out.append(cmd)
        if ci == last_cmd and tail_reset:
            out.append(Command("G", 92, (Word("E", moves[hi - 1].extrusion_target),),
                               cmd.source_line))

    try:
        reparsed = parse_program(serialize_program(out))
        plan_segments(resolve_modal(reparsed), steps_per_mm, max_step_rate)
    except ValueError as exc:
        raise AttackError(f"mutated program is invalid: {exc}") from exc
    return out


@dataclass(frozen=True)
class DetectionConfig:
    window: int = 20
    validation_error: dict = field(default_factory=dict)
    sigma_margin: float = 3.0
    threshold_floor: float = 0.15
    duration_tolerance: float = 0.05

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        for task, eps in self.validation_error.items():
            if not 0 <= eps < 1:
                raise ValueError(f"validation error for {task} must lie in [0, 1)")

    def threshold(self, task: str) -> float:
        """Largest benign mismatch rate tolerated in one window."""
        eps = float(self.validation_error.get(task, 0.0))
        return max(
            self.threshold_floor,
            eps + self.sigma_margin * math.sqrt(eps * (1.0 - eps) / self.window),
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaskResult:
    expected: list[int]
    inferred: list[int]
    mismatch: list[bool]
    window_rates: list[float]
    threshold: float
    localized: list[tuple[int, int]]

    @property
    def triggered(self) -> bool:
        return any(r > self.threshold for r in self.window_rates)


@dataclass
class DurationCheck:
    expected: float
    observed: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.observed - self.expected) <= self.tolerance * self.expected

    @property
    def truncated(self) -> bool:
        return self.observed < 0.5 * self.expected


@dataclass
class DetectionReport:
    row_ids: list[int]
    tasks: dict[str, TaskResult]
    duration_check: DurationCheck
    verdict: str
    reasons: list[str]
    config: DetectionConfig

    @property
    def is_attack(self) -> bool:
        return self.verdict == "attack"

    def recompute_verdict(self) -> str:
        triggered = any(t.triggered for t in self.tasks.values())
        return "attack" if triggered or not self.duration_check.passed else "benign"

    @property
    def localized(self) -> list[tuple[int, int]]:
        return sorted({r for t in self.tasks.values() for r in t.localized})

    def to_dict(self) -> dict:
        dc = self.duration_check
        return {
            "verdict": self.verdict,
            "reasons": self.reasons,
            "triggering_tasks": [k for k, t in self.tasks.items() if t.triggered],
            "localized": [list(r) for r in self.localized],
            "duration_check": {
                "expected_s": dc.expected,
                "observed_s": dc.observed,
                "tolerance": dc.tolerance,
                "passed": dc.passed,
            },
            "row_ids": self.row_ids,
            "tasks": {
                name: {
                    "threshold": t.threshold,
                    "expected": t.expected,
                    "inferred": t.inferred,
                    "mismatch": t.mismatch,
                    "window_rates": t.window_rates,
                    "localized": [list(r) for r in t.localized],
                }
                for name, t in self.tasks.items()
            },
            "config": self.config.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


def window_rates(mismatch: np.ndarray, window: int) -> np.ndarray:
    """Mismatch fraction of every run of ``window`` consecutive rows."""
    m = np.asarray(mismatch, dtype=np.int64)
    if len(m) == 0:
        return np.zeros(0)
    w = min(window, len(m))
    csum = np.concatenate([[0], np.cumsum(m)])
    return (csum[w:] - csum[:-w]) / w


def localize(rates: np.ndarray, threshold: float, window: int, row_ids) -> list[tuple[int, int]]:
    """Row-id spans (inclusive) covered by maximal runs of alarming windows."""
    n = len(row_ids)
    w = min(window, n)
    hot = np.asarray(rates) > threshold
    spans = []
    i = 0
    while i < len(hot):
        if hot[i]:
            j = i
            while j + 1 < len(hot) and hot[j + 1]:
                j += 1
            spans.append((int(row_ids[i]), int(row_ids[j + w - 1])))
            i = j + 1
        else:
            i += 1
    return spans


def detect(
    trusted_program: Sequence[Command],
    observed: EmissionRecording,
    models: ModelSet,
    config: DetectionConfig | None = None,
    origin=(0.0, 0.0, 0.0),
) -> DetectionReport:
    """Compare trusted-program labels with labels inferred from ``observed``.

    Only the observed channel data and control sample rate are used; the
    recording's own trace is never consulted.
    """
    if config is None:
        config = DetectionConfig(validation_error=dict(models.validation_error))
    digest = layout_digest(feature_layout(observed.config.sensors))
    if digest != models.layout_digest:
        raise LayoutMismatchError(
            f"recording layout {digest} does not match model layout {models.layout_digest}"
        )
    segments = plan_segments(resolve_modal(trusted_program, origin), max_step_rate=None)
    trace = sample_trace(segments, observed.control_rate)
    duration = DurationCheck(trace.total_duration, observed.duration, config.duration_tolerance)

    X, seen = recording_features(observed, trace)
    axes, vclass = segment_labels(segments, models.speed_table)
    row_ids = [int(r) for r in trace.row_ids]
    tasks = {}
    for task, model in models.models.items():
        if task in AXIS_TASKS:
            expected = axes[:, AXIS_TASKS.index(task)].astype(np.int64)
        else:
            expected = vclass
        inferred = np.full(len(row_ids), -1, dtype=np.int64)
        if seen.any():
            inferred[seen] = model.predict_matrix(X[seen], digest)
        mismatch = inferred != expected
        rates = window_rates(mismatch, config.window)
        thr = config.threshold(task)
        tasks[task] = TaskResult(
            expected=expected.tolist(),
            inferred=inferred.tolist(),
            mismatch=mismatch.tolist(),
            window_rates=rates.tolist(),
            threshold=thr,
            localized=localize(rates, thr, config.window, row_ids),
        )

    reasons = []
    if duration.truncated:
        reasons.append("truncated run")
    elif not duration.passed:
        reasons.append("duration mismatch")
    for name, t in tasks.items():
        if t.triggered:
            reasons.append(f"label mismatch: {name}")
    verdict = "attack" if reasons else "benign"
    report = DetectionReport(row_ids, tasks, duration, verdict, reasons, config)
    assert report.recompute_verdict() == verdict
    return report
