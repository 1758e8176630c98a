"""End-to-end experiment runner.

One experiment = one trusted program. Benign training recordings feed the
state estimator; fresh benign runs and attacked runs are then checked by the
detector. Every random draw is keyed by a named seed derived from the
config's base seed, so re-running a config reproduces every artifact.
"""
from __future__ import annotations

import json
import logging
import time
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import programs
from .attack_detection import AttackSpec, DetectionConfig, detect, inject_attack
from .emission_sim import SimConfig, save_recording, simulate_recording
from .estimation import Metrics, ModelSet, evaluate, train, KNearest
from .features import AXIS_TASKS, TASKS, LabeledDataset, build_dataset
from .gcode import Command, load_program, parse_program, resolve_modal, serialize_program
from .kinematics import DEFAULT_CONTROL_RATE, plan_segments, sample_trace

logger = logging.getLogger(__name__)

FUSED = "fused"


class ExperimentError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def derive_seed(base: int, *keys) -> int:
    """Stable 64-bit seed for a named purpose, e.g. ``derive_seed(0, "benign", 3)``."""
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    ss = np.random.SeedSequence(int(base), spawn_key=spawn)
    return int(ss.generate_state(1, np.uint64)[0])


def default_attack_suite() -> list[dict]:
    return [
        {"kind": "feedrate_scale", "factor": 2.0, "row_range": "all",
         "description": "double every feedrate"},
        {"kind": "void", "span": 20, "description": "drop 20 consecutive rows"},
        {"kind": "reroute", "offset": [2.0, 0.0, 0.0], "span": 20,
         "description": "shift 20 rows by 2 mm in X"},
    ]


@dataclass
class ExperimentConfig:
    program: dict = field(default_factory=lambda: {"generator": "block", "rows": 200})
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0
    split_seed: int = 0
    attacks: list = field(default_factory=default_attack_suite)
    repetitions: int = 10
    benign_runs: int | None = 20
    training_recordings: int = 3
    k: int = 3
    control_rate: float = DEFAULT_CONTROL_RATE
    detection: dict = field(default_factory=dict)
    output_dir: str | None = None
    save_recordings: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.training_recordings < 1:
            raise ValueError("training_recordings must be at least 1")
        if "path" in self.program and not Path(self.program["path"]).is_file():
            raise FileNotFoundError(self.program["path"])
        if isinstance(self.sim, dict):
            self.sim = SimConfig.from_dict(self.sim)

    @property
    def n_benign(self) -> int:
        return self.repetitions if self.benign_runs is None else self.benign_runs

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        if base_dir is not None and "path" in d.get("program", {}):
            p = Path(d["program"]["path"])
            if not p.is_absolute():
                d["program"] = dict(d["program"], path=str(base_dir / p))
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), path.parent)

    def to_dict(self) -> dict:
        return {
            "program": self.program,
            "sim": self.sim.to_dict(),
            "seed": self.seed,
            "split_seed": self.split_seed,
            "attacks": self.attacks,
            "repetitions": self.repetitions,
            "benign_runs": self.benign_runs,
            "training_recordings": self.training_recordings,
            "k": self.k,
            "control_rate": self.control_rate,
            "detection": self.detection,
        }


@dataclass
class ExperimentSummary:
    accuracy: dict
    validation_error: dict
    detection_rate: float | None
    false_alarm_rate: float | None
    attacks: list
    runs: list
    seeds: dict
    program: dict
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        d = {
            "program": self.program,
            "accuracy": self.accuracy,
            "validation_error": self.validation_error,
            "attacks": self.attacks,
            "runs": self.runs,
            "seeds": self.seeds,
        }
        if self.detection_rate is not None:
            d["detection_rate"] = self.detection_rate
        if self.false_alarm_rate is not None:
            d["false_alarm_rate"] = self.false_alarm_rate
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"


@contextmanager
def _stage(name: str):
    try:
        yield
    except ExperimentError:
        raise
    except Exception as exc:
        raise ExperimentError(name, exc) from exc


def load_or_generate(spec: dict) -> tuple[list[Command], str]:
    if "path" in spec:
        return load_program(spec["path"]), str(spec["path"])
    name = spec.get("generator", "block")
    rows = int(spec.get("rows", 200))
    return parse_program(programs.generate(name, rows)), f"generator:{name}:{rows}"


def program_trace(program: Sequence[Command], sim: SimConfig, control_rate=DEFAULT_CONTROL_RATE):
    segments = plan_segments(resolve_modal(program), sim.steps_per_mm, sim.max_step_rate)
    return sample_trace(segments, control_rate)


def training_dataset(trace, sim: SimConfig, seeds: Sequence[int]) -> LabeledDataset:
    return build_dataset([simulate_recording(trace, sim.with_seed(s)) for s in seeds])


def modality_comparison(
    dataset: LabeledDataset, k: int = 3, seed: int = 0, tasks=TASKS
) -> tuple[dict[str, dict[str, Metrics]], ModelSet]:
    """Held-out metrics for the fused features and for each modality alone.

    Returns the metrics table and the fused model set, whose validation
    errors come from the same held-out split.
    """
    train_ds, test_ds = dataset.split(0.3, seed)
    if test_ds is None:
        raise ValueError("dataset too small for a held-out split")
    table: dict[str, dict[str, Metrics]] = {}
    fused_models = {}
    for name in [FUSED] + dataset.modality_names:
        tr = train_ds if name == FUSED else train_ds.select_modalities(name)
        te = test_ds if name == FUSED else test_ds.select_modalities(name)
        table[name] = {}
        for task in tasks:
            model = train(tr, task, KNearest(k))
            table[name][task] = evaluate(model, te)
            if name == FUSED:
                fused_models[task] = model
    errors = {t: 1.0 - m.accuracy for t, m in table[FUSED].items()}
    return table, ModelSet(fused_models, errors)


def axis_activity_accuracy(metrics: dict[str, Metrics]) -> float:
    return float(np.mean([metrics[t].accuracy for t in AXIS_TASKS]))


def resolve_attack(entry: dict, n_rows: int, rng: np.random.Generator) -> AttackSpec:
    """Turn a suite entry into a concrete AttackSpec.

    ``row_range`` may be explicit, or ``"all"``; alternatively ``span`` places
    a run of that many rows uniformly at random.
    """
    entry = dict(entry)
    span = entry.pop("span", None)
    rr = entry.pop("row_range", None)
    if rr == "all":
        rr = (0, n_rows)
    elif rr is None:
        if span is None:
            raise ValueError(f"attack entry needs row_range or span: {entry}")
        span = int(span)
        if not 0 < span <= n_rows:
            raise ValueError(f"span {span} does not fit a {n_rows}-row program")
        lo = int(rng.integers(0, n_rows - span + 1))
        rr = (lo, lo + span)
    return AttackSpec.from_dict(dict(entry, row_range=rr))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def run_experiment(config: ExperimentConfig) -> ExperimentSummary:
    """Train on benign runs, then detect over benign and attacked runs."""
    t0 = time.perf_counter()
    out = Path(config.output_dir) if config.output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "reports").mkdir(exist_ok=True)
        (out / "programs").mkdir(exist_ok=True)
        (out / "INCOMPLETE").write_text("experiment did not finish\n")
        _write_json(out / "config.json", config.to_dict())
    sim = config.sim

    with _stage("program"):
        program, source = load_or_generate(config.program)
        trace = program_trace(program, sim, config.control_rate)
        n_rows = len(trace.segments)
        if out is not None:
            (out / "programs" / "trusted.gcode").write_text(serialize_program(program))

    train_seeds = [derive_seed(config.seed, "train", i) for i in range(config.training_recordings)]
    with _stage("simulate-training"):
        recordings = [simulate_recording(trace, sim.with_seed(s)) for s in train_seeds]
        if out is not None and config.save_recordings:
            for i, rec in enumerate(recordings):
                save_recording(rec, out / "recordings" / f"train_{i:03d}")

    with _stage("dataset"):
        dataset = build_dataset(recordings)
        if out is not None:
            (out / "dataset.csv").write_text(dataset.to_csv())
            _write_json(out / "normalization.json", dataset.normalization_dict())

    with _stage("train"):
        table, models = modality_comparison(dataset, config.k, config.split_seed)
        if out is not None:
            models.save(out / "models.json")
            _write_json(out / "metrics.json", {
                name: {t: m.to_dict() for t, m in per.items()} for name, per in table.items()
            })
    accuracy = {}
    for name, per in table.items():
        row = {t: m.accuracy for t, m in per.items()}
        row["axis_activity"] = axis_activity_accuracy(per)
        accuracy[name] = row

    det_cfg = DetectionConfig(validation_error=dict(models.validation_error), **config.detection)
    runs = []

    benign_seeds = [derive_seed(config.seed, "benign", i) for i in range(config.n_benign)]
    with _stage("benign-detection"):
        for i, s in enumerate(benign_seeds):
            rec = simulate_recording(trace, sim.with_seed(s))
            report = detect(program, rec, models, det_cfg)
            name = f"benign_{i:03d}.json"
            if out is not None:
                (out / "reports" / name).write_text(report.to_json())
            runs.append({"kind": "benign", "index": i, "seed": s, "verdict": report.verdict,
                         "report": f"reports/{name}"})

    attack_rows = []
    attack_seeds = []
    with _stage("attack-detection"):
        for a, entry in enumerate(config.attacks):
            detected = 0
            seeds_a = []
            for r in range(config.repetitions):
                s = derive_seed(config.seed, "attack", a, r)
                seeds_a.append(s)
                spec = resolve_attack(entry, n_rows, np.random.default_rng(s))
                mutated = inject_attack(program, spec, sim.steps_per_mm, sim.max_step_rate)
                mtrace = program_trace(mutated, sim, config.control_rate)
                rec = simulate_recording(mtrace, sim.with_seed(s))
                report = detect(program, rec, models, det_cfg)
                detected += report.is_attack
                name = f"attack_{a:02d}_{r:03d}"
                if out is not None:
                    (out / "reports" / f"{name}.json").write_text(report.to_json())
                    (out / "programs" / f"{name}.gcode").write_text(serialize_program(mutated))
                runs.append({"kind": "attack", "attack": a, "index": r, "seed": s,
                             "spec": spec.to_dict(), "verdict": report.verdict,
                             "localized": [list(x) for x in report.localized],
                             "report": f"reports/{name}.json"})
            attack_seeds.append(seeds_a)
            attack_rows.append({"attack": entry, "runs": config.repetitions, "detected": detected,
                                "rate": detected / config.repetitions})

    n_attack = sum(row["runs"] for row in attack_rows)
    n_hit = sum(row["detected"] for row in attack_rows)
    n_false = sum(1 for run in runs if run["kind"] == "benign" and run["verdict"] == "attack")
    summary = ExperimentSummary(
        accuracy=accuracy,
        validation_error=models.validation_error,
        detection_rate=n_hit / n_attack if n_attack else None,
        false_alarm_rate=n_false / len(benign_seeds) if benign_seeds else None,
        attacks=attack_rows,
        runs=runs,
        seeds={"training": train_seeds, "benign": benign_seeds, "attack": attack_seeds,
               "split": config.split_seed},
        program={"source": source, "rows": n_rows, "duration_s": trace.total_duration},
        wall_clock_s=time.perf_counter() - t0,
    )
    if out is not None:
        (out / "summary.json").write_text(summary.to_json())
        _write_json(out / "timing.json", {"wall_clock_s": summary.wall_clock_s})
        (out / "INCOMPLETE").unlink()
    return summary
