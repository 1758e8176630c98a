"""Side-channel sabotage detection for FDM printers."""
from .attack_detection import AttackSpec, DetectionConfig, DetectionReport, detect, inject_attack
from .emission_sim import EmissionRecording, SensorSpec, SimConfig, simulate_recording
from .estimation import KNearest, KNearestClassifier, Metrics, Model, ModelSet, evaluate, predict, train
from .features import LabeledDataset, build_dataset, dft_magnitude, extract_row_features
from .gcode import Command, ResolvedMove, Word, parse_program, resolve_modal, serialize_program
from .harness import ExperimentConfig, ExperimentSummary, run_experiment
from .kinematics import ControlTrace, MotionSegment, plan_segments, sample_trace

__version__ = "0.1.0"

__all__ = [
    "AttackSpec", "Command", "ControlTrace", "DetectionConfig", "DetectionReport",
    "EmissionRecording", "ExperimentConfig", "ExperimentSummary", "KNearest",
    "KNearestClassifier", "LabeledDataset", "Metrics", "Model", "ModelSet", "MotionSegment",
    "ResolvedMove", "SensorSpec", "SimConfig", "Word", "build_dataset", "detect",
    "dft_magnitude", "evaluate", "extract_row_features", "inject_attack", "parse_program",
    "plan_segments", "predict", "resolve_modal", "run_experiment", "sample_trace",
    "serialize_program", "simulate_recording", "train",
]
