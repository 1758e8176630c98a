"""Command-line entry point: ``amsentry <subcommand> ...``.

Exit codes: 0 success (``detect``: benign), 2 attack detected, 1 error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import programs
from .attack_detection import ATTACK_KINDS, AttackSpec, DetectionConfig, detect, inject_attack
from .emission_sim import SimConfig, load_recording, save_recording, simulate_recording
from .estimation import ModelSet, evaluate
from .features import build_dataset
from .gcode import load_program, serialize_program
from .harness import ExperimentConfig, modality_comparison, program_trace, run_experiment

EXIT_OK, EXIT_ERROR, EXIT_ATTACK = 0, 1, 2


def _write(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _sim_config(args) -> SimConfig:
    cfg = SimConfig.from_dict(json.loads(Path(args.sim_config).read_text())) if args.sim_config \
        else SimConfig()
    if args.noise_scale is not None:
        cfg = cfg.with_noise_scale(args.noise_scale)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_gen(args) -> int:
    _write(programs.generate(args.shape, args.rows), args.output)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _sim_config(args)
    trace = program_trace(load_program(args.program), cfg, args.control_rate)
    save_recording(simulate_recording(trace, cfg), args.output)
    return EXIT_OK


def cmd_train(args) -> int:
    dataset = build_dataset([load_recording(p) for p in args.recordings])
    table, models = modality_comparison(dataset, args.k, args.split_seed)
    models.save(args.output)
    acc = {name: {t: m.accuracy for t, m in per.items()} for name, per in table.items()}
    print(json.dumps({"held_out_accuracy": acc}, indent=1, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    models = ModelSet.load(args.models)
    dataset = build_dataset([load_recording(p) for p in args.recordings])
    if dataset.layout_digest != models.layout_digest:
        raise ValueError("recording sensors do not match the models' layout")
    result = {task: evaluate(m, dataset).to_dict() for task, m in models.models.items()}
    _write(json.dumps(result, indent=1, sort_keys=True) + "\n", args.output)
    return EXIT_OK


def _parse_range(text: str) -> tuple[int, int]:
    lo, _, hi = text.partition(":")
    return int(lo), int(hi)


def cmd_attack(args) -> int:
    program = load_program(args.program)
    if args.spec:
        spec = AttackSpec.from_dict(json.loads(Path(args.spec).read_text()))
    else:
        if not (args.kind and args.rows):
            raise ValueError("give --spec, or --kind together with --rows")
        offset = tuple(float(v) for v in args.offset.split(",")) if args.offset else None
        spec = AttackSpec(args.kind, _parse_range(args.rows), args.factor, offset)
    _write(serialize_program(inject_attack(program, spec)), args.output)
    return EXIT_OK


def cmd_detect(args) -> int:
    models = ModelSet.load(args.models)
    overrides = {k: v for k, v in (("window", args.window),
                                   ("duration_tolerance", args.duration_tolerance)) if v is not None}
    cfg = DetectionConfig(validation_error=dict(models.validation_error), **overrides)
    report = detect(load_program(args.program), load_recording(args.recording), models, cfg)
    _write(report.to_json(), args.output)
    print(f"verdict: {report.verdict}", file=sys.stderr)
    return EXIT_ATTACK if report.is_attack else EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.output_dir = args.output
    summary = run_experiment(cfg)
    if not cfg.output_dir:
        sys.stdout.write(summary.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="amsentry", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen", help="emit a generated .gcode program")
    s.add_argument("--shape", choices=sorted(programs.GENERATORS), default="block")
    s.add_argument("--rows", type=int, default=200)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("simulate", help="gcode -> recording directory")
    s.add_argument("program")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--sim-config")
    s.add_argument("--noise-scale", type=float)
    s.add_argument("--control-rate", type=float, default=1000.0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("train", help="recordings -> models JSON")
    s.add_argument("recordings", nargs="+")
    s.add_argument("-o", "--output", required=True)
    s.add_argument("-k", type=int, default=3)
    s.add_argument("--split-seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="models + recordings -> metrics JSON")
    s.add_argument("models")
    s.add_argument("recordings", nargs="+")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("attack", help="gcode + attack spec -> mutated gcode")
    s.add_argument("program")
    s.add_argument("--spec", help="AttackSpec as a JSON file")
    s.add_argument("--kind", choices=ATTACK_KINDS)
    s.add_argument("--rows", help="motion row range START:STOP (stop exclusive)")
    s.add_argument("--factor", type=float)
    s.add_argument("--offset", help="X,Y,Z in mm")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("detect", help="trusted gcode + recording + models -> report JSON")
    s.add_argument("program")
    s.add_argument("recording")
    s.add_argument("models")
    s.add_argument("-o", "--output")
    s.add_argument("--window", type=int)
    s.add_argument("--duration-tolerance", type=float)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("experiment", help="config JSON -> summary JSON + artifacts")
    s.add_argument("config")
    s.add_argument("-o", "--output", help="output directory (overrides the config)")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
