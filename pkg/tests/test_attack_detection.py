import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from amsentry import programs
from amsentry.attack_detection import (
    AttackError,
    AttackSpec,
    DetectionConfig,
    detect,
    inject_attack,
    localize,
    window_rates,
)
from amsentry.emission_sim import SensorSpec, SimConfig, simulate_recording
from amsentry.estimation import LayoutMismatchError
from amsentry.gcode import parse_program, resolve_modal, serialize_program
from amsentry.harness import program_trace
from amsentry.kinematics import plan_segments, total_duration


def extrusion_total(program):
    return math.fsum(m.extrusion_target - m.extrusion_start for m in resolve_modal(program))


def duration(program):
    return total_duration(plan_segments(resolve_modal(program), max_step_rate=None))


@pytest.fixture(scope="module")
def hundred():
    return parse_program(programs.generate("block", 100))


def test_spec_validation():
    with pytest.raises(AttackError):
        AttackSpec("feedrate_scale", (0, 5), factor=1.0)
    with pytest.raises(AttackError):
        AttackSpec("feedrate_scale", (0, 5), factor=-2.0)
    with pytest.raises(AttackError):
        AttackSpec("void", (5, 5))
    with pytest.raises(AttackError):
        AttackSpec("reroute", (0, 5), offset=(0, 0, 0))
    with pytest.raises(AttackError):
        AttackSpec("melt", (0, 5))
    spec = AttackSpec("reroute", (3, 9), offset=(2, 0, 0))
    assert AttackSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_feedrate_doubling_halves_duration(hundred):
    attacked = inject_attack(hundred, AttackSpec("feedrate_scale", (0, 100), factor=2.0))
    a, b = resolve_modal(hundred), resolve_modal(parse_program(serialize_program(attacked)))
    assert [m.feedrate * 2 for m in a] == [m.feedrate for m in b]
    assert [m.target for m in a] == [m.target for m in b]
    assert duration(attacked) == duration(hundred) / 2


def test_void_removes_rows_and_extrusion(hundred):
    attacked = inject_attack(hundred, AttackSpec("void", (10, 15)))
    moves = resolve_modal(hundred)
    after = resolve_modal(attacked)
    assert len(after) == 96
    removed = math.fsum(m.extrusion_target - m.extrusion_start for m in moves[10:15])
    assert extrusion_total(attacked) == pytest.approx(extrusion_total(hundred) - removed, abs=1e-9)
    assert after[10].target == moves[14].target
    assert after[10].extrusion_target == after[10].extrusion_start
    for a, b in zip(moves[15:], after[11:]):
        assert (a.target, a.feedrate, a.extrusion_target) == (b.target, b.feedrate, b.extrusion_target)


def test_reroute_offsets_only_the_range(hundred):
    attacked = inject_attack(hundred, AttackSpec("reroute", (20, 25), offset=(2, 0, 0)))
    a, b = resolve_modal(hundred), resolve_modal(attacked)
    for r in range(100):
        shift = (2.0, 0.0, 0.0) if 20 <= r < 25 else (0.0, 0.0, 0.0)
        assert b[r].target == pytest.approx(tuple(x + s for x, s in zip(a[r].target, shift)))


def test_extrusion_scale(hundred):
    attacked = inject_attack(hundred, AttackSpec("extrusion_scale", (30, 40), factor=0.5))
    a, b = resolve_modal(hundred), resolve_modal(attacked)
    for r in range(30, 40):
        de_a = a[r].extrusion_target - a[r].extrusion_start
        de_b = b[r].extrusion_target - b[r].extrusion_start
        assert de_b == pytest.approx(0.5 * de_a, abs=1e-9)
    assert [m.extrusion_target for m in a[40:]] == [m.extrusion_target for m in b[40:]]


def test_range_beyond_program_and_step_limit(hundred):
    with pytest.raises(AttackError, match="exceeds"):
        inject_attack(hundred, AttackSpec("void", (95, 120)))
    with pytest.raises(AttackError, match="invalid"):
        inject_attack(hundred, AttackSpec("feedrate_scale", (0, 100), factor=5.0))


@settings(max_examples=60, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    kind=st.sampled_from(["feedrate_scale", "void", "reroute", "extrusion_scale"]),
    lo=st.integers(0, 99),
    span=st.integers(1, 30),
    factor=st.sampled_from([0.5, 0.8, 1.5, 2.0]),
    offset=st.sampled_from([(2.0, 0.0, 0.0), (0.0, -1.0, 0.0), (0.0, 0.0, 0.4)]),
)
def test_mutations_stay_valid_and_local(hundred, kind, lo, span, factor, offset):
    hi = min(lo + span, 100)
    spec = AttackSpec(kind, (lo, hi), factor=factor, offset=offset)
    attacked = inject_attack(hundred, spec, max_step_rate=None)
    reparsed = parse_program(serialize_program(attacked))
    before, after = resolve_modal(hundred), resolve_modal(reparsed)
    plan_segments(after, max_step_rate=None)
    key = lambda m: (m.target, m.feedrate, m.extrusion_target)
    assert [key(m) for m in before[:lo]] == [key(m) for m in after[:lo]]
    tail_offset = lo + 1 - hi if kind == "void" else 0
    assert [key(m) for m in before[hi:]] == [key(m) for m in after[hi + tail_offset:]]


def test_threshold_formula():
    cfg = DetectionConfig(window=20, validation_error={"a": 0.1, "b": 0.0})
    assert cfg.threshold("a") == pytest.approx(0.1 + 3 * math.sqrt(0.09 / 20), abs=1e-15)
    assert cfg.threshold("a") == pytest.approx(0.30124611797498, abs=1e-12)
    assert cfg.threshold("b") == 0.15
    with pytest.raises(ValueError):
        DetectionConfig(validation_error={"a": 1.0})


def test_window_rates_and_localize():
    m = np.zeros(30, dtype=bool)
    m[10:16] = True
    rates = window_rates(m, 5)
    brute = [m[i:i + 5].mean() for i in range(26)]
    assert rates.tolist() == pytest.approx(brute)
    spans = localize(rates, 0.5, 5, list(range(100, 130)))
    assert spans == [(108, 117)]
    assert window_rates(m[:3], 5).tolist() == [0.0]
    assert window_rates(np.zeros(0, bool), 5).size == 0


def run(program, seed):
    cfg = SimConfig(seed=seed)
    return simulate_recording(program_trace(program, cfg), cfg)


def check_consistency(report):
    assert report.recompute_verdict() == report.verdict
    w = report.config.window
    for t in report.tasks.values():
        assert t.mismatch == [a != b for a, b in zip(t.inferred, t.expected)]
        m = np.array(t.mismatch, dtype=float)
        w_eff = min(w, len(m))
        assert t.window_rates == pytest.approx([m[i:i + w_eff].mean() for i in range(len(m) - w_eff + 1)])
    d = json.loads(report.to_json())
    assert d["verdict"] == report.verdict


def test_benign_run_is_benign(small_program, small_models):
    report = detect(small_program, run(small_program, 77), small_models)
    check_consistency(report)
    assert report.verdict == "benign"
    assert report.reasons == []
    assert report.duration_check.passed


def test_feedrate_attack_is_flagged(small_program, small_models):
    attacked = inject_attack(small_program, AttackSpec("feedrate_scale", (0, 60), factor=2.0))
    report = detect(small_program, run(attacked, 78), small_models)
    check_consistency(report)
    assert report.verdict == "attack"
    assert report.duration_check.observed == pytest.approx(report.duration_check.expected / 2, rel=1e-3)
    assert "duration mismatch" in report.reasons


def test_void_attack_is_flagged_and_localized(small_program, small_models):
    attacked = inject_attack(small_program, AttackSpec("void", (20, 40)))
    report = detect(small_program, run(attacked, 79), small_models)
    check_consistency(report)
    assert report.verdict == "attack"
    assert any(lo <= 40 and hi >= 20 for lo, hi in report.localized)


def test_truncated_recording(small_program, small_models):
    rec = run(small_program, 80)
    rec.channels = {k: v[: len(v) // 3] for k, v in rec.channels.items()}
    report = detect(small_program, rec, small_models)
    check_consistency(report)
    assert report.reasons[0] == "truncated run"
    assert -1 in report.tasks["axis_x"].inferred


def test_layout_mismatch(small_program, small_models):
    cfg = SimConfig(sensors=(SensorSpec("acoustic", "mic1", 8000.0, (1, 1, 1, 1)),))
    rec = simulate_recording(program_trace(small_program, cfg), cfg)
    with pytest.raises(LayoutMismatchError):
        detect(small_program, rec, small_models)
