import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from amsentry.gcode import (
    Command,
    GCodeError,
    Word,
    format_number,
    machine_settings,
    parse_program,
    resolve_modal,
    serialize_program,
)

EXAMPLE = "G1 F2100 X5 Y6 Z1.2 E2.1"


def test_example_line_words():
    (cmd,) = parse_program(EXAMPLE)
    assert (cmd.kind, cmd.code) == ("G", 1)
    assert cmd.params == {"F": 2100.0, "X": 5.0, "Y": 6.0, "Z": 1.2, "E": 2.1}
    assert cmd.source_line == 1


def test_comments_and_blank_lines_are_skipped():
    assert parse_program("; pure comment\n\n") == []
    cmds = parse_program("; header\n\nG1 F600 X1 ; trailing\r\n\nM107\n")
    assert [c.source_line for c in cmds] == [3, 5]


def test_case_insensitive_and_optional_whitespace():
    assert parse_program("g1f2100x5y6z1.2e2.1") == parse_program(EXAMPLE)


@pytest.mark.parametrize(
    "text, line, column",
    [
        ("G1 X5 X6", 1, 7),
        ("G1 F100\nG1 X", 2, 4),
        ("G1 F100 Q3", 1, 9),
        ("G2 X1 Y1", 1, 1),
        ("M999", 1, 1),
        ("X5 Y6", 1, 1),
        ("G1 G0 X1", 1, 4),
        ("G1.5 X1", 1, 1),
        ("G92 X1", 1, 5),
    ],
)
def test_parse_errors_carry_position(text, line, column):
    with pytest.raises(GCodeError) as info:
        parse_program(text)
    assert info.value.line == line
    assert info.value.column == column


def test_exponent_letter_is_a_separate_word():
    (cmd,) = parse_program("G1 X1e3")
    assert cmd.params == {"X": 1.0, "E": 3.0}


def test_modal_inheritance():
    moves = resolve_modal(parse_program(f"{EXAMPLE}\nG1 X10"))
    assert moves[1].target == (10.0, 6.0, 1.2)
    assert moves[1].feedrate == 2100.0
    assert moves[1].extrusion_target == 2.1
    assert moves[1].start == (5.0, 6.0, 1.2)


def test_empty_program_resolves_to_nothing():
    assert resolve_modal([]) == []


def test_machine_commands_consume_no_row():
    cmds = parse_program("M104 S200\nG1 F600 X1")
    moves = resolve_modal(cmds)
    assert len(moves) == 1
    assert moves[0].target == (1.0, 0.0, 0.0)
    assert moves[0].feedrate == 600.0
    assert machine_settings(cmds)[0].params == {"S": 200.0}


def test_motion_before_feedrate_is_an_error():
    with pytest.raises(GCodeError) as info:
        resolve_modal(parse_program("M106 S255\nG1 X5"))
    assert info.value.line == 2


def test_origin_and_homing():
    moves = resolve_modal(parse_program("G1 F600 X5 Y5\nG28 X0\nG1 Y7"), origin=(1, 2, 3))
    assert moves[0].start == (1.0, 2.0, 3.0)
    assert moves[1].start == (1.0, 5.0, 3.0)
    assert moves[1].target == (1.0, 7.0, 3.0)


def test_extrusion_reset():
    moves = resolve_modal(parse_program("G1 F600 X1 E5\nG92 E0\nG1 X2 E1"))
    assert moves[1].extrusion_start == 0.0
    assert moves[1].extrusion_target == 1.0


def test_serialize_canonical_order():
    assert serialize_program(parse_program("G1 F2100 E2.1 Z1.2 Y6 X5")) == "G1 X5 Y6 Z1.2 E2.1 F2100\n"
    assert serialize_program([]) == ""


def test_example_round_trip_fixed_point():
    once = parse_program(EXAMPLE)
    twice = parse_program(serialize_program(once))
    assert once == twice
    assert serialize_program(twice) == serialize_program(once)


def staircase(n):
    lines = ["G1 F1200 X0 Y0 Z0.2 E0"]
    for i in range(1, n):
        axis = "X" if i % 2 else "Y"
        lines.append(f"G1 {axis}{i * 0.4:.1f} E{i * 0.0133:.4f}")
    return "\n".join(lines)


def test_thousand_line_staircase_round_trips():
    cmds = parse_program(staircase(1000))
    assert len(cmds) == 1000
    assert parse_program(serialize_program(cmds)) == cmds


def test_format_number_is_positional_and_exact():
    for v in (1e-7, 123456789.125, 0.1, -0.0, 2.5e-5, 1 / 3):
        text = format_number(v)
        assert "e" not in text.lower()
        assert float(text) == v


finite = st.floats(min_value=-1e4, max_value=1e4, allow_nan=False, allow_infinity=False)


@st.composite
def programs(draw):
    n = draw(st.integers(0, 30))
    cmds = []
    for _ in range(n):
        kind = draw(st.sampled_from(["G1", "G0", "M104", "G92", "M107"]))
        if kind in ("G0", "G1"):
            letters = draw(st.lists(st.sampled_from("XYZE"), unique=True, max_size=4))
            words = [Word(l, draw(finite)) for l in letters]
            words.append(Word("F", draw(st.floats(1.0, 6000.0))))
            cmds.append(Command("G", int(kind[1]), tuple(words)))
        elif kind == "M104":
            cmds.append(Command("M", 104, (Word("S", draw(finite)),)))
        elif kind == "G92":
            cmds.append(Command("G", 92, (Word("E", draw(finite)),)))
        else:
            cmds.append(Command("M", 107))
    return cmds


@settings(max_examples=150, deadline=None)
@given(programs())
def test_round_trip_preserves_resolution(cmds):
    text = serialize_program(cmds)
    parsed = parse_program(text)
    assert parsed == cmds
    again = parse_program(serialize_program(parsed))
    assert resolve_modal(again) == resolve_modal(parsed)


@settings(max_examples=100, deadline=None)
@given(programs())
def test_provenance_monotone_and_resolution_prefix_stable(cmds):
    parsed = parse_program(serialize_program(cmds))
    lines = [c.source_line for c in parsed]
    assert all(a < b for a, b in zip(lines, lines[1:]))
    full = resolve_modal(parsed)
    for k in range(len(parsed) + 1):
        part = resolve_modal(parsed[:k])
        assert full[: len(part)] == part


def test_word_rejects_non_finite():
    with pytest.raises(ValueError):
        Word("X", float("nan"))
    with pytest.raises(ValueError):
        Command("G", 1, (Word("X", 1.0), Word("X", 2.0)))
