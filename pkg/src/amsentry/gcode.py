"""G/M-code parsing, serialization and modal resolution.

The accepted dialect is deliberately closed: ``G0``/``G1`` linear moves,
``G28`` homing, ``G92 E`` extrusion reset, and the heater/fan codes
``M104``, ``M140``, ``M106``, ``M107``. Coordinates and extrusion are
absolute. Anything else is a parse error.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PARAMETER_ORDER = "XYZEFST"
LETTERS = frozenset("GM" + PARAMETER_ORDER)

# code -> parameter letters it accepts
G_CODES = {0: "XYZEF", 1: "XYZEF", 28: "XYZ", 92: "E"}
M_CODES = {104: "ST", 140: "ST", 106: "ST", 107: "T"}

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")


class GCodeError(ValueError):
    """Raised for malformed programs; carries the 1-based line and column."""

    def __init__(self, message: str, line: int, column: int | None = None):
        self.line = line
        self.column = column
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class Word:
    letter: str
    value: float

    def __post_init__(self):
        if self.letter not in LETTERS:
            raise ValueError(f"unknown word letter {self.letter!r}")
        if not np.isfinite(self.value):
            raise ValueError(f"non-finite value for {self.letter}")


@dataclass(frozen=True)
class Command:
    """One G or M command with its parameter words in canonical order.

    ``source_line`` is provenance only and does not take part in equality,
    so a serialized-then-reparsed program compares equal to the original.
    """

    kind: str
    code: int
    words: tuple[Word, ...] = ()
    source_line: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in ("G", "M"):
            raise ValueError(f"command kind must be 'G' or 'M', got {self.kind!r}")
        letters = [w.letter for w in self.words]
        if len(set(letters)) != len(letters):
            raise ValueError("duplicate parameter in command")
        if any(letter in "GM" for letter in letters):
            raise ValueError("parameter words may not be G or M")
        ordered = tuple(sorted(self.words, key=lambda w: PARAMETER_ORDER.index(w.letter)))
        object.__setattr__(self, "words", ordered)

    @property
    def params(self) -> dict[str, float]:
        return {w.letter: w.value for w in self.words}

    def get(self, letter: str, default=None):
        for w in self.words:
            if w.letter == letter:
                return w.value
        return default

    @property
    def is_motion(self) -> bool:
        return self.kind == "G" and self.code in (0, 1)

    def replace_words(self, **values: float | None) -> "Command":
        """Return a copy with the given parameters set (``None`` removes one)."""
        params = self.params
        for letter, value in values.items():
            if value is None:
                params.pop(letter, None)
            else:
                params[letter] = float(value)
        words = tuple(Word(k, v) for k, v in params.items())
        return Command(self.kind, self.code, words, self.source_line)


@dataclass(frozen=True)
class ResolvedMove:
    """A motion row with modal state filled in.

    ``start`` and ``extrusion_start`` are the machine state just before the
    row; they differ from the previous row's targets only across ``G28`` or
    ``G92``.
    """

    row_id: int
    start: tuple[float, float, float]
    target: tuple[float, float, float]
    extrusion_start: float
    extrusion_target: float
    feedrate: float
    source_line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class MachineSetting:
    source_line: int
    code: int
    params: dict


def _split_comment(line: str) -> str:
    return line.split(";", 1)[0]


def _tokenize(code: str, lineno: int) -> list[tuple[str, float, int]]:
    tokens = []
    pos = 0
    n = len(code)
    while pos < n:
        ch = code[pos]
        if ch.isspace():
            pos += 1
            continue
        column = pos + 1
        letter = ch.upper()
        if not ("A" <= letter <= "Z"):
            raise GCodeError(f"unexpected character {ch!r}", lineno, column)
        if letter not in LETTERS:
            raise GCodeError(f"unknown word letter {ch!r}", lineno, column)
        m = _NUMBER.match(code, pos + 1)
        if m is None:
            raise GCodeError(f"letter {letter} without a number", lineno, column)
        tokens.append((letter, float(m.group()), column))
        pos = m.end()
    return tokens


def _build_command(tokens: list[tuple[str, float, int]], lineno: int) -> Command:
    heads = [t for t in tokens if t[0] in "GM"]
    if not heads:
        raise GCodeError("line has parameters but no G or M word", lineno, tokens[0][2])
    if len(heads) > 1:
        raise GCodeError("more than one G/M word on a line", lineno, heads[1][2])
    kind, number, column = heads[0]
    if number != int(number):
        raise GCodeError(f"unsupported code {kind}{number:g}", lineno, column)
    code = int(number)
    table = G_CODES if kind == "G" else M_CODES
    if code not in table:
        raise GCodeError(f"unsupported code {kind}{code}", lineno, column)
    allowed = table[code]
    seen: set[str] = set()
    words = []
    for letter, value, col in tokens:
        if letter in "GM":
            continue
        if letter in seen:
            raise GCodeError(f"duplicate parameter {letter}", lineno, col)
        if letter not in allowed:
            raise GCodeError(f"parameter {letter} not accepted by {kind}{code}", lineno, col)
        seen.add(letter)
        words.append(Word(letter, value))
    return Command(kind, code, tuple(words), lineno)


def parse_program(text: str) -> list[Command]:
    """Parse program text into commands, one per non-blank, non-comment line.

    Raises
    ------
    GCodeError
        On any malformed word, with the offending line and column.
    """
    commands = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        code = _split_comment(raw)
        if not code.strip():
            continue
        tokens = _tokenize(code, lineno)
        commands.append(_build_command(tokens, lineno))
    return commands


def format_number(value: float) -> str:
    """Shortest round-trip decimal without exponent notation."""
    text = np.format_float_positional(float(value), trim="-", unique=True)
    return "0" if text == "-0" else text


def serialize_program(commands: Iterable[Command]) -> str:
    lines = []
    for cmd in commands:
        parts = [f"{cmd.kind}{cmd.code}"]
        parts.extend(f"{w.letter}{format_number(w.value)}" for w in cmd.words)
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


def load_program(path: str | Path) -> list[Command]:
    return parse_program(Path(path).read_text(encoding="utf-8"))


def _resolve(commands: Sequence[Command], origin=(0.0, 0.0, 0.0)):
    """Resolve modal state; returns moves and the command index of each."""
    origin = tuple(float(v) for v in origin)
    if len(origin) != 3 or not all(np.isfinite(origin)):
        raise ValueError("origin must be a finite 3-vector")
    pos = list(origin)
    e = 0.0
    feed: float | None = None
    moves: list[ResolvedMove] = []
    index: list[int] = []
    for ci, cmd in enumerate(commands):
        if cmd.kind == "M":
            continue
        params = cmd.params
        if cmd.code == 28:
            axes = [a for a in "XYZ" if a in params] or list("XYZ")
            for a in axes:
                pos["XYZ".index(a)] = origin["XYZ".index(a)]
            continue
        if cmd.code == 92:
            e = params.get("E", e)
            continue
        if "F" in params:
            if params["F"] <= 0:
                raise GCodeError("feedrate must be positive", cmd.source_line)
            feed = params["F"]
        if feed is None:
            raise GCodeError("motion before any feedrate is set", cmd.source_line)
        target = tuple(params.get(a, pos[i]) for i, a in enumerate("XYZ"))
        e_target = params.get("E", e)
        moves.append(
            ResolvedMove(len(moves), tuple(pos), target, e, e_target, feed, cmd.source_line)
        )
        index.append(ci)
        pos = list(target)
        e = e_target
    return moves, index


def resolve_modal(commands: Sequence[Command], origin=(0.0, 0.0, 0.0)) -> list[ResolvedMove]:
    """Turn commands into absolute per-row moves.

    Omitted axes, E and F inherit the previous values. Machine commands,
    ``G28`` and ``G92`` change state without producing a row.
    """
    return _resolve(commands, origin)[0]


def machine_settings(commands: Sequence[Command]) -> list[MachineSetting]:
    return [
        MachineSetting(c.source_line, c.code, c.params) for c in commands if c.kind == "M"
    ]
