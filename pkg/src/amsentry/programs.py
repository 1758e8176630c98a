"""Built-in schematic print programs.

These stand in for sliced parts: a rectangular block with zig-zag infill,
a gear-like toothed ring and a wrench-like outline. Each generator emits
exactly ``rows`` motion rows, stacking layers until the budget is used.
Speeds stay low enough that doubling any feedrate keeps every stepper below
the 4 kHz limit of the default microphones.
"""
from __future__ import annotations

import math

from .gcode import format_number

LAYER_HEIGHT = 0.2
E_PER_MM = 0.0333
RETRACT = 0.8

F_Z = 240.0
F_TRAVEL = 1440.0
F_PERIMETER = 900.0
F_INFILL = 1200.0
F_RETRACT = 1200.0

HEADER = ("M140 S60", "M104 S210", "G28", "G92 E0", "M106 S255")


class _Budget(Exception):
    pass


class _Writer:
    def __init__(self, rows: int):
        if rows < 1:
            raise ValueError("rows must be positive")
        self.rows = rows
        self.count = 0
        self.lines = list(HEADER)
        self.x = self.y = self.z = 0.0
        self.e = 0.0

    def _emit(self, code: str, **words):
        if self.count >= self.rows:
            raise _Budget
        parts = [code] + [f"{k}{format_number(round(v, 4))}" for k, v in words.items()]
        self.lines.append(" ".join(parts))
        self.count += 1

    def travel(self, x, y):
        self._emit("G0", X=x, Y=y, F=F_TRAVEL)
        self.x, self.y = x, y

    def extrude_to(self, x, y, feed):
        dist = math.hypot(x - self.x, y - self.y)
        self.e = round(self.e + dist * E_PER_MM, 4)
        self._emit("G1", X=x, Y=y, E=self.e, F=feed)
        self.x, self.y = x, y

    def layer(self, index: int):
        if index > 0:
            self._emit("G1", E=self.e - RETRACT, F=F_RETRACT)
        self.z = round(LAYER_HEIGHT * (index + 1), 4)
        self._emit("G1", Z=self.z, F=F_Z)

    def unretract(self, index: int):
        if index > 0:
            self._emit("G1", E=self.e, F=F_RETRACT)

    def text(self) -> str:
        return "\n".join(self.lines + ["M107", "M104 S0", "M140 S0"]) + "\n"


def _fill(rows: int, layer_fn) -> str:
    w = _Writer(rows)
    try:
        index = 0
        while True:
            layer_fn(w, index)
            index += 1
    except _Budget:
        pass
    return w.text()


def block_program(rows: int = 200, width: float = 8.0, height: float = 12.0,
                  origin=(10.0, 10.0), spacing: float = 0.8) -> str:
    """Rectangular block: perimeter plus zig-zag infill along X."""
    x0, y0 = origin

    def layer(w: _Writer, index: int):
        w.layer(index)
        w.travel(x0, y0)
        w.unretract(index)
        for x, y in ((x0 + width, y0), (x0 + width, y0 + height), (x0, y0 + height), (x0, y0)):
            w.extrude_to(x, y, F_PERIMETER)
        left, right = x0 + spacing, x0 + width - spacing
        y = y0 + spacing
        w.extrude_to(left, y, F_INFILL)
        go_right = True
        while y + spacing <= y0 + height - spacing + 1e-9:
            w.extrude_to(right if go_right else left, y, F_INFILL)
            y = round(y + spacing, 4)
            w.extrude_to(w.x, y, F_INFILL)
            go_right = not go_right

    return _fill(rows, layer)


def gear_program(rows: int = 200, teeth: int = 12, root: float = 8.0, tip: float = 10.0,
                 center=(20.0, 20.0)) -> str:
    """Toothed ring traced once per layer."""
    cx, cy = center
    pts = []
    for i in range(teeth):
        a0 = 2 * math.pi * i / teeth
        step = 2 * math.pi / teeth / 4
        for j, r in enumerate((root, tip, tip, root)):
            a = a0 + j * step
            pts.append((round(cx + r * math.cos(a), 4), round(cy + r * math.sin(a), 4)))

    def layer(w: _Writer, index: int):
        w.layer(index)
        w.travel(*pts[0])
        w.unretract(index)
        for p in pts[1:] + pts[:1]:
            w.extrude_to(*p, F_PERIMETER)

    return _fill(rows, layer)


def wrench_program(rows: int = 200, length: float = 40.0, width: float = 6.0,
                   origin=(10.0, 20.0)) -> str:
    """Open-ended wrench outline: handle with a jaw at one end, a ring at the other."""
    x0, y0 = origin
    hw = width / 2
    jaw = [(x0 + length, y0 - hw), (x0 + length + 4, y0 - 5), (x0 + length + 9, y0 - 4),
           (x0 + length + 6, y0 - 1.5), (x0 + length + 6, y0 + 1.5),
           (x0 + length + 9, y0 + 4), (x0 + length + 4, y0 + 5), (x0 + length, y0 + hw)]
    ring = [(x0 - 5 * math.cos(a), y0 + 5 * math.sin(a))
            for a in (math.pi / 2 - k * math.pi / 8 for k in range(9))]
    pts = [(x0, y0 - hw)] + jaw + [(x0, y0 + hw)]
    pts += [(round(x, 4), round(y, 4)) for x, y in ring[1:-1]]

    def layer(w: _Writer, index: int):
        w.layer(index)
        w.travel(*pts[0])
        w.unretract(index)
        for i, p in enumerate(pts[1:] + pts[:1]):
            w.extrude_to(*p, F_INFILL if i in (0, len(jaw)) else F_PERIMETER)

    return _fill(rows, layer)


GENERATORS = {"block": block_program, "gear": gear_program, "wrench": wrench_program}


def generate(name: str, rows: int = 200) -> str:
    try:
        fn = GENERATORS[name]
    except KeyError:
        raise ValueError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return fn(rows)
