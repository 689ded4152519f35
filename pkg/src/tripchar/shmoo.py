"""Shmoo plots: pass counts over (swept parameter x, condition y) with many tests overlaid."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .dut_sim import DeviceModel, measure
from .stimulus import TestStimulus


class ShmooError(ValueError):
    pass


@dataclass(frozen=True)
class Axis:
    name: str
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ShmooError(f"axis {self.name}: need lo < hi")
        if not self.step > 0:
            raise ShmooError(f"axis {self.name}: step must be > 0")

    @property
    def n(self) -> int:
        return int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1

    def values(self) -> np.ndarray:
        return self.lo + self.step * np.arange(self.n)

    @classmethod
    def parse(cls, text: str) -> "Axis":
        """``name:lo:hi:step``"""
        try:
            name, lo, hi, step = text.split(":")
            return cls(name, float(lo), float(hi), float(step))
        except ValueError as exc:
            raise ShmooError(f"bad axis {text!r}; expected name:lo:hi:step") from exc


@dataclass
class ShmooGrid:
    x_axis: Axis
    y_axis: Axis
    cells: np.ndarray  # (ny, nx) pass counts; row i is y_axis.values()[i]
    n_tests: int


def build_shmoo(model: DeviceModel, tests: Sequence[TestStimulus], x_axis: Axis, y_axis: Axis) -> ShmooGrid:
    """Count, per cell, the tests that pass with condition y overridden and parameter x applied."""
    if y_axis.name not in model.features.gen.condition_names:
        raise ShmooError(f"unknown condition {y_axis.name!r}")
    xs, ys = x_axis.values(), y_axis.values()
    if xs[0] < model.lo or xs[-1] > model.hi:
        raise ShmooError(f"x axis [{xs[0]}, {xs[-1]}] outside device range [{model.lo}, {model.hi}]")
    cells = np.zeros((len(ys), len(xs)), dtype=np.int64)
    for t in tests:
        for i, y in enumerate(ys):
            s = t.with_conditions(**{y_axis.name: float(y)})
            for j, x in enumerate(xs):
                if measure(model, s, float(x)).passed:
                    cells[i, j] += 1
    return ShmooGrid(x_axis, y_axis, cells, len(tests))


def _level(frac: float) -> int:
    if frac <= 0:
        return 0
    if frac <= 0.5:
        return 1
    if frac < 1:
        return 2
    return 3


ASCII_LEVELS = " .o#"
SVG_COLORS = ("#ffffff", "#f4c542", "#7fbf5f", "#2e7d32")


def _fmt(v: float) -> str:
    return repr(float(v))


def render_ascii(grid: ShmooGrid) -> str:
    ys = grid.y_axis.values()
    xs = grid.x_axis.values()
    label_w = max(len(f"{y:g}") for y in ys)
    lines = [f"{grid.y_axis.name} \\ {grid.x_axis.name}  ({grid.n_tests} tests; ' '=0 '.'<=50% 'o'<100% '#'=100%)"]
    for i in range(len(ys) - 1, -1, -1):
        row = "".join(
            ASCII_LEVELS[_level(c / grid.n_tests if grid.n_tests else 0.0)] for c in grid.cells[i]
        )
        lines.append(f"{ys[i]:>{label_w}g} |{row}|")
    lines.append(" " * label_w + " +" + "-" * len(xs) + "+")
    lines.append(" " * (label_w + 2) + f"{xs[0]:g} .. {xs[-1]:g} step {grid.x_axis.step:g}")
    return "\n".join(lines) + "\n"


def render_csv(grid: ShmooGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{grid.y_axis.name}\\{grid.x_axis.name}"] + [_fmt(x) for x in grid.x_axis.values()])
    for y, row in zip(grid.y_axis.values(), grid.cells):
        w.writerow([_fmt(y)] + [int(c) for c in row])
    return buf.getvalue()


def render_svg(grid: ShmooGrid, cell: int = 12) -> str:
    ys, xs = grid.y_axis.values(), grid.x_axis.values()
    margin = 60
    width, height = margin + cell * len(xs) + 10, margin + cell * len(ys) + 10
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="10">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for i in range(len(ys)):
        top = 10 + cell * (len(ys) - 1 - i)
        for j in range(len(xs)):
            frac = grid.cells[i, j] / grid.n_tests if grid.n_tests else 0.0
            parts.append(
                f'<rect x="{margin + cell * j}" y="{top}" width="{cell}" height="{cell}" '
                f'fill="{SVG_COLORS[_level(frac)]}" stroke="#dddddd" stroke-width="0.5"/>'
            )
        parts.append(f'<text x="{margin - 4}" y="{top + cell - 2}" text-anchor="end">{ys[i]:g}</text>')
    base = 10 + cell * len(ys)
    parts.append(f'<text x="{margin}" y="{base + 14}">{xs[0]:g}</text>')
    parts.append(f'<text x="{margin + cell * len(xs)}" y="{base + 14}" text-anchor="end">{xs[-1]:g}</text>')
    parts.append(
        f'<text x="{margin + cell * len(xs) // 2}" y="{base + 28}" text-anchor="middle">{escape(grid.x_axis.name)}</text>'
    )
    parts.append(
        f'<text x="12" y="{10 + cell * len(ys) // 2}" transform="rotate(-90 12 {10 + cell * len(ys) // 2})" '
        f'text-anchor="middle">{escape(grid.y_axis.name)}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_shmoo(grid: ShmooGrid, fmt: str = "ascii") -> str:
    renderers = {"ascii": render_ascii, "csv": render_csv, "svg": render_svg}
    if fmt not in renderers:
        raise ShmooError(f"unsupported format {fmt!r}")
    return renderers[fmt](grid)


def parse_csv(text: str, x_step: float | None = None, y_step: float | None = None, n_tests: int | None = None) -> ShmooGrid:
    """Inverse of ``render_csv``; steps are inferred from the header/first column when omitted."""
    rows = list(csv.reader(io.StringIO(text)))
    head = rows[0]
    y_name, x_name = head[0].split("\\", 1)
    xs = [float(v) for v in head[1:]]
    ys = [float(r[0]) for r in rows[1:]]
    cells = np.array([[int(c) for c in r[1:]] for r in rows[1:]], dtype=np.int64)
    xstep = x_step if x_step is not None else (xs[1] - xs[0] if len(xs) > 1 else 1.0)
    ystep = y_step if y_step is not None else (ys[1] - ys[0] if len(ys) > 1 else 1.0)
    return ShmooGrid(
        Axis(x_name, xs[0], xs[-1], xstep),
        Axis(y_name, ys[0], ys[-1], ystep),
        cells,
        n_tests if n_tests is not None else int(cells.max(initial=0)),
    )


def per_test_boundaries(model: DeviceModel, t: TestStimulus, x_axis: Axis, y_axis: Axis) -> list[int]:
    """Per row, the number of passing x cells for a single test (its step position)."""
    g = build_shmoo(model, [t], x_axis, y_axis)
    return [int(r.sum()) for r in g.cells]
