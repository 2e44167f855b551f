"""Geometry of the dynamic-resolution visual tokenizer.

Images are resized to a pixel budget whose sides are multiples of the
effective cell size, then partitioned row-major into ``rows x cols`` cells,
one visual token per cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError

# absorbs float noise such as 96 * sqrt(65536 / 9216) == 255.99999999999997
_EPS = 1e-9


@dataclass(frozen=True)
class GridConfig:
    cell: int = 32
    min_pixels: int = 32 * 32 * 64
    max_pixels: int = 32 * 32 * 2048

    def __post_init__(self):
        if self.cell <= 0:
            raise ValidationError(f"cell must be positive, got {self.cell}")
        if not 0 < self.min_pixels <= self.max_pixels:
            raise ValidationError(
                f"need 0 < min_pixels <= max_pixels, got {self.min_pixels}, {self.max_pixels}"
            )
        area = self.cell * self.cell
        for name in ("min_pixels", "max_pixels"):
            if getattr(self, name) % area:
                raise ValidationError(f"{name} must be a multiple of cell^2 = {area}")


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    cell: int

    @property
    def height(self) -> int:
        return self.rows * self.cell

    @property
    def width(self) -> int:
        return self.cols * self.cell

    @property
    def token_count(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class WordBox:
    """One OCR word with its pixel-space bounding box."""

    text: str
    x0: float
    y0: float
    x1: float
    y1: float
    confidence: float | None = None

    def __post_init__(self):
        if not self.text:
            raise ValidationError("word text must be non-empty")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValidationError(
                f"degenerate box for {self.text!r}: ({self.x0}, {self.y0}, {self.x1}, {self.y1})"
            )

    @property
    def height(self) -> float:
        return self.y1 - self.y0


def _floor_to(x: float, f: int) -> int:
    return int(math.floor(x / f + _EPS)) * f


def _ceil_to(x: float, f: int) -> int:
    return int(math.ceil(x / f - _EPS)) * f


def smart_resize(h: int, w: int, cfg: GridConfig = GridConfig()) -> tuple[int, int]:
    """Resize ``(h, w)`` to multiples of ``cfg.cell`` inside the pixel budget.

    In-budget shapes are rounded to the nearest multiple; over-budget shapes
    are scaled down uniformly and floored, under-budget shapes scaled up and
    ceiled. Raises ValidationError when no multiple-of-cell shape with the
    source aspect fits.
    """
    if h < 1 or w < 1:
        raise ValidationError(f"image dims must be >= 1, got ({h}, {w})")
    f = cfg.cell
    hb = max(f, int(round(h / f)) * f)
    wb = max(f, int(round(w / f)) * f)
    if hb * wb > cfg.max_pixels:
        scale = math.sqrt(cfg.max_pixels / (h * w))
        hb = max(f, _floor_to(h * scale, f))
        wb = max(f, _floor_to(w * scale, f))
    elif hb * wb < cfg.min_pixels:
        scale = math.sqrt(cfg.min_pixels / (h * w))
        hb = _ceil_to(h * scale, f)
        wb = _ceil_to(w * scale, f)
    px = hb * wb
    if px > cfg.max_pixels:
        raise ValidationError(
            f"max_pixels={cfg.max_pixels} unsatisfiable for ({h}, {w}): "
            f"aspect ratio too extreme, best shape ({hb}, {wb}) has {px} px"
        )
    if px < cfg.min_pixels:
        raise ValidationError(
            f"min_pixels={cfg.min_pixels} unsatisfiable for ({h}, {w}): "
            f"best shape ({hb}, {wb}) has {px} px"
        )
    return hb, wb


def grid_of(h: int, w: int, cell: int) -> PatchGrid:
    if h <= 0 or w <= 0 or h % cell or w % cell:
        raise ValidationError(f"({h}, {w}) is not a positive multiple of cell {cell}")
    return PatchGrid(rows=h // cell, cols=w // cell, cell=cell)


def token_index(grid: PatchGrid, x: float, y: float) -> int:
    """Row-major index of the cell holding the point ``(x, y)``.

    Points on a cell boundary belong to the cell above-left, so a
    bottom-right corner lying exactly on a grid line maps to the cell
    whose ink it closes.
    """
    if not (0 <= x <= grid.width and 0 <= y <= grid.height):
        raise ValidationError(
            f"point ({x}, {y}) outside image {grid.width}x{grid.height}"
        )
    col = min(int(math.floor(max(x - 1, 0) / grid.cell)), grid.cols - 1)
    row = min(int(math.floor(max(y - 1, 0) / grid.cell)), grid.rows - 1)
    return row * grid.cols + col


def scale_box(b: WordBox, src: tuple[int, int], dst: tuple[int, int]) -> WordBox:
    """Scale a box from ``src=(h, w)`` image space into ``dst=(h', w')``."""
    (h, w), (h2, w2) = src, dst
    if min(h, w, h2, w2) <= 0:
        raise ValidationError(f"dims must be positive: {src} -> {dst}")
    if (h, w) == (h2, w2):
        return b
    sy, sx = h2 / h, w2 / w
    return WordBox(b.text, b.x0 * sx, b.y0 * sy, b.x1 * sx, b.y1 * sy, b.confidence)
