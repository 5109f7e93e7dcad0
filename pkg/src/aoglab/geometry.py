"""Rectangles, layer grids, and receptive-field projection.

Grid cells are addressed as (x, y) with x the column index and y the row
index.  A cell maps to the image plane through its layer's stride and
offset: the cell center sits at ``offset_px + index * stride_px`` per axis,
and the cell's receptive field is a square of ``rf_size_px`` pixels around
that center, clipped to the image.

Pixel-coverage convention used everywhere masks are rasterized: pixel
(row i, col j) belongs to a rectangle iff its center (j + 0.5, i + 0.5)
lies in the half-open box [x, x+w) x [y, y+h).  Point-containment queries
(e.g. "does this unit center fall in an annotated region?") use closed
edges instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle in pixels, serialized as {x, y, w, h}."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise GeometryError(f"rectangle with negative extent: {self}")

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    @property
    def area(self) -> float:
        return self.w * self.h

    def contains_point(self, px: float, py: float) -> bool:
        return self.x <= px <= self.x + self.w and self.y <= py <= self.y + self.h

    def contains_rect(self, other: "Rect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and other.x + other.w <= self.x + self.w
            and other.y + other.h <= self.y + self.h
        )

    def clipped(self, width: float, height: float) -> "Rect":
        x0 = min(max(self.x, 0.0), float(width))
        y0 = min(max(self.y, 0.0), float(height))
        x1 = min(max(self.x + self.w, 0.0), float(width))
        y1 = min(max(self.y + self.h, 0.0), float(height))
        return Rect(x0, y0, x1 - x0, y1 - y0)

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, data: dict) -> "Rect":
        return cls(float(data["x"]), float(data["y"]), float(data["w"]), float(data["h"]))


def default_viz_window(grid_h: int, grid_w: int) -> int:
    """Half-window (in cells) used when masking activations for display."""
    return 3 if min(grid_h, grid_w) >= 56 else 1


def default_deform_half_extent(grid_h: int, grid_w: int) -> int:
    """Half extent of a deformation window whose side is ~1/3 of the grid."""
    side = round(min(grid_h, grid_w) / 3)
    return max(side // 2, 0)


@dataclass(frozen=True)
class LayerGeometry:
    """Shape and image-plane calibration of one feature-map layer."""

    layer_id: str
    grid_h: int
    grid_w: int
    channels: int
    stride_px: int
    rf_size_px: int
    offset_px: int = 0
    viz_window: int | None = None

    def __post_init__(self):
        if not self.layer_id:
            raise GeometryError("layer_id must be nonempty")
        if self.grid_h < 1 or self.grid_w < 1 or self.channels < 1:
            raise GeometryError(f"layer {self.layer_id}: grid and channel counts must be >= 1")
        if self.stride_px < 1:
            raise GeometryError(f"layer {self.layer_id}: stride_px must be >= 1")
        if self.rf_size_px < self.stride_px:
            raise GeometryError(f"layer {self.layer_id}: rf_size_px must be >= stride_px")
        if self.viz_window is None:
            object.__setattr__(self, "viz_window", default_viz_window(self.grid_h, self.grid_w))
        if self.viz_window < 0:
            raise GeometryError(f"layer {self.layer_id}: viz_window must be >= 0")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.grid_h, self.grid_w, self.channels)

    def in_grid(self, x: int, y: int) -> bool:
        return 0 <= x < self.grid_w and 0 <= y < self.grid_h

    def to_json(self) -> dict:
        return {
            "layer_id": self.layer_id,
            "grid_h": self.grid_h,
            "grid_w": self.grid_w,
            "channels": self.channels,
            "stride_px": self.stride_px,
            "rf_size_px": self.rf_size_px,
            "offset_px": self.offset_px,
            "viz_window": self.viz_window,
        }

    @classmethod
    def from_json(cls, data: dict) -> "LayerGeometry":
        return cls(
            layer_id=str(data["layer_id"]),
            grid_h=int(data["grid_h"]),
            grid_w=int(data["grid_w"]),
            channels=int(data["channels"]),
            stride_px=int(data["stride_px"]),
            rf_size_px=int(data["rf_size_px"]),
            offset_px=int(data.get("offset_px", 0)),
            viz_window=int(data["viz_window"]) if data.get("viz_window") is not None else None,
        )


def unit_center(g: LayerGeometry, x: int, y: int) -> tuple[float, float]:
    """Image-plane center of cell (x, y), before any clipping."""
    if not g.in_grid(x, y):
        raise GeometryError(f"cell ({x}, {y}) outside {g.grid_w}x{g.grid_h} grid of layer {g.layer_id}")
    return (float(g.offset_px + x * g.stride_px), float(g.offset_px + y * g.stride_px))


def receptive_field(g: LayerGeometry, x: int, y: int, image_w: float, image_h: float) -> Rect:
    """Receptive-field box of cell (x, y), clipped to image bounds."""
    cx, cy = unit_center(g, x, y)
    half = g.rf_size_px / 2.0
    return Rect(cx - half, cy - half, float(g.rf_size_px), float(g.rf_size_px)).clipped(image_w, image_h)


def rect_pixel_slice(rect: Rect, image_w: int, image_h: int) -> tuple[slice, slice]:
    """(row, col) slices of the pixels whose centers fall inside ``rect``."""
    col0 = max(math.ceil(rect.x - 0.5), 0)
    col1 = min(math.ceil(rect.x + rect.w - 0.5), image_w)
    row0 = max(math.ceil(rect.y - 0.5), 0)
    row1 = min(math.ceil(rect.y + rect.h - 0.5), image_h)
    return (slice(row0, max(row1, row0)), slice(col0, max(col1, col0)))


def rect_pixel_mask(rects, image_w: int, image_h: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels covered by the union of ``rects``."""
    mask = np.zeros((image_h, image_w), dtype=bool)
    for rect in rects:
        rows, cols = rect_pixel_slice(rect, image_w, image_h)
        mask[rows, cols] = True
    return mask
