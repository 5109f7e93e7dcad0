"""Pattern visualization by receptive-field projection.

Instead of inverting feature maps through a trained decoder, each pattern's
assigned unit (and the cells within the layer's viz window around it) is
splatted onto the image plane: every windowed cell paints its response
uniformly over its receptive-field box, and overlapping splats keep the
maximum so large receptive fields do not saturate the picture.  All other
activations contribute nothing, so the heatmap shows only what the parse
actually used.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from .aog import LatentPattern, ParseTree, SemanticPartAOG
from .geometry import receptive_field, rect_pixel_slice
from .tensor_store import DatasetManifest, FeatureMapSet

LAYOUT_SCHEMA_VERSION = 1


class VizError(ValueError):
    pass


def pattern_heatmap(
    fm: FeatureMapSet,
    pattern: LatentPattern,
    tree: ParseTree,
    image_size: tuple[int, int],
) -> np.ndarray:
    """Image-resolution heatmap of one pattern's windowed responses."""
    width, height = image_size
    assignment = tree.assignment(pattern.pattern_id)
    g = fm.geometry(pattern.layer_id)
    win = g.viz_window
    heat = np.zeros((height, width), dtype=np.float64)
    for y in range(max(0, assignment.y - win), min(g.grid_h - 1, assignment.y + win) + 1):
        for x in range(max(0, assignment.x - win), min(g.grid_w - 1, assignment.x + win) + 1):
            resp = float(fm.layers[pattern.layer_id][y, x, pattern.channel])
            rect = receptive_field(g, x, y, width, height)
            rows, cols = rect_pixel_slice(rect, width, height)
            heat[rows, cols] = np.maximum(heat[rows, cols], resp)
    return heat


@dataclass(frozen=True)
class HeatmapLayer:
    """Per-pattern heatmaps of one layer group plus their pointwise max."""

    image_id: str
    group_id: str
    heatmaps: Mapping[str, np.ndarray]
    composite: np.ndarray


def build_heatmap_layer(
    fm: FeatureMapSet,
    aog: SemanticPartAOG,
    tree: ParseTree,
    manifest: DatasetManifest,
    group_id: str,
    image_size: tuple[int, int],
) -> HeatmapLayer:
    """Heatmaps for the chosen template's patterns in one layer group."""
    width, height = image_size
    heatmaps: dict[str, np.ndarray] = {}
    for assignment in tree.pattern_assignments:
        if manifest.group_of(assignment.layer_id) != group_id:
            continue
        pattern = aog.pattern(assignment.pattern_id)
        heatmaps[assignment.pattern_id] = pattern_heatmap(fm, pattern, tree, image_size)
    composite = np.zeros((height, width), dtype=np.float64)
    for heat in heatmaps.values():
        composite = np.maximum(composite, heat)
    return HeatmapLayer(image_id=tree.image_id, group_id=group_id, heatmaps=heatmaps, composite=composite)


def _peak_position(heat: np.ndarray, fallback: tuple[float, float]) -> tuple[float, float]:
    if heat.max() <= 0.0:
        return fallback
    idx = int(heat.argmax())  # first maximum: smallest (row, col)
    h, w = heat.shape
    return (float(idx % w), float(idx // w))


def render_overlay(
    image_id: str,
    layers: Sequence[HeatmapLayer],
    tree: ParseTree,
    image_size: tuple[int, int],
) -> tuple[bytes, dict]:
    """8-bit grayscale PNG of the composite heat plus a layout description.

    The layout lists, per provided group, every rendered pattern with its
    peak position and score contribution, so a client can draw toggles and
    markers without redoing any scoring.  Identical inputs produce an
    identical layout dict (and PNG bytes).
    """
    width, height = image_size
    composite = np.zeros((height, width), dtype=np.float64)
    groups = []
    for layer in layers:
        for pattern_id, heat in layer.heatmaps.items():
            if heat.shape != (height, width):
                raise VizError(
                    f"heatmap for {pattern_id} has shape {heat.shape}, image is {(height, width)}"
                )
        composite = np.maximum(composite, layer.composite)
        patterns = []
        for assignment in tree.pattern_assignments:
            if assignment.pattern_id not in layer.heatmaps:
                continue
            peak = _peak_position(
                layer.heatmaps[assignment.pattern_id], assignment.unit_region.center
            )
            patterns.append(
                {
                    "pattern_id": assignment.pattern_id,
                    "group": layer.group_id,
                    "peak_px": [peak[0], peak[1]],
                    "contribution": assignment.contribution,
                }
            )
        groups.append({"group_id": layer.group_id, "patterns": patterns})

    peak_value = composite.max()
    scaled = (
        (composite / peak_value * 255.0).astype(np.uint8)
        if peak_value > 0
        else np.zeros((height, width), dtype=np.uint8)
    )
    buf = io.BytesIO()
    Image.fromarray(scaled, mode="L").save(buf, format="PNG")

    layout = {
        "layout_version": LAYOUT_SCHEMA_VERSION,
        "image_id": image_id,
        "width_px": width,
        "height_px": height,
        "chosen_template_id": tree.chosen_template_id,
        "part_box": tree.part_region.to_json(),
        "total_score": tree.total_score,
        "groups": groups,
    }
    return buf.getvalue(), layout


def canonical_layout_json(layout: dict) -> str:
    """Stable byte-for-byte serialization of a layout dict."""
    return json.dumps(layout, sort_keys=True, separators=(",", ":"))
