"""Greedy pattern mining from a handful of part-annotated images.

For each part template and each layer, channels are ranked by the mean (over
that template's annotated images) of their strongest in-scope response,
where "in scope" means the unit's receptive-field center falls inside the
annotated part box for low-group layers and inside the object box for
mid/high-group layers.  The top ``n_k`` channels become latent patterns; the
deformation center is the mean peak cell, and the displacement is the mean
offset from the peak unit to the annotated part center.

The procedure is deterministic: ties in the channel ranking break toward the
lower channel index, peak ties toward the smallest (y, x) cell, and halfway
cell rounding toward the lower index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .aog import LatentPattern, PartTemplate, ScoreConstants, SemanticPartAOG, validate_aog
from .geometry import LayerGeometry, Rect, default_deform_half_extent, unit_center
from .tensor_store import DatasetManifest, FeatureMapSet, ImageRecord

DEFAULT_PATTERNS_PER_LAYER = 8


class MiningError(ValueError):
    pass


@dataclass(frozen=True)
class MinerConfig:
    patterns_per_layer: Mapping[str, int] = field(default_factory=dict)
    default_patterns_per_layer: int = DEFAULT_PATTERNS_PER_LAYER
    low_layer_scope: str = "part_box"
    mid_layer_scope: str = "object_box"
    high_layer_scope: str = "object_box"
    deform_half_extent: int | None = None  # override; None derives from grid side

    def patterns_for(self, layer_id: str) -> int:
        n = self.patterns_per_layer.get(layer_id, self.default_patterns_per_layer)
        if n < 1:
            raise MiningError(f"patterns_per_layer for {layer_id} must be >= 1")
        return n

    def scope_for(self, group: str) -> str:
        return {
            "low": self.low_layer_scope,
            "mid": self.mid_layer_scope,
            "high": self.high_layer_scope,
        }[group]

    def to_json(self) -> dict:
        return {
            "patterns_per_layer": dict(self.patterns_per_layer),
            "default_patterns_per_layer": self.default_patterns_per_layer,
            "low_layer_scope": self.low_layer_scope,
            "mid_layer_scope": self.mid_layer_scope,
            "high_layer_scope": self.high_layer_scope,
            "deform_half_extent": self.deform_half_extent,
        }


def _round_half_down(v: float) -> int:
    """Round to nearest integer; exact halves go to the lower index."""
    return math.ceil(v - 0.5)


def _scope_rect(record: ImageRecord, part_box: Rect, scope: str) -> Rect:
    if scope == "part_box":
        return part_box
    if scope == "object_box":
        return record.object_box
    raise MiningError(f"unknown scope {scope!r}")


def _in_scope_cells(g: LayerGeometry, scope: Rect) -> tuple[np.ndarray, np.ndarray]:
    """(ys, xs) index arrays of cells whose centers fall inside ``scope``."""
    xs_px = g.offset_px + np.arange(g.grid_w) * g.stride_px
    ys_px = g.offset_px + np.arange(g.grid_h) * g.stride_px
    in_x = (xs_px >= scope.x) & (xs_px <= scope.x + scope.w)
    in_y = (ys_px >= scope.y) & (ys_px <= scope.y + scope.h)
    return np.nonzero(in_y)[0], np.nonzero(in_x)[0]


def _annotated_samples(manifest: DatasetManifest):
    """(template_id -> [(record, part_box)]) over training-split annotations."""
    samples: dict[str, list[tuple[ImageRecord, Rect]]] = {}
    for record in manifest.split_records("train"):
        for ann in record.part_annotations:
            samples.setdefault(ann.template_id, []).append((record, ann.part_box))
    return samples


def mine(
    manifest: DatasetManifest,
    features: Mapping[str, FeatureMapSet],
    config: MinerConfig = MinerConfig(),
) -> SemanticPartAOG:
    """Build a part model from the manifest's annotated training images."""
    samples = _annotated_samples(manifest)
    if not samples:
        raise MiningError("no annotated training images in manifest")

    templates = []
    for template_id in sorted(samples):
        pairs = samples[template_id]
        patterns = []
        for g in manifest.layer_geometries:
            scope_kind = config.scope_for(manifest.group_of(g.layer_id))
            half_extent = (
                config.deform_half_extent
                if config.deform_half_extent is not None
                else default_deform_half_extent(g.grid_h, g.grid_w)
            )

            # Per (image, channel): strongest in-scope response and its cell.
            per_pair = []
            for record, part_box in pairs:
                fm = features[record.image_id]
                scope = _scope_rect(record, part_box, scope_kind)
                ys, xs = _in_scope_cells(g, scope)
                if len(ys) == 0 or len(xs) == 0:
                    raise MiningError(
                        f"layer {g.layer_id}: scope region of template {template_id}"
                        f" on image {record.image_id} contains no unit centers"
                    )
                sub = fm.layers[g.layer_id][np.ix_(ys, xs)]  # (ny, nx, channels)
                flat = sub.reshape(-1, g.channels)
                peak_idx = flat.argmax(axis=0)  # first max = smallest (y, x)
                peak_val = flat[peak_idx, np.arange(g.channels)]
                peak_y = ys[peak_idx // len(xs)]
                peak_x = xs[peak_idx % len(xs)]
                per_pair.append((record, part_box, peak_val, peak_x, peak_y))

            mean_peak = np.mean([p[2] for p in per_pair], axis=0)
            n_k = min(config.patterns_for(g.layer_id), g.channels)
            order = sorted(range(g.channels), key=lambda c: (-mean_peak[c], c))
            for channel in sorted(order[:n_k]):
                cx = _round_half_down(float(np.mean([p[3][channel] for p in per_pair])))
                cy = _round_half_down(float(np.mean([p[4][channel] for p in per_pair])))
                dxs, dys = [], []
                for record, part_box, _, peak_x, peak_y in per_pair:
                    ux, uy = unit_center(g, int(peak_x[channel]), int(peak_y[channel]))
                    bx, by = part_box.center
                    dxs.append(bx - ux)
                    dys.append(by - uy)
                patterns.append(
                    LatentPattern(
                        pattern_id=f"{template_id}/{g.layer_id}/c{channel}",
                        layer_id=g.layer_id,
                        channel=channel,
                        deform_center=(cx, cy),
                        deform_half_extent=half_extent,
                        displacement=(float(np.mean(dxs)), float(np.mean(dys))),
                    )
                )
        templates.append(
            PartTemplate(
                template_id=template_id,
                patterns=tuple(patterns),
                canonical_box=_mean_box_size(pairs),
            )
        )

    aog = SemanticPartAOG(
        part_name=manifest.part_name,
        templates=tuple(templates),
        constants=ScoreConstants(),
        provenance={
            "miner": "greedy-channel-peaks",
            "config": config.to_json(),
            "category": manifest.category,
            "annotated_images": sorted({r.image_id for ps in samples.values() for r, _ in ps}),
        },
    )
    validate_aog(aog)
    return aog


def _mean_box_size(pairs) -> tuple[float, float]:
    return (
        float(np.mean([box.w for _, box in pairs])),
        float(np.mean([box.h for _, box in pairs])),
    )


def rebuild_template_box(aog: SemanticPartAOG, manifest: DatasetManifest) -> SemanticPartAOG:
    """Recompute each template's canonical box from current annotations."""
    samples = _annotated_samples(manifest)
    templates = []
    for tpl in aog.templates:
        pairs = samples.get(tpl.template_id)
        if not pairs:
            raise MiningError(f"template {tpl.template_id}: no annotations in manifest")
        templates.append(replace(tpl, canonical_box=_mean_box_size(pairs)))
    return replace(aog, templates=tuple(templates))
