"""Seeded random parsing instances, sized so exhaustive search stays cheap."""

import numpy as np

from aoglab.aog import LatentPattern, PartTemplate, ScoreConstants, SemanticPartAOG
from aoglab.geometry import LayerGeometry, Rect
from aoglab.tensor_store import FeatureMapSet


def random_instance(
    rng: np.random.Generator,
    *,
    max_templates=3,
    max_patterns=4,
    max_grid=8,
    max_channels=6,
    enumeration_budget=20_000,
):
    """(fm, aog, object_box, image_size) with continuous random responses."""
    grid_h = int(rng.integers(3, max_grid + 1))
    grid_w = int(rng.integers(3, max_grid + 1))
    channels = int(rng.integers(1, max_channels + 1))
    stride = int(rng.choice([4, 8]))
    offset = int(rng.choice([0, stride // 2]))
    g = LayerGeometry("conv", grid_h, grid_w, channels, stride, 2 * stride, offset)
    tensor = rng.uniform(0.0, 1.0, size=(grid_h, grid_w, channels)).astype(np.float32)
    fm = FeatureMapSet("img", {"conv": tensor}, {"conv": g})

    image_w = offset + (grid_w - 1) * stride + 2 * stride
    image_h = offset + (grid_h - 1) * stride + 2 * stride

    bx = float(rng.integers(0, max(1, image_w - 2 * stride)))
    by = float(rng.integers(0, max(1, image_h - 2 * stride)))
    bw = float(rng.integers(stride, 4 * stride))
    bh = float(rng.integers(stride, 4 * stride))
    object_box = Rect(bx, by, min(bw, image_w - bx), min(bh, image_h - by))

    n_templates = int(rng.integers(1, max_templates + 1))
    templates = []
    for t in range(n_templates):
        n_patterns = int(rng.integers(0, max_patterns + 1))
        patterns = []
        for i in range(n_patterns):
            patterns.append(
                LatentPattern(
                    pattern_id=f"t{t}/p{i}",
                    layer_id="conv",
                    channel=int(rng.integers(0, channels)),
                    deform_center=(int(rng.integers(0, grid_w)), int(rng.integers(0, grid_h))),
                    deform_half_extent=int(rng.choice([0, 1, 1, 2])),
                    displacement=(
                        float(rng.uniform(-2 * stride, 2 * stride)),
                        float(rng.uniform(-2 * stride, 2 * stride)),
                    ),
                    active=bool(rng.random() > 0.15),
                )
            )
        templates.append(
            PartTemplate(
                template_id=f"t{t}",
                patterns=tuple(patterns),
                canonical_box=(float(rng.integers(8, 40)), float(rng.integers(8, 40))),
            )
        )
    aog = SemanticPartAOG(
        part_name="part",
        templates=tuple(templates),
        constants=ScoreConstants(),
    )
    if aog.active_pattern_count() == 0:
        # force one live pattern so parsing is well defined
        tpl = templates[0]
        pattern = LatentPattern(
            pattern_id="t0/forced",
            layer_id="conv",
            channel=0,
            deform_center=(grid_w // 2, grid_h // 2),
            deform_half_extent=1,
            displacement=(0.0, 0.0),
        )
        templates[0] = PartTemplate(tpl.template_id, tpl.patterns + (pattern,), tpl.canonical_box)
        aog = SemanticPartAOG("part", tuple(templates), ScoreConstants())

    aog = _shrink_to_budget(aog, g, object_box, enumeration_budget)
    return fm, aog, object_box, (image_w, image_h)


def _window_size(pattern, g):
    cx, cy = pattern.deform_center
    h = pattern.deform_half_extent
    nx = min(g.grid_w - 1, cx + h) - max(0, cx - h) + 1
    ny = min(g.grid_h - 1, cy + h) - max(0, cy - h) + 1
    return nx * ny


def _enumeration_size(aog, g, object_box):
    from aoglab.parsing import SearchGrid

    centers = len(SearchGrid.for_box(object_box, g).centers)
    total = 0
    for tpl in aog.templates:
        size = 1
        for p in tpl.patterns:
            if p.active:
                size *= _window_size(p, g)
        total += size * centers
    return total


def _shrink_to_budget(aog, g, object_box, budget):
    """Deterministically shrink deformation windows until exhaustive search fits."""
    from dataclasses import replace

    while _enumeration_size(aog, g, object_box) > budget:
        widest = max(
            (p for p in aog.iter_patterns() if p.active and p.deform_half_extent > 0),
            key=lambda p: (_window_size(p, g), p.pattern_id),
            default=None,
        )
        if widest is None:
            break
        templates = tuple(
            replace(
                tpl,
                patterns=tuple(
                    replace(p, deform_half_extent=p.deform_half_extent - 1)
                    if p.pattern_id == widest.pattern_id
                    else p
                    for p in tpl.patterns
                ),
            )
            for tpl in aog.templates
        )
        aog = replace(aog, templates=templates)
    return aog


def spike_instance(rng: np.random.Generator, *, grid=8, n_patterns=2, amplitude=2000.0):
    """One-template instance where each pattern has a dominant interior spike.

    All spikes agree on one on-grid target center, so the parse lands there
    exactly and shifting activations by one cell moves it by one stride.
    """
    stride, offset = 8, 4
    channels = n_patterns
    g = LayerGeometry("conv", grid, grid, channels, stride, 2 * stride, offset)
    target = (int(rng.integers(3, grid - 3)), int(rng.integers(3, grid - 3)))
    tensor = np.zeros((grid, grid, channels), dtype=np.float32)
    patterns = []
    for i in range(n_patterns):
        d_cell = (int(rng.integers(-1, 2)), int(rng.integers(-1, 2)))
        spike = (target[0] - d_cell[0], target[1] - d_cell[1])
        tensor[spike[1], spike[0], i] = amplitude
        patterns.append(
            LatentPattern(
                pattern_id=f"p{i}",
                layer_id="conv",
                channel=i,
                deform_center=(int(rng.integers(0, grid)), int(rng.integers(0, grid))),
                deform_half_extent=grid,  # window clips to the whole grid
                displacement=(float(d_cell[0] * stride), float(d_cell[1] * stride)),
            )
        )
    fm = FeatureMapSet("img", {"conv": tensor}, {"conv": g})
    aog = SemanticPartAOG(
        part_name="part",
        templates=(PartTemplate("t0", tuple(patterns), (16.0, 16.0)),),
    )
    side = offset * 2 + (grid - 1) * stride
    object_box = Rect(0, 0, side, side)
    target_px = (float(offset + target[0] * stride), float(offset + target[1] * stride))
    return fm, aog, object_box, (side, side), target_px


def shift_right_one_cell(fm: FeatureMapSet) -> FeatureMapSet:
    """New feature set with activations moved one cell in +x, zero-filled."""
    shifted = {}
    for layer_id, tensor in fm.layers.items():
        out = np.zeros_like(tensor)
        out[:, 1:, :] = tensor[:, :-1, :]
        shifted[layer_id] = out
    return FeatureMapSet(fm.image_id, shifted, dict(fm.geometries), fm.normalized)
