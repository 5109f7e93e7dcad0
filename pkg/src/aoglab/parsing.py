"""Part parsing: pick the best (template, part center, unit-per-pattern).

Scoring follows a deformable-part decomposition.  A unit's contribution is

    response - lambda_def * ||unit_cell - deform_center||^2
             - lambda_geo * ||unit_px + displacement - part_center||^2 / stride^2

with the deformation term in cell units and the geometric residual measured
in units of the finest layer stride, so the two penalties are commensurate.
Each pattern takes the best unit inside its (grid-clipped) deformation
window, a template sums its active patterns' best contributions, and the
part node maximizes over templates and a stride-spaced grid of candidate
centers inside the object box.

Ties are broken deterministically everywhere: units by smallest (y, x),
centers by smallest (y, x), templates by list position.  The vectorized
search mirrors the scalar formulas operation for operation, so the selected
tree is bit-identical to what exhaustive scalar enumeration
(:func:`brute_force_parse`) picks under the same tie rules.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .aog import (
    ParseTree,
    PatternAssignment,
    LatentPattern,
    PartTemplate,
    ScoreConstants,
    SemanticPartAOG,
)
from .geometry import GeometryError, LayerGeometry, Rect, receptive_field, unit_center
from .tensor_store import FeatureMapSet

DEFAULT_ENUMERATION_CAP = 10**7


class EmptyAogError(ValueError):
    """Parsing was asked to run with no active pattern anywhere."""


class EnumerationCapError(ValueError):
    """Brute-force search space exceeds the configured cap."""


@dataclass(frozen=True)
class UnitScore:
    response: float
    deform_penalty: float
    geo_penalty: float
    contribution: float


@dataclass(frozen=True)
class SearchGrid:
    """Candidate part centers: stride-spaced positions inside the object box."""

    step_px: int
    xs: tuple[float, ...]
    ys: tuple[float, ...]

    @classmethod
    def for_box(cls, object_box: Rect, geometry: LayerGeometry, step_px: int | None = None) -> "SearchGrid":
        step = int(step_px) if step_px is not None else geometry.stride_px
        if step < 1:
            raise GeometryError("search step must be >= 1 px")
        offset = geometry.offset_px
        xs = _axis_positions(object_box.x, object_box.w, offset, step)
        ys = _axis_positions(object_box.y, object_box.h, offset, step)
        return cls(step_px=step, xs=xs, ys=ys)

    @property
    def centers(self) -> list[tuple[float, float]]:
        """All candidate centers, ordered by (y, x)."""
        return [(x, y) for y in self.ys for x in self.xs]


def _axis_positions(lo: float, extent: float, offset: int, step: int) -> tuple[float, ...]:
    k0 = math.ceil((lo - offset) / step)
    k1 = math.floor((lo + extent - offset) / step)
    if k0 > k1:
        # Degenerate box between grid positions: fall back to the position
        # nearest the box center so the candidate set is never empty.
        k = math.ceil((lo + extent / 2.0 - offset) / step - 0.5)
        return (float(offset + k * step),)
    return tuple(float(offset + k * step) for k in range(k0, k1 + 1))


def pattern_window(pattern: LatentPattern, g: LayerGeometry) -> tuple[range, range]:
    """Cell ranges (xs, ys) of the pattern's deformation window, grid-clipped."""
    cx, cy = pattern.deform_center
    if not g.in_grid(cx, cy):
        raise GeometryError(
            f"pattern {pattern.pattern_id}: deform_center ({cx}, {cy}) outside grid of {g.layer_id}"
        )
    h = pattern.deform_half_extent
    xs = range(max(0, cx - h), min(g.grid_w - 1, cx + h) + 1)
    ys = range(max(0, cy - h), min(g.grid_h - 1, cy + h) + 1)
    return xs, ys


def score_unit(
    fm: FeatureMapSet,
    pattern: LatentPattern,
    unit: tuple[int, int],
    part_center: tuple[float, float],
    constants: ScoreConstants = ScoreConstants(),
) -> UnitScore:
    """Score one unit of a pattern against a candidate part center."""
    g = fm.geometry(pattern.layer_id)
    x, y = unit
    xs, ys = pattern_window(pattern, g)
    if x not in xs or y not in ys:
        raise GeometryError(
            f"unit ({x}, {y}) outside deformation window of pattern {pattern.pattern_id}"
        )
    response = fm.unit_response(pattern.layer_id, pattern.channel, x, y)
    ddx = float(x - pattern.deform_center[0])
    ddy = float(y - pattern.deform_center[1])
    deform = constants.lambda_def * (ddx**2 + ddy**2)
    ux, uy = unit_center(g, x, y)
    stride = float(fm.finest_stride)
    rx = (ux + pattern.displacement[0] - part_center[0]) / stride
    ry = (uy + pattern.displacement[1] - part_center[1]) / stride
    geo = constants.lambda_geo * (rx**2 + ry**2)
    return UnitScore(
        response=response,
        deform_penalty=deform,
        geo_penalty=geo,
        contribution=(response - deform) - geo,
    )


def score_pattern(
    fm: FeatureMapSet,
    pattern: LatentPattern,
    part_center: tuple[float, float],
    constants: ScoreConstants = ScoreConstants(),
) -> tuple[tuple[int, int], UnitScore]:
    """Best unit in the deformation window; ties go to the smallest (y, x)."""
    if not pattern.active:
        raise ValueError(f"pattern {pattern.pattern_id} is pruned")
    g = fm.geometry(pattern.layer_id)
    xs, ys = pattern_window(pattern, g)
    best_unit = None
    best = None
    for y in ys:
        for x in xs:
            s = score_unit(fm, pattern, (x, y), part_center, constants)
            if best is None or s.contribution > best.contribution:
                best, best_unit = s, (x, y)
    return best_unit, best


def score_template(
    fm: FeatureMapSet,
    template: PartTemplate,
    part_center: tuple[float, float],
    constants: ScoreConstants = ScoreConstants(),
) -> tuple[float, list[tuple[LatentPattern, tuple[int, int], UnitScore]]]:
    """Sum of best contributions over active patterns (empty sum is 0.0)."""
    picks = []
    for pattern in template.patterns:
        if not pattern.active:
            continue
        unit, s = score_pattern(fm, pattern, part_center, constants)
        picks.append((pattern, unit, s))
    return math.fsum(s.contribution for _, _, s in picks), picks


def _vector_pattern_best(
    fm: FeatureMapSet,
    pattern: LatentPattern,
    centers_x: np.ndarray,
    centers_y: np.ndarray,
    constants: ScoreConstants,
) -> np.ndarray:
    """Best unit contribution per candidate center, vectorized.

    Mirrors :func:`score_unit` operation for operation so results are
    bit-identical to the scalar path.
    """
    g = fm.geometry(pattern.layer_id)
    xs, ys = pattern_window(pattern, g)
    ux = np.array([x for y in ys for x in xs], dtype=np.int64)
    uy = np.array([y for y in ys for x in xs], dtype=np.int64)
    resp = fm.layers[pattern.layer_id][uy, ux, pattern.channel].astype(np.float64)
    ddx = (ux - pattern.deform_center[0]).astype(np.float64)
    ddy = (uy - pattern.deform_center[1]).astype(np.float64)
    deform = constants.lambda_def * (ddx**2 + ddy**2)
    base = resp - deform
    px = (g.offset_px + ux * g.stride_px).astype(np.float64)
    py = (g.offset_px + uy * g.stride_px).astype(np.float64)
    stride = float(fm.finest_stride)
    rx = (px[:, None] + pattern.displacement[0] - centers_x[None, :]) / stride
    ry = (py[:, None] + pattern.displacement[1] - centers_y[None, :]) / stride
    geo = constants.lambda_geo * (rx**2 + ry**2)
    contrib = base[:, None] - geo
    # argmax returns the first maximum; units are ordered by (y, x), so ties
    # resolve exactly like the scalar path.
    return contrib.max(axis=0)


def _validate_for_parse(fm: FeatureMapSet, aog: SemanticPartAOG) -> None:
    for pattern in aog.iter_patterns():
        g = fm.geometry(pattern.layer_id)
        if not 0 <= pattern.channel < g.channels:
            raise GeometryError(
                f"pattern {pattern.pattern_id}: channel {pattern.channel} out of range for {g.layer_id}"
            )
        pattern_window(pattern, g)  # raises when deform_center is off-grid


def _finest_geometry(fm: FeatureMapSet) -> LayerGeometry:
    return min(fm.geometries.values(), key=lambda g: (g.stride_px, g.layer_id))


def _build_tree(
    fm: FeatureMapSet,
    aog: SemanticPartAOG,
    template: PartTemplate,
    center: tuple[float, float],
    image_size: tuple[int, int],
) -> ParseTree:
    width, height = image_size
    _, picks = score_template(fm, template, center, aog.constants)
    assignments = []
    for pattern, (x, y), s in picks:
        g = fm.geometry(pattern.layer_id)
        assignments.append(
            PatternAssignment(
                pattern_id=pattern.pattern_id,
                layer_id=pattern.layer_id,
                channel=pattern.channel,
                x=x,
                y=y,
                unit_region=receptive_field(g, x, y, width, height),
                response=s.response,
                deform_penalty=s.deform_penalty,
                geo_penalty=s.geo_penalty,
                contribution=s.contribution,
            )
        )
    w, h = template.canonical_box
    part_region = Rect(center[0] - w / 2.0, center[1] - h / 2.0, w, h).clipped(width, height)
    return ParseTree(
        image_id=fm.image_id,
        chosen_template_id=template.template_id,
        part_region=part_region,
        total_score=math.fsum(a.contribution for a in assignments),
        pattern_assignments=tuple(assignments),
    )


def parse(
    fm: FeatureMapSet,
    aog: SemanticPartAOG,
    object_box: Rect,
    image_size: tuple[int, int],
    *,
    step_px: int | None = None,
) -> ParseTree:
    """Best parse over all templates and candidate centers in the object box."""
    _validate_for_parse(fm, aog)
    if aog.active_pattern_count() == 0:
        raise EmptyAogError(f"AOG for part {aog.part_name!r} has no active patterns")
    grid = SearchGrid.for_box(object_box, _finest_geometry(fm), step_px)
    centers = grid.centers
    cx = np.array([c[0] for c in centers], dtype=np.float64)
    cy = np.array([c[1] for c in centers], dtype=np.float64)

    best = None  # (score, template_index, center_index)
    for t_idx, template in enumerate(aog.templates):
        active = template.active_patterns()
        if active:
            per_pattern = [
                _vector_pattern_best(fm, p, cx, cy, aog.constants) for p in active
            ]
            scores = [
                math.fsum(per_pattern[pi][ci] for pi in range(len(active)))
                for ci in range(len(centers))
            ]
        else:
            scores = [0.0] * len(centers)
        c_idx = max(range(len(scores)), key=lambda i: (scores[i], -i))
        # strict '>' keeps the lowest template index on score ties
        if best is None or scores[c_idx] > best[0]:
            best = (scores[c_idx], t_idx, c_idx)
    _, t_idx, c_idx = best
    return _build_tree(fm, aog, aog.templates[t_idx], centers[c_idx], image_size)


def brute_force_parse(
    fm: FeatureMapSet,
    aog: SemanticPartAOG,
    object_box: Rect,
    image_size: tuple[int, int],
    *,
    step_px: int | None = None,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> ParseTree:
    """Exhaustive oracle: enumerate every (template, center, unit tuple).

    Independent of :func:`parse`'s factorized maximization: contributions
    are recomputed inline from the raw formula and each full unit assignment
    is scored as a tuple.  Tie rules match the stated order: score, then
    template position, then center (y, x), then the tuple of unit (y, x)
    keys in pattern order.
    """
    _validate_for_parse(fm, aog)
    if aog.active_pattern_count() == 0:
        raise EmptyAogError(f"AOG for part {aog.part_name!r} has no active patterns")
    grid = SearchGrid.for_box(object_box, _finest_geometry(fm), step_px)
    centers = grid.centers
    lam_def = aog.constants.lambda_def
    lam_geo = aog.constants.lambda_geo
    stride = float(fm.finest_stride)

    template_units = []
    total = 0
    for template in aog.templates:
        unit_lists = []
        for pattern in template.active_patterns():
            g = fm.geometry(pattern.layer_id)
            xs, ys = pattern_window(pattern, g)
            unit_lists.append([(pattern, x, y) for y in ys for x in xs])
        size = 1
        for lst in unit_lists:
            size *= len(lst)
        total += size * len(centers)
        template_units.append(unit_lists)
    if total > cap:
        raise EnumerationCapError(f"enumeration size {total} exceeds cap {cap}")

    best_key = None
    best_pick = None
    for t_idx, template in enumerate(aog.templates):
        unit_lists = template_units[t_idx]
        for c_idx, (ccx, ccy) in enumerate(centers):
            for combo in itertools.product(*unit_lists):
                contribs = []
                for pattern, x, y in combo:
                    g = fm.geometry(pattern.layer_id)
                    response = float(fm.layers[pattern.layer_id][y, x, pattern.channel])
                    ddx = float(x - pattern.deform_center[0])
                    ddy = float(y - pattern.deform_center[1])
                    deform = lam_def * (ddx**2 + ddy**2)
                    px = float(g.offset_px + x * g.stride_px)
                    py = float(g.offset_px + y * g.stride_px)
                    rx = (px + pattern.displacement[0] - ccx) / stride
                    ry = (py + pattern.displacement[1] - ccy) / stride
                    geo = lam_geo * (rx**2 + ry**2)
                    contribs.append((response - deform) - geo)
                score = math.fsum(contribs)
                tie = (t_idx, c_idx, tuple((y, x) for _, x, y in combo))
                if best_key is None or score > best_key[0] or (score == best_key[0] and tie < best_key[1]):
                    best_key = (score, tie)
                    best_pick = (template, (ccx, ccy))
    template, center = best_pick
    return _build_tree(fm, aog, template, center, image_size)
