import math
from dataclasses import replace

import numpy as np
import pytest

from aoglab.aog import LatentPattern, PartTemplate, ScoreConstants, SemanticPartAOG, prune_pattern
from aoglab.geometry import GeometryError, LayerGeometry, Rect, unit_center
from aoglab.parsing import (
    EmptyAogError,
    EnumerationCapError,
    SearchGrid,
    brute_force_parse,
    parse,
    score_pattern,
    score_template,
    score_unit,
)
from aoglab.tensor_store import FeatureMapSet

from .conftest import make_fm
from .gen_instances import random_instance, shift_right_one_cell, spike_instance


def one_pattern(center=(2, 2), half=2, displacement=(0.0, 0.0), channel=0, active=True):
    return LatentPattern(
        pattern_id="p0",
        layer_id="conv",
        channel=channel,
        deform_center=center,
        deform_half_extent=half,
        displacement=displacement,
        active=active,
    )


def flat_fm(value=1.0, grid=5, stride=8, offset=0):
    return make_fm(np.full((grid, grid, 1), value, dtype=np.float32), stride=stride, offset=offset)


# ---------------------------------------------------------------------------
# score_unit: hand-computable decompositions


def test_unit_at_ideal_position_scores_its_response():
    fm = flat_fm(1.0)
    pattern = one_pattern(center=(2, 2))
    center_px = unit_center(fm.geometry("conv"), 2, 2)
    s = score_unit(fm, pattern, (2, 2), center_px)
    assert s.deform_penalty == 0.0
    assert s.geo_penalty == 0.0
    assert s.contribution == 1.0


def test_one_cell_diagonal_deformation_costs_two_thirds():
    fm = flat_fm(1.0)
    pattern = one_pattern(center=(2, 2))
    # keep geometry perfect for the displaced unit at (3, 3)
    ux, uy = unit_center(fm.geometry("conv"), 3, 3)
    s = score_unit(fm, pattern, (3, 3), (ux, uy))
    assert s.deform_penalty == pytest.approx(2.0 / 3.0, abs=1e-15)
    assert s.contribution == 1.0 - (1.0 / 3.0) * 2.0
    assert abs(s.contribution - 1.0 / 3.0) < 1e-15


def test_one_stride_geometric_residual_costs_five():
    fm = flat_fm(1.0, stride=8)
    pattern = one_pattern(center=(2, 2))
    ux, uy = unit_center(fm.geometry("conv"), 2, 2)
    s = score_unit(fm, pattern, (2, 2), (ux + 8.0, uy))
    assert s.geo_penalty == 5.0
    assert s.contribution == -4.0


def test_unit_outside_window_rejected():
    fm = flat_fm()
    pattern = one_pattern(center=(2, 2), half=1)
    with pytest.raises(GeometryError, match="outside deformation window"):
        score_unit(fm, pattern, (0, 0), (0.0, 0.0))


def test_geo_residual_measured_in_finest_stride_units():
    # two layers, strides 4 and 8: residuals normalize by 4
    coarse = np.zeros((3, 3, 1), dtype=np.float32)
    fine = np.zeros((6, 6, 1), dtype=np.float32)
    geos = {
        "lo": LayerGeometry("lo", 6, 6, 1, 4, 8, 0),
        "hi": LayerGeometry("hi", 3, 3, 1, 8, 16, 0),
    }
    fm = FeatureMapSet("img", {"lo": fine, "hi": coarse}, geos)
    pattern = replace(one_pattern(center=(1, 1), half=0), layer_id="hi")
    s = score_unit(fm, pattern, (1, 1), (8.0 + 4.0, 8.0))
    assert s.geo_penalty == 5.0  # one finest-stride off


# ---------------------------------------------------------------------------
# score_pattern


def test_flat_responses_pick_the_deformation_center():
    fm = flat_fm(0.5)
    pattern = one_pattern(center=(3, 1), half=2)
    center_px = unit_center(fm.geometry("conv"), 3, 1)
    unit, s = score_pattern(fm, pattern, center_px)
    assert unit == (3, 1)
    assert s.contribution == 0.5


def test_equal_contribution_tie_picks_smallest_row_then_column():
    # responses only at (x=2, y=1) and (x=1, y=2); both sit one cell from the
    # deformation center and symmetric about the queried part center, so the
    # two contributions are bit-identical and the (y, x) rule must decide
    tensor = np.zeros((5, 5, 1), dtype=np.float32)
    tensor[1, 2, 0] = 0.9
    tensor[2, 1, 0] = 0.9
    fm = make_fm(tensor, stride=8, offset=0)
    pattern = one_pattern(center=(1, 1), half=1)
    a = score_unit(fm, pattern, (2, 1), (12.0, 12.0))
    b = score_unit(fm, pattern, (1, 2), (12.0, 12.0))
    assert a.contribution == b.contribution
    unit, _ = score_pattern(fm, pattern, (12.0, 12.0))
    assert unit == (2, 1)  # (y=1, x=2) beats (y=2, x=1) in (y, x) order


def test_pruned_pattern_cannot_be_scored():
    fm = flat_fm()
    with pytest.raises(ValueError, match="pruned"):
        score_pattern(fm, one_pattern(active=False), (0.0, 0.0))


def test_score_pattern_matches_inline_enumeration(rng):
    for _ in range(25):
        fm, aog, object_box, _ = random_instance(rng)
        g = fm.geometry("conv")
        center = (float(rng.uniform(0, 40)), float(rng.uniform(0, 40)))
        for pattern in aog.iter_patterns():
            if not pattern.active:
                continue
            unit, s = score_pattern(fm, pattern, center, aog.constants)
            best = None
            cx, cy = pattern.deform_center
            h = pattern.deform_half_extent
            for y in range(max(0, cy - h), min(g.grid_h - 1, cy + h) + 1):
                for x in range(max(0, cx - h), min(g.grid_w - 1, cx + h) + 1):
                    resp = float(fm.layers["conv"][y, x, pattern.channel])
                    deform = aog.constants.lambda_def * (
                        float(x - cx) ** 2 + float(y - cy) ** 2
                    )
                    px, py = float(x * g.stride_px + g.offset_px), float(y * g.stride_px + g.offset_px)
                    rx = (px + pattern.displacement[0] - center[0]) / g.stride_px
                    ry = (py + pattern.displacement[1] - center[1]) / g.stride_px
                    geo = aog.constants.lambda_geo * (rx**2 + ry**2)
                    contrib = (resp - deform) - geo
                    if best is None or contrib > best[0]:
                        best = (contrib, (x, y))
            assert s.contribution == pytest.approx(best[0], abs=1e-9)
            assert unit == best[1]


# ---------------------------------------------------------------------------
# score_template


def test_template_score_sums_active_patterns():
    tensor = np.zeros((5, 5, 2), dtype=np.float32)
    tensor[2, 2, 0] = 0.4
    tensor[2, 2, 1] = 0.3
    fm = make_fm(tensor)
    patterns = (
        one_pattern(center=(2, 2), half=0, channel=0),
        replace(one_pattern(center=(2, 2), half=0, channel=1), pattern_id="p1"),
    )
    template = PartTemplate("t", patterns, (16.0, 16.0))
    center_px = unit_center(fm.geometry("conv"), 2, 2)
    score, picks = score_template(fm, template, center_px)
    expected = float(np.float32(0.4)) + float(np.float32(0.3))  # stored as f32
    assert score == pytest.approx(expected, abs=1e-12)
    assert score == pytest.approx(0.7, abs=1e-6)
    assert len(picks) == 2


def test_all_pruned_template_scores_zero():
    fm = flat_fm()
    template = PartTemplate("t", (one_pattern(active=False),), (16.0, 16.0))
    score, picks = score_template(fm, template, (3.0, 7.0))
    assert score == 0.0 and picks == []


def test_pruning_subtracts_exactly_that_contribution(rng):
    for _ in range(30):
        fm, aog, object_box, _ = random_instance(rng)
        center = (float(rng.uniform(0, 30)), float(rng.uniform(0, 30)))
        for template in aog.templates:
            active = template.active_patterns()
            if not active:
                continue
            victim = active[int(rng.integers(0, len(active)))]
            before, picks = score_template(fm, template, center, aog.constants)
            contribution = next(s.contribution for p, _, s in picks if p is victim)
            pruned = PartTemplate(
                template.template_id,
                tuple(
                    replace(p, active=False) if p.pattern_id == victim.pattern_id else p
                    for p in template.patterns
                ),
                template.canonical_box,
            )
            after, _ = score_template(fm, pruned, center, aog.constants)
            assert abs(after - (before - contribution)) <= 1e-9


# ---------------------------------------------------------------------------
# search grid


def test_search_grid_spans_object_box():
    g = LayerGeometry("conv", 8, 8, 1, 8, 16, 4)
    grid = SearchGrid.for_box(Rect(0, 0, 60, 20), g)
    assert grid.xs == (4.0, 12.0, 20.0, 28.0, 36.0, 44.0, 52.0, 60.0)
    assert grid.ys == (4.0, 12.0, 20.0)
    assert grid.centers[0] == (4.0, 4.0) and grid.centers[1] == (12.0, 4.0)


def test_search_grid_never_empty():
    g = LayerGeometry("conv", 8, 8, 1, 8, 16, 0)
    grid = SearchGrid.for_box(Rect(3, 3, 2, 2), g)
    assert grid.centers == [(0.0, 0.0)]  # nearest grid position to (4, 4) ties down
    grid = SearchGrid.for_box(Rect(5, 5, 2, 2), g)
    assert grid.centers == [(8.0, 8.0)]


# ---------------------------------------------------------------------------
# parse


def test_parse_prefers_higher_scoring_template():
    tensor = np.zeros((5, 5, 2), dtype=np.float32)
    tensor[2, 2, 0] = 0.7
    tensor[2, 2, 1] = 0.3
    fm = make_fm(tensor)
    aog = SemanticPartAOG(
        part_name="part",
        templates=(
            PartTemplate("A", (one_pattern(center=(2, 2), half=0, channel=0),), (8.0, 8.0)),
            PartTemplate("B", (one_pattern(center=(2, 2), half=0, channel=1),), (8.0, 8.0)),
        ),
    )
    tree = parse(fm, aog, Rect(0, 0, 32, 32), (48, 48))
    assert tree.chosen_template_id == "A"
    assert tree.total_score == pytest.approx(0.7, abs=1e-6)


def test_single_spike_center_is_spike_position_plus_displacement():
    tensor = np.zeros((8, 8, 1), dtype=np.float32)
    tensor[2, 3, 0] = 5.0  # spike at cell (x=3, y=2) -> px (24, 16)
    fm = make_fm(tensor, stride=8, offset=0)
    pattern = LatentPattern("p0", "conv", 0, (3, 2), 0, (10.0, -6.0))
    aog = SemanticPartAOG("part", (PartTemplate("t", (pattern,), (16.0, 16.0)),))
    tree = parse(fm, aog, Rect(0, 0, 56, 56), (72, 72))
    # ideal center (34, 10) snaps to the nearest searched position (32, 8)
    assert tree.part_region.center == (32.0, 8.0)
    assert tree.pattern_assignments[0].x == 3
    assert tree.pattern_assignments[0].y == 2


def test_empty_aog_is_an_explicit_error():
    fm = flat_fm()
    aog = SemanticPartAOG("part", (PartTemplate("t", (one_pattern(active=False),), (8.0, 8.0)),))
    with pytest.raises(EmptyAogError):
        parse(fm, aog, Rect(0, 0, 16, 16), (40, 40))
    with pytest.raises(EmptyAogError):
        brute_force_parse(fm, aog, Rect(0, 0, 16, 16), (40, 40))


def test_fully_pruned_template_can_win_with_score_zero():
    tensor = np.zeros((4, 4, 1), dtype=np.float32)
    fm = make_fm(tensor, stride=8, offset=0)
    negative = LatentPattern("neg", "conv", 0, (1, 1), 0, (3.3, 0.0))  # geo never zero
    empty = LatentPattern("gone", "conv", 0, (1, 1), 0, (0.0, 0.0), active=False)
    aog = SemanticPartAOG(
        "part",
        (
            PartTemplate("live", (negative,), (8.0, 8.0)),
            PartTemplate("hollow", (empty,), (8.0, 8.0)),
        ),
    )
    tree = parse(fm, aog, Rect(0, 0, 24, 24), (40, 40))
    assert tree.chosen_template_id == "hollow"
    assert tree.total_score == 0.0
    assert tree.pattern_assignments == ()
    oracle = brute_force_parse(fm, aog, Rect(0, 0, 24, 24), (40, 40))
    assert oracle == tree


def test_brute_force_cap_enforced():
    fm = flat_fm(grid=5)
    aog = SemanticPartAOG("part", (PartTemplate("t", (one_pattern(),), (8.0, 8.0)),))
    with pytest.raises(EnumerationCapError):
        brute_force_parse(fm, aog, Rect(0, 0, 32, 32), (40, 40), cap=10)


def test_parse_equals_brute_force_on_random_instances(rng):
    for _ in range(40):
        fm, aog, object_box, image_size = random_instance(rng)
        fast = parse(fm, aog, object_box, image_size)
        slow = brute_force_parse(fm, aog, object_box, image_size)
        assert abs(fast.total_score - slow.total_score) <= 1e-9
        assert fast == slow


# ---------------------------------------------------------------------------
# invariance properties


def test_decomposition_identity_on_random_instances(rng):
    for _ in range(20):
        fm, aog, object_box, image_size = random_instance(rng)
        tree = parse(fm, aog, object_box, image_size)
        for a in tree.pattern_assignments:
            assert abs(a.contribution - ((a.response - a.deform_penalty) - a.geo_penalty)) <= 1e-9
        assert abs(tree.total_score - math.fsum(a.contribution for a in tree.pattern_assignments)) <= 1e-9


def test_translation_equivariance_with_dominant_spikes(rng):
    for _ in range(30):
        fm, aog, object_box, image_size, target_px = spike_instance(rng)
        tree = parse(fm, aog, object_box, image_size)
        assert tree.part_region.center == target_px
        shifted = parse(shift_right_one_cell(fm), aog, object_box, image_size)
        stride = fm.geometry("conv").stride_px
        assert shifted.part_region.center == (target_px[0] + stride, target_px[1])


def test_argmax_invariant_under_joint_positive_rescaling(rng):
    for _ in range(30):
        fm, aog, object_box, image_size = random_instance(rng)
        factor = float(2.0 ** rng.integers(-3, 4))
        scaled_fm = FeatureMapSet(
            fm.image_id,
            {lid: (t * np.float32(factor)) for lid, t in fm.layers.items()},
            dict(fm.geometries),
        )
        scaled_aog = replace(
            aog,
            constants=ScoreConstants(
                aog.constants.lambda_def * factor, aog.constants.lambda_geo * factor
            ),
        )
        base = parse(fm, aog, object_box, image_size)
        scaled = parse(scaled_fm, scaled_aog, object_box, image_size)
        assert scaled.chosen_template_id == base.chosen_template_id
        assert scaled.part_region == base.part_region
        assert [(a.pattern_id, a.x, a.y) for a in scaled.pattern_assignments] == [
            (a.pattern_id, a.x, a.y) for a in base.pattern_assignments
        ]


def test_adding_a_template_never_decreases_the_score(rng):
    for _ in range(30):
        fm, aog, object_box, image_size = random_instance(rng)
        extra_fm, extra_aog, _, _ = random_instance(rng)
        donor = replace(
            extra_aog.templates[0],
            template_id="extra",
            patterns=tuple(
                replace(p, pattern_id=f"extra/{p.pattern_id}", channel=p.channel % fm.geometry("conv").channels,
                        deform_center=(min(p.deform_center[0], fm.geometry("conv").grid_w - 1),
                                       min(p.deform_center[1], fm.geometry("conv").grid_h - 1)))
                for p in extra_aog.templates[0].patterns
            ),
        )
        grown = replace(aog, templates=aog.templates + (donor,))
        base = parse(fm, aog, object_box, image_size)
        bigger = parse(fm, grown, object_box, image_size)
        assert bigger.total_score >= base.total_score


def test_monotone_pruning_at_fixed_region(rng):
    for _ in range(30):
        fm, aog, object_box, image_size = random_instance(rng)
        tree = parse(fm, aog, object_box, image_size)
        if not tree.pattern_assignments:
            continue
        template = aog.template(tree.chosen_template_id)
        part_center = tree.part_region.center
        victim = tree.pattern_assignments[int(rng.integers(0, len(tree.pattern_assignments)))]
        before, picks = score_template(fm, template, part_center, aog.constants)
        victim_contribution = next(
            s.contribution for p, _, s in picks if p.pattern_id == victim.pattern_id
        )
        pruned_aog = prune_pattern(aog, victim.pattern_id)
        after, _ = score_template(
            fm, pruned_aog.template(template.template_id), part_center, aog.constants
        )
        assert abs(after - (before - victim_contribution)) <= 1e-9
