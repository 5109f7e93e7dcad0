import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aoglab.evaluation import (
    EvaluationError,
    SyntheticConfig,
    evaluate,
    generate_synthetic,
    inject_distractors,
    normalized_distance,
    write_synthetic,
)
from aoglab.geometry import Rect
from aoglab.miner import MinerConfig, mine
from aoglab.tensor_store import FeatureStore, load_manifest

SMALL = SyntheticConfig(seed=7, test_images=6, grid=16, image_px=132, anchor_zone_cells=(4, 6, 4, 11),
                        distractor_zone_cells=(13, 14, 4, 12), annotated_region_px=(80.0, 0.0, 52.0, 132.0),
                        patterns_per_template=3, distractors_per_template=1, displacement_max_cells=1)


def test_three_four_five_distance_is_exactly_point_one():
    assert normalized_distance((10.0, 10.0), (13.0, 14.0), Rect(0, 0, 30, 40)) == 0.1


def test_zero_distance_on_identical_points():
    assert normalized_distance((5.0, 9.0), (5.0, 9.0), Rect(0, 0, 10, 10)) == 0.0


def test_metric_invariant_under_uniform_scaling():
    base = normalized_distance((10.0, 10.0), (13.0, 14.0), Rect(2, 3, 30, 40))
    scaled = normalized_distance((70.0, 70.0), (91.0, 98.0), Rect(14, 21, 210, 280))
    assert abs(base - scaled) <= 1e-12


@given(
    st.floats(-100, 100), st.floats(-100, 100),
    st.floats(-100, 100), st.floats(-100, 100),
    st.floats(1, 50), st.floats(1, 50),
    st.floats(-40, 40), st.floats(-40, 40),
)
def test_metric_translation_invariant(px, py, gx, gy, w, h, tx, ty):
    box = Rect(0, 0, w, h)
    moved = Rect(tx, ty, w, h)
    a = normalized_distance((px, py), (gx, gy), box)
    b = normalized_distance((px + tx, py + ty), (gx + tx, gy + ty), moved)
    assert abs(a - b) <= 1e-9


def test_degenerate_box_rejected():
    with pytest.raises(EvaluationError):
        normalized_distance((0.0, 0.0), (1.0, 1.0), Rect(0, 0, 0, 0))


def synthetic_store(tmp_path, cfg=SMALL):
    dataset = generate_synthetic(cfg)
    write_synthetic(dataset, tmp_path)
    manifest = load_manifest(tmp_path / "manifest.json")
    gt = json.loads((tmp_path / "ground_truth.json").read_text())
    return FeatureStore(manifest, tmp_path), gt


def mined_aog(store, gt):
    cfg = gt["config"]
    return mine(
        store.manifest,
        store,
        MinerConfig(default_patterns_per_layer=cfg["patterns_per_template"]),
    )


def test_generator_is_deterministic(tmp_path):
    a = generate_synthetic(SMALL)
    b = generate_synthetic(SMALL)
    assert a.manifest == b.manifest
    assert a.ground_truth == b.ground_truth
    for image_id in a.features:
        assert np.array_equal(a.features[image_id]["conv_low"], b.features[image_id]["conv_low"])
    write_synthetic(a, tmp_path / "x")
    write_synthetic(b, tmp_path / "y")
    for rel in ["manifest.json", "ground_truth.json", "features/test_000.fmap"]:
        assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes()


def test_zero_noise_single_pattern_recovers_center_exactly(tmp_path):
    cfg = SyntheticConfig(
        seed=3, test_images=4, grid=16, image_px=132,
        anchor_zone_cells=(5, 9, 5, 11), distractor_zone_cells=(12, 14, 4, 12),
        annotated_region_px=(84.0, 0.0, 48.0, 132.0),
        templates=1, patterns_per_template=1, distractors_per_template=0,
        noise_amplitude=0.0, jitter_cells=0, spare_noise_channels=0,
    )
    store, gt = synthetic_store(tmp_path, cfg)
    report = evaluate(mined_aog(store, gt), store)
    assert report.count == 4 and not report.failures
    assert report.mean == 0.0


def test_mined_displacements_match_planted(tmp_path):
    store, gt = synthetic_store(tmp_path)
    aog = mined_aog(store, gt)
    stride = gt["config"]["stride_px"]
    for tpl in aog.templates:
        planted = gt["displacements_px"][tpl.template_id]
        for p in tpl.patterns:
            dx, dy = planted[str(p.channel)]
            assert abs(p.displacement[0] - dx) <= stride
            assert abs(p.displacement[1] - dy) <= stride


def test_planted_recovery_under_noise(tmp_path):
    store, gt = synthetic_store(tmp_path)
    report = evaluate(mined_aog(store, gt), store)
    assert not report.failures
    assert report.mean <= 0.05


def test_report_aggregates_recompute_from_rows(tmp_path):
    store, gt = synthetic_store(tmp_path)
    report = evaluate(mined_aog(store, gt), store)
    mean = sum(r.normalized_distance for r in report.rows) / report.count
    assert abs(report.mean - mean) <= 1e-9
    csv = report.to_csv()
    assert csv.splitlines()[0] == "category,part,n_images,mean_nd,median_nd"
    assert csv.splitlines()[1].startswith("synthetic,planted_part,6,")
    assert "| synthetic |" in report.to_markdown()


def test_report_mean_of_two_rows():
    from aoglab.evaluation import EvalReport, EvalRow

    rows = (
        EvalRow("a", (0.0, 0.0), (6.0, 8.0), 0.1),
        EvalRow("b", (0.0, 0.0), (18.0, 24.0), 0.3),
    )
    report = EvalReport(category="c", part_name="p", rows=rows)
    assert report.mean == pytest.approx(0.2, abs=1e-15)
    assert report.median == pytest.approx(0.2, abs=1e-15)
    assert report.count == 2


def test_two_known_distances_average(tmp_path):
    # plant a dataset, then fake the ground truth offsets to 0.1 and 0.3
    cfg = SyntheticConfig(
        seed=5, test_images=2, grid=16, image_px=132,
        anchor_zone_cells=(7, 9, 7, 9), distractor_zone_cells=(13, 14, 4, 12),
        annotated_region_px=(96.0, 0.0, 36.0, 132.0),
        templates=1, patterns_per_template=2, distractors_per_template=0,
        noise_amplitude=0.0, jitter_cells=0, spare_noise_channels=0,
    )
    store, gt = synthetic_store(tmp_path, cfg)
    report = evaluate(mined_aog(store, gt), store)
    assert report.mean == 0.0
    diag = Rect(0, 0, 132, 132).diagonal
    d1 = normalized_distance((0.0, 0.0), (0.06 * diag, 0.08 * diag), Rect(0, 0, 132, 132))
    d2 = normalized_distance((0.0, 0.0), (0.18 * diag, 0.24 * diag), Rect(0, 0, 132, 132))
    assert d1 == pytest.approx(0.1, abs=1e-12) and d2 == pytest.approx(0.3, abs=1e-12)
    assert (d1 + d2) / 2 == pytest.approx(0.2, abs=1e-12)


def test_blob_outside_grid_rejected():
    cfg = SyntheticConfig(
        seed=0, grid=16, image_px=132, anchor_zone_cells=(0, 1, 0, 1),
        distractor_zone_cells=(12, 14, 4, 12), annotated_region_px=(84.0, 0.0, 48.0, 132.0),
        displacement_max_cells=3, templates=1, patterns_per_template=8, test_images=2,
    )
    with pytest.raises(EvaluationError, match="outside"):
        for _ in range(20):
            generate_synthetic(SyntheticConfig.from_json({**cfg.to_json(), "seed": _}))


def test_inject_distractors_adds_inactive_free_patterns(tmp_path):
    store, gt = synthetic_store(tmp_path)
    aog = mined_aog(store, gt)
    spiked = inject_distractors(aog, gt)
    for tpl in spiked.templates:
        ids = {p.pattern_id for p in tpl.patterns}
        for d in gt["distractors"]:
            if d["template_id"] == tpl.template_id:
                assert d["pattern_id"] in ids
    n_before = sum(len(t.patterns) for t in aog.templates)
    n_after = sum(len(t.patterns) for t in spiked.templates)
    assert n_after == n_before + len(gt["distractors"])
