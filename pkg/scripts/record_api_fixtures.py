#!/usr/bin/env python3
"""Record a golden API conversation for UI contract tests.

Builds a deterministic demo data root, drives the full
parse -> overlay -> annotate -> prune -> undo -> metrics loop against the
in-process HTTP app, and writes every request/response pair (in order) to
one JSON file the frontend test suite replays.

Usage: python scripts/record_api_fixtures.py --out frontend/tests/fixtures
"""

import argparse
import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from aoglab.aog import save_aog
from aoglab.evaluation import SyntheticConfig, generate_synthetic, inject_distractors, write_synthetic
from aoglab.miner import MinerConfig, mine
from aoglab.service import create_app
from aoglab.tensor_store import FeatureStore, load_manifest

DEMO = SyntheticConfig(seed=0, test_images=6)


def build_data_root(root: Path) -> None:
    dataset_dir = root / "planted"
    dataset = generate_synthetic(DEMO)
    write_synthetic(dataset, dataset_dir)
    store = FeatureStore(load_manifest(dataset_dir / "manifest.json"), dataset_dir)
    aog = mine(store.manifest, store, MinerConfig(default_patterns_per_layer=DEMO.patterns_per_template))
    save_aog(inject_distractors(aog, dataset.ground_truth), dataset_dir / "aog.json")
    (root / "annotated_region.json").write_text(
        json.dumps(dataset.ground_truth["annotated_region_px"])
    )


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("frontend/tests/fixtures"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        build_data_root(root)
        region = json.loads((root / "annotated_region.json").read_text())
        client = TestClient(create_app(root))
        steps = []

        def record(name, method, path, body=None, params=None):
            if method == "GET":
                response = client.get(path, params=params)
            else:
                response = client.post(path, json=body)
            assert response.status_code == 200, f"{name}: {response.status_code} {response.text}"
            steps.append(
                {
                    "name": name,
                    "request": {"method": method, "path": path, "body": body, "params": params},
                    "status": response.status_code,
                    "response": response.json(),
                }
            )
            return response.json()

        record("datasets", "GET", "/v1/datasets")
        record("images", "GET", "/v1/datasets/planted/images")
        created = record("create_session", "POST", "/v1/sessions", {"manifest": "planted", "aog": "aog.json"})
        sid = created["session"]["session_id"]
        record("parse", "POST", f"/v1/sessions/{sid}/parse", {"image_id": "test_000"})
        record("overlay_low", "GET", f"/v1/sessions/{sid}/overlay/test_000", params={"group": "low"})
        annotate = record(
            "annotate",
            "POST",
            f"/v1/sessions/{sid}/annotate",
            {"image_id": "test_000", "rectangles": [region], "scope": "low"},
        )
        proposals = annotate["proposals"]
        assert proposals, "fixture flow expects at least one proposal"
        record("prune", "POST", f"/v1/sessions/{sid}/prune", {"pattern_ids": proposals})
        record("session_after_prune", "GET", f"/v1/sessions/{sid}")
        record("parse_after_prune", "POST", f"/v1/sessions/{sid}/parse", {"image_id": "test_000"})
        record("metrics_after_prune", "GET", f"/v1/sessions/{sid}/metrics")
        record("undo", "POST", f"/v1/sessions/{sid}/undo", {"k": len(proposals)})
        record("session_after_undo", "GET", f"/v1/sessions/{sid}")
        record("overlay_after_undo", "GET", f"/v1/sessions/{sid}/overlay/test_000", params={"group": "low"})
        record("metrics", "GET", f"/v1/sessions/{sid}/metrics")

    out_file = args.out / "flow.json"
    out_file.write_text(json.dumps({"fixture_version": 1, "steps": steps}, indent=2, sort_keys=True))
    print(f"recorded {len(steps)} steps -> {out_file}")


if __name__ == "__main__":
    main()
