#!/usr/bin/env python3
"""Build a ready-to-serve data root: planted dataset + mined model.

The saved model includes the generator's distractor patterns, so the
annotate -> propose -> confirm -> undo loop has something to find.

Usage: python scripts/make_demo_dataset.py --out demo_data [--seed 0]
Then:  aoglab serve --data-root demo_data
"""

import argparse
from pathlib import Path

from aoglab.aog import save_aog
from aoglab.evaluation import SyntheticConfig, generate_synthetic, inject_distractors, write_synthetic
from aoglab.miner import MinerConfig, mine
from aoglab.tensor_store import FeatureStore, load_manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--test-images", type=int, default=12)
    args = ap.parse_args()

    cfg = SyntheticConfig(seed=args.seed, test_images=args.test_images)
    dataset = generate_synthetic(cfg)
    dataset_dir = args.out / "planted"
    write_synthetic(dataset, dataset_dir)

    store = FeatureStore(load_manifest(dataset_dir / "manifest.json"), dataset_dir)
    aog = mine(store.manifest, store, MinerConfig(default_patterns_per_layer=cfg.patterns_per_template))
    save_aog(inject_distractors(aog, dataset.ground_truth), dataset_dir / "aog.json")

    print(f"data root ready: {args.out}")
    print(f"  dataset: planted ({len(dataset.features)} images)")
    print("  model:   aog.json (includes distractor patterns to prune)")
    print(f"serve it with: aoglab serve --data-root {args.out}")


if __name__ == "__main__":
    main()
