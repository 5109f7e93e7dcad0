"""Command-line front end: mine, parse, evaluate, synth, serve."""

from __future__ import annotations

import json
from pathlib import Path

import click

from .aog import load_aog, save_aog
from .evaluation import SyntheticConfig, evaluate, generate_synthetic, write_synthetic
from .miner import MinerConfig, mine
from .parsing import parse as parse_op
from .tensor_store import FeatureStore, load_manifest


def _store_for(manifest_path: str) -> FeatureStore:
    path = Path(manifest_path)
    return FeatureStore(load_manifest(path), path.parent)


@click.group()
def main():
    """Part localization from pre-computed feature tensors."""


@main.command("mine")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--nk", type=int, default=None, help="patterns per layer (default 8)")
@click.option("--half-extent", type=int, default=None, help="deformation half extent override (cells)")
def mine_cmd(manifest_path, out_path, nk, half_extent):
    """Build a part model from the manifest's annotated training images."""
    store = _store_for(manifest_path)
    config = MinerConfig(
        default_patterns_per_layer=nk if nk is not None else MinerConfig().default_patterns_per_layer,
        deform_half_extent=half_extent,
    )
    aog = mine(store.manifest, store, config)
    save_aog(aog, out_path)
    n_patterns = sum(len(t.patterns) for t in aog.templates)
    click.echo(f"mined {len(aog.templates)} templates / {n_patterns} patterns -> {out_path}")


@main.command("parse")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--aog", "aog_path", required=True, type=click.Path(exists=True))
@click.option("--image", "image_id", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def parse_cmd(manifest_path, aog_path, image_id, out_path):
    """Localize the part on one image, writing the parse tree as JSON."""
    store = _store_for(manifest_path)
    aog = load_aog(aog_path)
    record = store.manifest.record(image_id)
    tree = parse_op(
        store.load(image_id), aog, record.object_box, (record.width_px, record.height_px)
    )
    Path(out_path).write_text(json.dumps(tree.to_json(), indent=2, sort_keys=True), encoding="utf-8")
    cx, cy = tree.part_region.center
    click.echo(
        f"{image_id}: template={tree.chosen_template_id} center=({cx:.1f}, {cy:.1f})"
        f" score={tree.total_score:.4f} -> {out_path}"
    )


@main.command("evaluate")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--aog", "aog_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
def evaluate_cmd(manifest_path, aog_path, out_path, split):
    """Evaluate localization over a split; writes CSV, prints a table."""
    store = _store_for(manifest_path)
    report = evaluate(load_aog(aog_path), store, split=split)
    Path(out_path).write_text(report.to_csv(), encoding="utf-8")
    click.echo(report.to_markdown())


@main.command("synth")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
def synth_cmd(config_path, out_dir, seed):
    """Generate a planted synthetic dataset (manifest + FMAP + ground truth)."""
    if config_path is not None:
        cfg = SyntheticConfig.from_json(json.loads(Path(config_path).read_text(encoding="utf-8")))
    else:
        cfg = SyntheticConfig()
    if seed is not None:
        cfg = SyntheticConfig.from_json({**cfg.to_json(), "seed": seed})
    dataset = generate_synthetic(cfg)
    manifest_path, gt_path = write_synthetic(dataset, out_dir)
    click.echo(f"wrote {len(dataset.features)} images under {out_dir}")
    click.echo(f"manifest: {manifest_path}")
    click.echo(f"ground truth: {gt_path}")


@main.command("serve")
@click.option("--data-root", envvar="AOGLAB_DATA_ROOT", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
def serve_cmd(data_root, port, host):
    """Serve the HTTP API over a data root of datasets."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(data_root), host=host, port=port)


if __name__ == "__main__":
    main()
