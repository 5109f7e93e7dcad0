"""Feature-tensor ingestion: FMAP containers, dataset manifests, normalization.

The engine never runs a CNN.  Activation tensors arrive as FMAP files (a
small binary container, see ``write_fmap``/``read_fmap``) and every layer's
image-plane calibration is data in the dataset manifest, so the inference
code is agnostic to the backbone that produced the tensors.

Normalization, when the manifest enables it, divides each channel by that
channel's maximum over the whole dataset (negatives clamped to zero first),
so normalized responses live in [0, 1] and channels with no activation stay
identically zero.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .geometry import LayerGeometry, Rect

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1


class FmapError(ValueError):
    """Malformed or inconsistent FMAP container."""


class ManifestError(ValueError):
    """Manifest contents violate the dataset contract."""


# ---------------------------------------------------------------------------
# FMAP container

def write_fmap(path, layers: Mapping[str, np.ndarray]) -> None:
    """Write layer tensors to ``path``; float32, row-major, channel fastest."""
    chunks = [FMAP_MAGIC, struct.pack("<II", FMAP_VERSION, len(layers))]
    for layer_id, tensor in layers.items():
        arr = np.ascontiguousarray(tensor, dtype="<f4")
        if arr.ndim != 3:
            raise FmapError(f"layer {layer_id}: tensor must be (grid_h, grid_w, channels), got shape {arr.shape}")
        ident = layer_id.encode("utf-8")
        if len(ident) > 0xFFFF:
            raise FmapError(f"layer id too long: {layer_id!r}")
        chunks.append(struct.pack("<H", len(ident)))
        chunks.append(ident)
        chunks.append(struct.pack("<III", arr.shape[0], arr.shape[1], arr.shape[2]))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def read_fmap(path) -> dict[str, np.ndarray]:
    """Read an FMAP container; returns {layer_id: float32 (h, w, c) tensor}."""
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise FmapError(f"{path}: truncated while reading {what}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != FMAP_MAGIC:
        raise FmapError(f"{path}: bad magic, not an FMAP container")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != FMAP_VERSION:
        raise FmapError(f"{path}: unsupported FMAP version {version}")
    layers: dict[str, np.ndarray] = {}
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2, "layer id length"))
        layer_id = bytes(take(id_len, "layer id")).decode("utf-8")
        h, w, c = struct.unpack("<III", take(12, f"shape of layer {layer_id}"))
        n = h * w * c
        raw = take(4 * n, f"tensor of layer {layer_id}")
        if layer_id in layers:
            raise FmapError(f"{path}: duplicate layer id {layer_id!r}")
        layers[layer_id] = np.frombuffer(raw, dtype="<f4").reshape(h, w, c).copy()
    if pos != len(view):
        raise FmapError(f"{path}: {len(view) - pos} trailing bytes after last layer")
    return layers


# ---------------------------------------------------------------------------
# Feature-map sets

@dataclass(frozen=True)
class FeatureMapSet:
    """All of one image's layer tensors plus their grid calibration."""

    image_id: str
    layers: Mapping[str, np.ndarray]
    geometries: Mapping[str, LayerGeometry]
    normalized: bool = False

    def __post_init__(self):
        for layer_id, tensor in self.layers.items():
            g = self.geometries.get(layer_id)
            if g is None:
                raise FmapError(f"image {self.image_id}: no geometry for layer {layer_id!r}")
            if tuple(tensor.shape) != g.shape:
                raise FmapError(
                    f"image {self.image_id}: layer {layer_id} has shape {tuple(tensor.shape)},"
                    f" geometry says {g.shape}"
                )
            bad = ~np.isfinite(tensor)
            if bad.any():
                y, x, c = np.argwhere(bad)[0]
                raise FmapError(
                    f"image {self.image_id}: non-finite value in layer {layer_id},"
                    f" channel {c}, cell ({x}, {y})"
                )
            tensor.setflags(write=False)
        missing = set(self.geometries) - set(self.layers)
        if missing:
            raise FmapError(f"image {self.image_id}: missing layers {sorted(missing)}")

    def geometry(self, layer_id: str) -> LayerGeometry:
        try:
            return self.geometries[layer_id]
        except KeyError:
            raise FmapError(f"image {self.image_id}: unknown layer {layer_id!r}") from None

    def unit_response(self, layer_id: str, channel: int, x: int, y: int) -> float:
        """Stored activation of one CNN unit."""
        g = self.geometry(layer_id)
        if not g.in_grid(x, y) or not 0 <= channel < g.channels:
            raise FmapError(
                f"image {self.image_id}: unit ({layer_id}, ch {channel}, x {x}, y {y}) out of range"
            )
        return float(self.layers[layer_id][y, x, channel])

    @property
    def finest_stride(self) -> int:
        return min(g.stride_px for g in self.geometries.values())


def channel_maxima(layers: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Per-channel max of the nonnegative part of each layer tensor."""
    return {
        layer_id: np.maximum(tensor, 0.0).max(axis=(0, 1)).astype(np.float64)
        for layer_id, tensor in layers.items()
    }


def merge_maxima(acc: dict[str, np.ndarray], new: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    for layer_id, values in new.items():
        acc[layer_id] = np.maximum(acc[layer_id], values) if layer_id in acc else values.copy()
    return acc


def normalize_layers(
    layers: Mapping[str, np.ndarray], maxima: Mapping[str, np.ndarray]
) -> dict[str, np.ndarray]:
    """Clamp negatives to zero and divide channels by their dataset maxima."""
    out = {}
    for layer_id, tensor in layers.items():
        peak = maxima[layer_id]
        scale = np.where(peak > 0.0, peak, 1.0)  # zero-max channels stay zero
        out[layer_id] = (np.maximum(tensor, 0.0) / scale).astype(np.float32)
    return out


def load_feature_set(
    path,
    geometries,
    *,
    image_id: str | None = None,
    channel_max: Mapping[str, np.ndarray] | None = None,
) -> FeatureMapSet:
    """Read one image's FMAP file and validate it against ``geometries``.

    ``channel_max`` carries the dataset-wide per-channel maxima; when given,
    the tensors are max-normalized to [0, 1] on the way in.
    """
    geo = {g.layer_id: g for g in geometries}
    layers = read_fmap(path)
    unexpected = set(layers) - set(geo)
    if unexpected:
        raise FmapError(f"{path}: layers {sorted(unexpected)} not declared in geometries")
    if channel_max is not None:
        layers = normalize_layers(layers, channel_max)
    return FeatureMapSet(
        image_id=image_id if image_id is not None else Path(path).stem,
        layers=layers,
        geometries=geo,
        normalized=channel_max is not None,
    )


# ---------------------------------------------------------------------------
# Manifests

LAYER_GROUPS = ("low", "mid", "high")


@dataclass(frozen=True)
class PartAnnotation:
    template_id: str
    part_box: Rect

    def to_json(self) -> dict:
        return {"template_id": self.template_id, "part_box": self.part_box.to_json()}

    @classmethod
    def from_json(cls, data: dict) -> "PartAnnotation":
        return cls(str(data["template_id"]), Rect.from_json(data["part_box"]))


@dataclass(frozen=True)
class ImageRecord:
    image_id: str
    width_px: int
    height_px: int
    object_box: Rect
    part_annotations: tuple[PartAnnotation, ...] = ()
    split: str = "test"

    def __post_init__(self):
        image_box = Rect(0, 0, self.width_px, self.height_px)
        if self.object_box.x < 0 or self.object_box.y < 0 or not image_box.contains_rect(self.object_box):
            raise ManifestError(f"image {self.image_id}: object_box outside image bounds")
        for ann in self.part_annotations:
            if not self.object_box.contains_rect(ann.part_box):
                raise ManifestError(
                    f"image {self.image_id}: part_box for template {ann.template_id} outside object_box"
                )

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "width_px": self.width_px,
            "height_px": self.height_px,
            "object_box": self.object_box.to_json(),
            "part_annotations": [a.to_json() for a in self.part_annotations],
            "split": self.split,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ImageRecord":
        return cls(
            image_id=str(data["image_id"]),
            width_px=int(data["width_px"]),
            height_px=int(data["height_px"]),
            object_box=Rect.from_json(data["object_box"]),
            part_annotations=tuple(PartAnnotation.from_json(a) for a in data.get("part_annotations", [])),
            split=str(data.get("split", "test")),
        )


@dataclass(frozen=True)
class DatasetManifest:
    category: str
    layer_geometries: tuple[LayerGeometry, ...]
    layer_groups: Mapping[str, tuple[str, ...]]
    records: tuple[ImageRecord, ...]
    feature_paths: Mapping[str, str]
    saliency_paths: Mapping[str, Mapping[str, str]] = field(default_factory=dict)
    part_name: str = "part"
    normalize: bool = True

    def __post_init__(self):
        layer_ids = [g.layer_id for g in self.layer_geometries]
        if len(set(layer_ids)) != len(layer_ids):
            raise ManifestError("duplicate layer_id in layer_geometries")
        grouped: list[str] = []
        for name in self.layer_groups:
            if name not in LAYER_GROUPS:
                raise ManifestError(f"unknown layer group {name!r}, expected one of {LAYER_GROUPS}")
            grouped.extend(self.layer_groups[name])
        if sorted(grouped) != sorted(layer_ids):
            raise ManifestError("layer_groups must partition layer_geometries exactly once")
        for record in self.records:
            if record.image_id not in self.feature_paths:
                raise ManifestError(f"image {record.image_id}: no feature path in manifest")

    def geometry(self, layer_id: str) -> LayerGeometry:
        for g in self.layer_geometries:
            if g.layer_id == layer_id:
                return g
        raise ManifestError(f"unknown layer {layer_id!r}")

    def group_of(self, layer_id: str) -> str:
        for name, members in self.layer_groups.items():
            if layer_id in members:
                return name
        raise ManifestError(f"layer {layer_id!r} not in any group")

    def record(self, image_id: str) -> ImageRecord:
        for record in self.records:
            if record.image_id == image_id:
                return record
        raise ManifestError(f"unknown image {image_id!r}")

    def split_records(self, split: str) -> tuple[ImageRecord, ...]:
        return tuple(r for r in self.records if r.split == split)

    def to_json(self) -> dict:
        return {
            "manifest_version": 1,
            "category": self.category,
            "part_name": self.part_name,
            "normalize": self.normalize,
            "layer_geometries": [g.to_json() for g in self.layer_geometries],
            "layer_groups": {k: list(v) for k, v in self.layer_groups.items()},
            "records": [r.to_json() for r in self.records],
            "feature_paths": dict(self.feature_paths),
            "saliency_paths": {k: dict(v) for k, v in self.saliency_paths.items()},
        }

    @classmethod
    def from_json(cls, data: dict) -> "DatasetManifest":
        return cls(
            category=str(data["category"]),
            part_name=str(data.get("part_name", "part")),
            normalize=bool(data.get("normalize", True)),
            layer_geometries=tuple(LayerGeometry.from_json(g) for g in data["layer_geometries"]),
            layer_groups={k: tuple(v) for k, v in data["layer_groups"].items()},
            records=tuple(ImageRecord.from_json(r) for r in data["records"]),
            feature_paths={str(k): str(v) for k, v in data["feature_paths"].items()},
            saliency_paths={
                str(k): {str(p): str(v) for p, v in m.items()}
                for k, m in data.get("saliency_paths", {}).items()
            },
        )


def save_manifest(manifest: DatasetManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON ({exc})") from exc
    return DatasetManifest.from_json(data)


class FeatureStore:
    """Binds a manifest to its feature files; loads, normalizes, caches.

    Loaded sets are immutable and safe to share across threads; the store's
    own cache is only mutated under the GIL via dict assignment.
    """

    def __init__(self, manifest: DatasetManifest, root, cache_size: int = 64):
        self.manifest = manifest
        self.root = Path(root)
        self.cache_size = cache_size
        self._cache: dict[str, FeatureMapSet] = {}
        self._channel_max: dict[str, np.ndarray] | None = None

    def feature_path(self, image_id: str) -> Path:
        try:
            return self.root / self.manifest.feature_paths[image_id]
        except KeyError:
            raise ManifestError(f"unknown image {image_id!r}") from None

    @property
    def channel_max(self) -> dict[str, np.ndarray]:
        """Dataset-wide per-channel maxima, scanned lazily from raw tensors."""
        if self._channel_max is None:
            acc: dict[str, np.ndarray] = {}
            for record in self.manifest.records:
                raw = read_fmap(self.feature_path(record.image_id))
                merge_maxima(acc, channel_maxima(raw))
            self._channel_max = acc
        return self._channel_max

    def load(self, image_id: str) -> FeatureMapSet:
        cached = self._cache.get(image_id)
        if cached is not None:
            return cached
        fm = load_feature_set(
            self.feature_path(image_id),
            self.manifest.layer_geometries,
            image_id=image_id,
            channel_max=self.channel_max if self.manifest.normalize else None,
        )
        if len(self._cache) >= self.cache_size:
            self._cache.pop(next(iter(self._cache)))
        self._cache[image_id] = fm
        return fm

    def __getitem__(self, image_id: str) -> FeatureMapSet:
        return self.load(image_id)

    def saliency_map(self, image_id: str, pattern_id: str) -> np.ndarray | None:
        """Optional per-pattern saliency grid at image resolution, or None."""
        per_image = self.manifest.saliency_paths.get(image_id)
        if not per_image or pattern_id not in per_image:
            return None
        layers = read_fmap(self.root / per_image[pattern_id])
        if len(layers) != 1:
            raise FmapError(f"saliency container for {image_id}/{pattern_id} must hold one layer")
        grid = next(iter(layers.values()))
        if grid.shape[2] != 1:
            raise FmapError(f"saliency layer for {image_id}/{pattern_id} must be single-channel")
        return grid[:, :, 0].astype(np.float64)
