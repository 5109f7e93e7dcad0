"""Human-in-the-loop sessions: propose, confirm, and undo pattern prunes.

A user marks image regions that should not drive the part localization.
A pattern is *proposed* for pruning when (1) the center of its parsed image
region falls inside the marked union and (2) the pattern's saliency mass
inside the marked union strictly exceeds the mass outside.  Saliency maps
are optional ingested artifacts; without one, a uniform mass over the
pattern's parsed receptive-field box is used, which reduces condition (2)
to "more than half of the box area is marked".

Proposals are suggestions only; the caller (a human, in the intended
workflow) confirms which ones to apply.  Prunes are recorded on an
operation stack over an immutable base graph, so the current state is
always exactly "base plus replayed stack" and undo is trivial.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .aog import ParseTree, SemanticPartAOG, prune_pattern
from .geometry import Rect, rect_pixel_mask, rect_pixel_slice
from .parsing import parse
from .tensor_store import LAYER_GROUPS, FeatureStore

SESSION_SCHEMA_VERSION = 1

SaliencyProvider = Callable[[str, str], "np.ndarray | None"]


class SessionError(ValueError):
    pass


@dataclass(frozen=True)
class AnnotatedRegionSet:
    """Rectangles a user marked as irrelevant, targeting one layer group."""

    image_id: str
    rectangles: tuple[Rect, ...]
    layer_group_scope: str

    def __post_init__(self):
        if not self.rectangles:
            raise SessionError("rectangles: annotated region set must be nonempty")
        if self.layer_group_scope not in LAYER_GROUPS:
            raise SessionError(
                f"layer_group_scope: {self.layer_group_scope!r} not in {LAYER_GROUPS}"
            )

    def contains(self, px: float, py: float) -> bool:
        return any(r.contains_point(px, py) for r in self.rectangles)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "rectangles": [r.to_json() for r in self.rectangles],
            "layer_group_scope": self.layer_group_scope,
        }

    @classmethod
    def from_json(cls, data: dict) -> "AnnotatedRegionSet":
        return cls(
            image_id=str(data["image_id"]),
            rectangles=tuple(Rect.from_json(r) for r in data["rectangles"]),
            layer_group_scope=str(data["layer_group_scope"]),
        )


@dataclass(frozen=True)
class SaliencyMap:
    """Per-pixel sensitivity magnitude of one pattern's score."""

    image_id: str
    pattern_id: str
    grid: np.ndarray  # (H, W), nonnegative

    def __post_init__(self):
        if self.grid.ndim != 2:
            raise SessionError(f"saliency for {self.pattern_id}: grid must be 2-D")
        if not np.isfinite(self.grid).all() or (self.grid < 0).any():
            raise SessionError(f"saliency for {self.pattern_id}: values must be finite and >= 0")


@dataclass(frozen=True)
class PruneEvidence:
    """Why a pattern was (or was not) proposed for pruning."""

    pattern_id: str
    unit_center: tuple[float, float]
    center_inside: bool
    inside_mass: float
    outside_mass: float
    source: str  # "saliency" or "fallback"
    proposed: bool

    def to_json(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "unit_center": list(self.unit_center),
            "center_inside": self.center_inside,
            "inside_mass": self.inside_mass,
            "outside_mass": self.outside_mass,
            "source": self.source,
            "proposed": self.proposed,
        }


@dataclass
class PruneOp:
    pattern_id: str
    timestamp: float
    annotation: dict | None = None

    def to_json(self) -> dict:
        return {"pattern_id": self.pattern_id, "timestamp": self.timestamp, "annotation": self.annotation}

    @classmethod
    def from_json(cls, data: dict) -> "PruneOp":
        return cls(
            pattern_id=str(data["pattern_id"]),
            timestamp=float(data["timestamp"]),
            annotation=data.get("annotation"),
        )


def replay_ops(base: SemanticPartAOG, ops) -> SemanticPartAOG:
    aog = base
    for op in ops:
        aog = prune_pattern(aog, op.pattern_id)
    return aog


@dataclass
class InteractionSession:
    """Mutable editing state: base graph, prune stack, per-image parses.

    One writer at a time per session; callers that share a session across
    threads must serialize mutations themselves (the HTTP service does).
    """

    session_id: str
    store: FeatureStore
    base_aog: SemanticPartAOG
    ops: list[PruneOp] = field(default_factory=list)
    trees: dict[str, ParseTree] = field(default_factory=dict)

    @property
    def aog(self) -> SemanticPartAOG:
        return replay_ops(self.base_aog, self.ops)

    def parse_image(self, image_id: str) -> ParseTree:
        record = self.store.manifest.record(image_id)
        tree = parse(
            self.store.load(image_id),
            self.aog,
            record.object_box,
            (record.width_px, record.height_px),
        )
        self.trees[image_id] = tree
        return tree

    def tree_for(self, image_id: str) -> ParseTree:
        if image_id not in self.trees:
            raise SessionError(f"no parse for image {image_id!r}; parse it first")
        return self.trees[image_id]

    def _reparse(self) -> None:
        for image_id in list(self.trees):
            self.parse_image(image_id)

    def to_json(self) -> dict:
        return {
            "session_version": SESSION_SCHEMA_VERSION,
            "session_id": self.session_id,
            "base_aog": self.base_aog.to_json(),
            "ops": [op.to_json() for op in self.ops],
            "working_images": sorted(self.trees),
        }


def load_session(data: dict, store: FeatureStore) -> InteractionSession:
    """Rebuild a serialized session; parses are recomputed deterministically."""
    version = data.get("session_version")
    if version != SESSION_SCHEMA_VERSION:
        raise SessionError(f"session_version: expected {SESSION_SCHEMA_VERSION}, got {version}")
    session = InteractionSession(
        session_id=str(data["session_id"]),
        store=store,
        base_aog=SemanticPartAOG.from_json(data["base_aog"]),
        ops=[PruneOp.from_json(op) for op in data.get("ops", [])],
    )
    for image_id in data.get("working_images", []):
        session.parse_image(image_id)
    return session


def fallback_saliency(
    pattern_id: str, tree: ParseTree, image_size: tuple[int, int]
) -> SaliencyMap:
    """Uniform mass over the pattern's parsed receptive-field box."""
    width, height = image_size
    assignment = tree.assignment(pattern_id)
    grid = np.zeros((height, width), dtype=np.float64)
    rows, cols = rect_pixel_slice(assignment.unit_region, width, height)
    n = (rows.stop - rows.start) * (cols.stop - cols.start)
    if n > 0:
        grid[rows, cols] = 1.0 / n
    return SaliencyMap(image_id=tree.image_id, pattern_id=pattern_id, grid=grid)


def propose_prunes(
    session: InteractionSession,
    image_id: str,
    regions: AnnotatedRegionSet,
    saliency_provider: SaliencyProvider | None = None,
) -> list[PruneEvidence]:
    """Evaluate the pruning test for every scoped pattern in the parse.

    Returns evidence for each considered pattern; the proposal list is the
    subset with ``proposed=True``.
    """
    tree = session.tree_for(image_id)
    record = session.store.manifest.record(image_id)
    image_box = Rect(0, 0, record.width_px, record.height_px)
    for rect in regions.rectangles:
        if not image_box.contains_rect(rect):
            raise SessionError(f"rectangles: {rect} outside image bounds of {image_id}")

    mask = rect_pixel_mask(regions.rectangles, record.width_px, record.height_px)
    evidence = []
    for assignment in tree.pattern_assignments:
        if session.store.manifest.group_of(assignment.layer_id) != regions.layer_group_scope:
            continue
        center = assignment.unit_region.center
        center_inside = regions.contains(*center)
        sal_grid = saliency_provider(image_id, assignment.pattern_id) if saliency_provider else None
        if sal_grid is not None:
            if sal_grid.shape != mask.shape:
                raise SessionError(
                    f"saliency for {assignment.pattern_id}: shape {sal_grid.shape}"
                    f" does not match image {mask.shape}"
                )
            sal = SaliencyMap(image_id, assignment.pattern_id, np.asarray(sal_grid, dtype=np.float64))
            source = "saliency"
        else:
            sal = fallback_saliency(assignment.pattern_id, tree, (record.width_px, record.height_px))
            source = "fallback"
        inside_mass = float(sal.grid[mask].sum())
        outside_mass = float(sal.grid[~mask].sum())
        evidence.append(
            PruneEvidence(
                pattern_id=assignment.pattern_id,
                unit_center=center,
                center_inside=center_inside,
                inside_mass=inside_mass,
                outside_mass=outside_mass,
                source=source,
                proposed=center_inside and inside_mass > outside_mass,
            )
        )
    return evidence


def proposed_ids(evidence) -> list[str]:
    return [e.pattern_id for e in evidence if e.proposed]


def apply_prunes(
    session: InteractionSession,
    pattern_ids,
    annotation: AnnotatedRegionSet | None = None,
) -> SemanticPartAOG:
    """Prune confirmed patterns, record them on the stack, and re-parse."""
    aog = session.aog
    for pattern_id in pattern_ids:
        pattern = aog.pattern(pattern_id)  # raises on unknown id
        if not pattern.active:
            raise SessionError(f"pattern {pattern_id!r} is already pruned")
        aog = prune_pattern(aog, pattern_id)
    stamp = time.time()
    ann_json = annotation.to_json() if annotation is not None else None
    for pattern_id in pattern_ids:
        session.ops.append(PruneOp(pattern_id=pattern_id, timestamp=stamp, annotation=ann_json))
    session._reparse()
    return session.aog


def undo(session: InteractionSession, k: int = 1) -> SemanticPartAOG:
    """Pop the last ``k`` prune operations and re-parse."""
    if k < 1 or k > len(session.ops):
        raise SessionError(f"cannot undo {k} of {len(session.ops)} operations")
    del session.ops[-k:]
    session._reparse()
    return session.aog
