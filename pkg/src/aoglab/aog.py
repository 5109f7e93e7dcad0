"""The four-level part model and its serialization.

A semantic part is an OR over part templates (appearance variants); each
template is an AND over latent patterns; each pattern is an OR over the CNN
units inside its deformation window; units are the terminals.  This module
only defines the structure, validation, and JSON round-trip; scoring lives
in :mod:`aoglab.parsing`.

Values are immutable snapshots: pruning and restoring return new graphs so
an interactive session can keep an undo history by replaying operations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .geometry import Rect

AOG_SCHEMA_VERSION = 1
PARSE_TREE_SCHEMA_VERSION = 1

DEFAULT_DEFORM_WEIGHT = 1.0 / 3.0
DEFAULT_GEOMETRY_WEIGHT = 5.0

SCORE_DECOMPOSITION_TOL = 1e-9


class AogValidationError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreConstants:
    """Weights of the deformation and geometric penalties."""

    lambda_def: float = DEFAULT_DEFORM_WEIGHT
    lambda_geo: float = DEFAULT_GEOMETRY_WEIGHT

    def to_json(self) -> dict:
        return {"lambda_def": self.lambda_def, "lambda_geo": self.lambda_geo}

    @classmethod
    def from_json(cls, data: dict) -> "ScoreConstants":
        return cls(float(data["lambda_def"]), float(data["lambda_geo"]))


@dataclass(frozen=True)
class LatentPattern:
    """One mined pattern: a channel plus a square deformation window.

    ``deform_center`` is in cells of the pattern's layer; ``displacement``
    is the expected image-plane offset (pixels) from the pattern's chosen
    unit to the part center.  Pruned patterns stay in the structure with
    ``active=False`` so pruning is undoable.
    """

    pattern_id: str
    layer_id: str
    channel: int
    deform_center: tuple[int, int]  # (x, y) cells
    deform_half_extent: int  # cells
    displacement: tuple[float, float]  # (dx, dy) pixels
    active: bool = True

    def to_json(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "layer_id": self.layer_id,
            "channel": self.channel,
            "deform_center_cell": list(self.deform_center),
            "deform_half_extent_cell": self.deform_half_extent,
            "displacement_px": list(self.displacement),
            "active": self.active,
        }

    @classmethod
    def from_json(cls, data: dict) -> "LatentPattern":
        return cls(
            pattern_id=str(data["pattern_id"]),
            layer_id=str(data["layer_id"]),
            channel=int(data["channel"]),
            deform_center=(int(data["deform_center_cell"][0]), int(data["deform_center_cell"][1])),
            deform_half_extent=int(data["deform_half_extent_cell"]),
            displacement=(float(data["displacement_px"][0]), float(data["displacement_px"][1])),
            active=bool(data.get("active", True)),
        )


@dataclass(frozen=True)
class PartTemplate:
    template_id: str
    patterns: tuple[LatentPattern, ...]
    canonical_box: tuple[float, float]  # (w, h) pixels

    def active_patterns(self) -> tuple[LatentPattern, ...]:
        return tuple(p for p in self.patterns if p.active)

    def to_json(self) -> dict:
        return {
            "template_id": self.template_id,
            "canonical_box_px": {"w": self.canonical_box[0], "h": self.canonical_box[1]},
            "patterns": [p.to_json() for p in self.patterns],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PartTemplate":
        box = data["canonical_box_px"]
        return cls(
            template_id=str(data["template_id"]),
            patterns=tuple(LatentPattern.from_json(p) for p in data["patterns"]),
            canonical_box=(float(box["w"]), float(box["h"])),
        )


@dataclass(frozen=True)
class SemanticPartAOG:
    part_name: str
    templates: tuple[PartTemplate, ...]
    constants: ScoreConstants = field(default_factory=ScoreConstants)
    provenance: Mapping[str, Any] = field(default_factory=dict)

    def template(self, template_id: str) -> PartTemplate:
        for tpl in self.templates:
            if tpl.template_id == template_id:
                return tpl
        raise AogValidationError(f"unknown template {template_id!r}")

    def pattern(self, pattern_id: str) -> LatentPattern:
        for tpl in self.templates:
            for p in tpl.patterns:
                if p.pattern_id == pattern_id:
                    return p
        raise AogValidationError(f"unknown pattern {pattern_id!r}")

    def iter_patterns(self):
        for tpl in self.templates:
            yield from tpl.patterns

    def active_pattern_count(self) -> int:
        return sum(1 for p in self.iter_patterns() if p.active)

    def to_json(self) -> dict:
        return {
            "aog_version": AOG_SCHEMA_VERSION,
            "part_name": self.part_name,
            "constants": self.constants.to_json(),
            "provenance": dict(self.provenance),
            "templates": [t.to_json() for t in self.templates],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SemanticPartAOG":
        version = data.get("aog_version")
        if version != AOG_SCHEMA_VERSION:
            raise AogValidationError(f"aog_version: expected {AOG_SCHEMA_VERSION}, got {version}")
        aog = cls(
            part_name=str(data["part_name"]),
            templates=tuple(PartTemplate.from_json(t) for t in data["templates"]),
            constants=ScoreConstants.from_json(data["constants"]),
            provenance=dict(data.get("provenance", {})),
        )
        validate_aog(aog)
        return aog


def validate_aog(aog: SemanticPartAOG) -> None:
    """Check structural invariants; raises naming the offending field."""
    if not aog.templates:
        raise AogValidationError("templates: need at least one part template")
    if not (aog.constants.lambda_def > 0 and aog.constants.lambda_geo > 0):
        raise AogValidationError("constants: lambda_def and lambda_geo must be positive")
    template_ids = [t.template_id for t in aog.templates]
    if len(set(template_ids)) != len(template_ids):
        raise AogValidationError("templates: duplicate template_id")
    for tpl in aog.templates:
        pattern_ids = [p.pattern_id for p in tpl.patterns]
        if len(set(pattern_ids)) != len(pattern_ids):
            raise AogValidationError(f"template {tpl.template_id}: duplicate pattern_id")
        if not (tpl.canonical_box[0] > 0 and tpl.canonical_box[1] > 0):
            raise AogValidationError(f"template {tpl.template_id}: canonical_box must be positive")
        for p in tpl.patterns:
            if p.channel < 0:
                raise AogValidationError(f"pattern {p.pattern_id}: channel must be >= 0")
            if p.deform_half_extent < 0:
                raise AogValidationError(f"pattern {p.pattern_id}: deform_half_extent must be >= 0")
            if p.deform_center[0] < 0 or p.deform_center[1] < 0:
                raise AogValidationError(f"pattern {p.pattern_id}: deform_center must be >= 0")
            if not all(math.isfinite(v) for v in p.displacement):
                raise AogValidationError(f"pattern {p.pattern_id}: displacement must be finite")


def save_aog(aog: SemanticPartAOG, path) -> None:
    validate_aog(aog)
    Path(path).write_text(json.dumps(aog.to_json(), indent=2, sort_keys=True), encoding="utf-8")


def load_aog(path) -> SemanticPartAOG:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AogValidationError(f"{path}: not valid JSON ({exc})") from exc
    return SemanticPartAOG.from_json(data)


def _set_active(aog: SemanticPartAOG, pattern_id: str, active: bool) -> SemanticPartAOG:
    found = False
    templates = []
    for tpl in aog.templates:
        patterns = []
        for p in tpl.patterns:
            if p.pattern_id == pattern_id:
                found = True
                p = replace(p, active=active)
            patterns.append(p)
        templates.append(replace(tpl, patterns=tuple(patterns)))
    if not found:
        raise AogValidationError(f"unknown pattern {pattern_id!r}")
    return replace(aog, templates=tuple(templates))


def prune_pattern(aog: SemanticPartAOG, pattern_id: str) -> SemanticPartAOG:
    """Deactivate a pattern; structure is kept so the prune can be undone."""
    return _set_active(aog, pattern_id, False)


def restore_pattern(aog: SemanticPartAOG, pattern_id: str) -> SemanticPartAOG:
    return _set_active(aog, pattern_id, True)


# ---------------------------------------------------------------------------
# Parse results

@dataclass(frozen=True)
class PatternAssignment:
    """The unit a pattern selected, with its score decomposition."""

    pattern_id: str
    layer_id: str
    channel: int
    x: int
    y: int
    unit_region: Rect
    response: float
    deform_penalty: float
    geo_penalty: float
    contribution: float

    def to_json(self) -> dict:
        return {
            "pattern_id": self.pattern_id,
            "unit": {"layer_id": self.layer_id, "channel": self.channel, "x": self.x, "y": self.y},
            "unit_region": self.unit_region.to_json(),
            "response": self.response,
            "deform_penalty": self.deform_penalty,
            "geo_penalty": self.geo_penalty,
            "contribution": self.contribution,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PatternAssignment":
        unit = data["unit"]
        return cls(
            pattern_id=str(data["pattern_id"]),
            layer_id=str(unit["layer_id"]),
            channel=int(unit["channel"]),
            x=int(unit["x"]),
            y=int(unit["y"]),
            unit_region=Rect.from_json(data["unit_region"]),
            response=float(data["response"]),
            deform_penalty=float(data["deform_penalty"]),
            geo_penalty=float(data["geo_penalty"]),
            contribution=float(data["contribution"]),
        )


@dataclass(frozen=True)
class ParseTree:
    image_id: str
    chosen_template_id: str
    part_region: Rect
    total_score: float
    pattern_assignments: tuple[PatternAssignment, ...]

    def __post_init__(self):
        for a in self.pattern_assignments:
            resid = a.contribution - ((a.response - a.deform_penalty) - a.geo_penalty)
            if abs(resid) > SCORE_DECOMPOSITION_TOL:
                raise AogValidationError(
                    f"assignment {a.pattern_id}: contribution does not decompose (residual {resid})"
                )
        total = math.fsum(a.contribution for a in self.pattern_assignments)
        if abs(total - self.total_score) > SCORE_DECOMPOSITION_TOL:
            raise AogValidationError(
                f"total_score {self.total_score} != sum of contributions {total}"
            )

    def assignment(self, pattern_id: str) -> PatternAssignment:
        for a in self.pattern_assignments:
            if a.pattern_id == pattern_id:
                return a
        raise AogValidationError(f"no assignment for pattern {pattern_id!r}")

    def to_json(self) -> dict:
        return {
            "parse_tree_version": PARSE_TREE_SCHEMA_VERSION,
            "image_id": self.image_id,
            "chosen_template_id": self.chosen_template_id,
            "part_region": self.part_region.to_json(),
            "total_score": self.total_score,
            "pattern_assignments": [a.to_json() for a in self.pattern_assignments],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ParseTree":
        version = data.get("parse_tree_version")
        if version != PARSE_TREE_SCHEMA_VERSION:
            raise AogValidationError(
                f"parse_tree_version: expected {PARSE_TREE_SCHEMA_VERSION}, got {version}"
            )
        return cls(
            image_id=str(data["image_id"]),
            chosen_template_id=str(data["chosen_template_id"]),
            part_region=Rect.from_json(data["part_region"]),
            total_score=float(data["total_score"]),
            pattern_assignments=tuple(
                PatternAssignment.from_json(a) for a in data["pattern_assignments"]
            ),
        )
