"""Part localization from pre-computed CNN feature tensors.

A semantic part is modeled as a small hierarchy (templates over latent
patterns over CNN units) mined from a handful of annotated images and
refined interactively by pruning patterns a user marks as irrelevant.
"""

from .aog import (
    LatentPattern,
    ParseTree,
    PartTemplate,
    PatternAssignment,
    ScoreConstants,
    SemanticPartAOG,
    load_aog,
    prune_pattern,
    restore_pattern,
    save_aog,
)
from .evaluation import (
    EvalReport,
    SyntheticConfig,
    evaluate,
    generate_synthetic,
    inject_distractors,
    normalized_distance,
    write_synthetic,
)
from .geometry import LayerGeometry, Rect, receptive_field, unit_center
from .interaction import (
    AnnotatedRegionSet,
    InteractionSession,
    SaliencyMap,
    apply_prunes,
    fallback_saliency,
    propose_prunes,
    undo,
)
from .miner import MinerConfig, mine, rebuild_template_box
from .parsing import SearchGrid, brute_force_parse, parse, score_pattern, score_template, score_unit
from .tensor_store import (
    DatasetManifest,
    FeatureMapSet,
    FeatureStore,
    ImageRecord,
    PartAnnotation,
    load_feature_set,
    load_manifest,
    read_fmap,
    save_manifest,
    write_fmap,
)
from .viz import HeatmapLayer, build_heatmap_layer, pattern_heatmap, render_overlay

__version__ = "0.1.0"
