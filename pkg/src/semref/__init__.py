"""semref: a semantic-referee feedback loop for per-pixel classification.

A per-pixel classifier's low-certainty regions are characterized by
their RCC-8 spatial relations with confident neighbours, arbitrated
against a city ontology, and returned to the classifier as three extra
input channels (shadow, elevation, uncertainty) over repeated rounds.
"""

__version__ = "0.1.0"

from .classifier import (
    PixelClassifier,
    TrainConfig,
    gradient_check,
    load_model,
    median_frequency_weights,
    predict,
    save_model,
    train,
    weights_from_labels,
)
from .ontology import (
    Ontology,
    OntologyError,
    Violation,
    check_region_consistency,
    default_ontology,
    default_ontology_path,
    load_ontology,
    parse_ontology,
    query_exists,
    subsumes,
)
from .pipeline import (
    LoopConfig,
    LoopResult,
    Metrics,
    confusion_metrics,
    format_confusion,
    run_loop,
    run_round,
    write_report,
)
from .raster import (
    ClassDef,
    ClassTable,
    LabelRaster,
    MultiChannelRaster,
    ProbabilityRaster,
    RasterFormatError,
    concat_channels,
    load_raster,
    save_raster,
)
from .rcc8 import DEFAULT_HIERARCHY, INTERSECTS, Rcc8, RelationHierarchy, compute_rcc8, relation_subsumes
from .referee import (
    FeedbackChannels,
    RegionVerdict,
    RelationHistogram,
    characterize_errors,
    infer_region_verdicts,
    referee_channels,
    relations_between,
    scene_consistency_violations,
    synthesize_channels,
)
from .regions import (
    Region,
    RegionPartition,
    SegmentGrid,
    extract_regions,
    grid_segments,
    region_from_mask,
    score_regions,
    trace_boundary,
)
from .synth import CLASS_NAMES, Palette, SceneBundle, SceneSpec, generate_scene, load_scene, save_scene
