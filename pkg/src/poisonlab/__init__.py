"""poisonlab: data-poisoning attacks, a two-layer sanitization defense, and
feature-oriented adversarial training for multiclass tabular learners, with a
seed-deterministic evaluation matrix."""

__version__ = "0.1.0"

from .attacks import (
    PoisonRecord,
    apply_record,
    invert_record,
    poison_outliers,
    poison_random_labels,
    poison_subpopulation,
    seeded_kmeans,
)
from .data import (
    DataFormatError,
    Dataset,
    StandardizationParams,
    load_dataset_json,
    load_idx_pair,
    load_iris_csv,
    load_usps_text,
    save_dataset_json,
    split,
    standardize_apply,
    standardize_fit,
    stratified_subsample,
    synth_blobs,
)
from .fort import (
    FortConfig,
    build_adversarial_rows,
    fort_fit,
    margins,
    perturb,
    select_augmentation_points,
)
from .harness import (
    Cell,
    CellResult,
    DatasetSpec,
    ExperimentSpec,
    ModelSpec,
    bounds_table,
    plan_cells,
    run_cell,
    run_matrix,
    summarize,
)
from .metrics import (
    MetricsBundle,
    accuracy,
    compute_bundle,
    confusion,
    correction_rate,
    detection_rate,
    f1_macro,
    fdr,
    recall_macro,
)
from .models import (
    MODEL_KINDS,
    feature_importance,
    fit,
    load_model,
    predict,
    predict_proba,
    save_model,
)
from .sanitizer import (
    SanitizationOutcome,
    SanitizerConfig,
    knn_confidence,
    relabel,
    remove_outliers,
    sanitize,
    zscore_stats,
)
