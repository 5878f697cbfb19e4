"""Tree ensembles, model combination, and ROC evaluation for chest X-ray
embedding pipelines."""

from .conditional import (
    ConditionalTreePipeline,
    propagate_to_unconditional,
    train_conditional_tree_pipeline,
)
from .ensembling import (
    DEFAULT_META_HP,
    EnsembleOutput,
    PredictionMatrix,
    PredictionSet,
    StackingModel,
    bernoulli_entropy,
    entropy_weighted_average,
    read_predictions_csv,
    read_stacking_file,
    simple_average,
    stack_predict,
    stack_predict_set,
    stack_train,
    write_predictions_csv,
    write_stacking_file,
)
from .errors import (
    AlignmentError,
    ConfigError,
    CxrError,
    DataError,
    DegenerateTruthError,
    FormatError,
    HierarchyError,
)
from .evaluation import (
    ConfusionMatrix,
    Decision,
    RocPoint,
    ThresholdCalibration,
    auroc,
    calibrate_threshold,
    classify_with_band,
    confusion_matrix,
    roc_curve,
    trapezoid_area,
)
from .labels import (
    DEFAULT_FINDINGS,
    FOCUS_FINDINGS,
    AnnotationValue,
    FindingLabel,
    LabelHierarchy,
    LabelRegistry,
    LsrConfig,
    RawAnnotation,
    SoftLabelMatrix,
    apply_lsr,
    default_hierarchy,
    default_registry,
    filter_conditional_subset,
    load_hierarchy_file,
    parse_label_csv,
    validate_hierarchy,
    write_label_csv,
)
from .store import (
    AlignedDataset,
    DatasetSplit,
    EmbeddingMatrix,
    align,
    patient_group_key,
    read_embedding_csv,
    read_embedding_file,
    split_dataset,
    write_embedding_file,
)
from .synthetic import GroundTruth, SyntheticSpec, generate
from .trees import (
    BoostHyperparams,
    ForestHyperparams,
    GridSearchResult,
    Tree,
    TreeEnsembleModel,
    grid_search,
    predict,
    read_model_file,
    train_gradient_boosting,
    train_random_forest,
    write_model_file,
)

__version__ = "0.1.0"
