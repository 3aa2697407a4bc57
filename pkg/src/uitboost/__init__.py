"""Boosted-tree transaction screening: engine, tuning, importance, harness."""

from .dataset import (
    FeatureSpec,
    RawTable,
    SplitIndices,
    load_csv,
    load_schema,
    sample_balanced,
    save_schema,
    split_deterministic,
    write_csv,
)
from .gbt import (
    BoostedModel,
    GradPair,
    Hyperparams,
    Tree,
    TreeNode,
    classify,
    evaluate_objective,
    find_best_split,
    leaf_weight,
    load_model,
    logloss_grad_hess,
    predict_margin,
    predict_proba,
    save_model,
    split_gain,
    train,
)
from .harness import (
    AggregateReport,
    ExperimentConfig,
    RunResult,
    SyntheticSpec,
    generate_synthetic,
    run_experiment,
    run_repeated,
)
from .metrics import ConfusionMatrix, MetricsReport, auc_roc, confusion_matrix, derive_rates
from .preprocess import (
    EncodedMatrix,
    OneHotDict,
    PcaModel,
    PreprocessConfig,
    Preprocessor,
    ZScoreParams,
    apply_onehot,
    apply_pca,
    apply_zscore,
    fit_onehot,
    fit_pca,
    fit_zscore,
)
from .tuning import (
    CvConfig,
    SearchSpace,
    TuningResult,
    cross_validate,
    draw_candidate,
    kfold_split,
    random_search,
)

__version__ = "0.1.0"
