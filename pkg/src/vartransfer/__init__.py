"""Bayesian inter-subject variance transfer for EMG pattern classification."""

__version__ = "0.1.0"

from .baselines import (
    DiscriminantModel,
    GaussianStats,
    GridSearchResult,
    adaptive_blend,
    discriminant_predict,
    fit_gaussian_stats,
    grid_search_cv,
)
from .datasets import (
    Dataset,
    RoleSplit,
    SubjectData,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_roles,
    truncate_calibration,
)
from .errors import (
    DataQualityError,
    DatasetError,
    FilterDesignError,
    InvalidPosteriorError,
    InvalidPriorError,
    NumericalDegeneracyError,
    VartransferError,
)
from .experiments import (
    ExperimentConfig,
    ReportRow,
    ReportTable,
    SweepRow,
    evaluate_accuracy,
    load_config,
    run_ablation,
    run_comparison,
    run_r_sweep,
)
from .gcm import (
    PredictiveModel,
    PriorHyperparams,
    SourcePosterior,
    TargetPosterior,
    TransferConfig,
    build_predictive,
    class_log_densities,
    compute_weights,
    init_prior,
    load_posterior,
    predict,
    predict_batch,
    pretrain_source,
    save_posterior,
    transfer_update,
)
from .preprocess import (
    FeatureSequence,
    FilterCoefficients,
    PreprocessConfig,
    RawTrial,
    apply_filter,
    design_butterworth2_lowpass,
    extract_features,
    full_wave_rectify,
)
