"""Landmark-based active shape models with residual-covariance weighting."""

from ._core import (
    Error,
    FitResult,
    LabeledImage,
    LooConfig,
    LooReport,
    Model,
    PointDistributionModel,
    SimilarityTransform,
    Strategy,
    StrategyReport,
    checksum,
    chi_square_gate,
    chi_square_upper_quantile,
    complex_normal_neg_log_likelihood,
    constrain,
    corpus_seed,
    estimate_covariance,
    generate_corpus,
    gls_fit,
    load_image,
    load_landmarks,
    load_model,
    load_samples,
    model_points,
    parse_strategy,
    plausibility,
    point_to_contour_distance,
    procrustes_align,
    reconstruct,
    run_leave_one_out,
    sample_residual_covariance,
    segment,
    solve_pose,
    train,
    train_pdm,
)

__all__ = [name for name in dir() if not name.startswith("_")]
