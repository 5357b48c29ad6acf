"""Experiment runners: transfer-mode ablation, method comparison, r sweep.

Every runner walks the leave-one-subject-out protocol: each subject in turn
becomes the target, its designated trial (optionally truncated to a temporal
prefix) is the calibration set, its remaining trials are pooled into one
per-subject accuracy. Reported "mean +/- std" aggregates those per-target
accuracies; the r sweep reports mean with a 95% confidence interval
(1.96 * std / sqrt(S)).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .baselines import (
    adaptive_blend,
    discriminant_predict_batch,
    fit_gaussian_stats,
    grid_search_cv,
)
from .datasets import (
    Dataset,
    RoleSplit,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    split_roles,
    truncate_calibration,
)
from .errors import DataQualityError, VartransferError
from .gcm import (
    PriorHyperparams,
    TransferConfig,
    build_predictive,
    compute_weights,
    init_prior,
    predict_batch,
    pretrain_source,
    transfer_update,
)
from .preprocess import FeatureSequence, PreprocessConfig

METHODS = ("adaptive_lda", "adaptive_qda", "proposed")
DEFAULT_R_VALUES = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative experiment description, loadable from one JSON file."""

    manifest: str | None = None
    synthetic: SyntheticConfig | None = None
    methods: tuple[str, ...] = METHODS
    transfer_modes: tuple[str, ...] = ("none", "mean", "variance", "both")
    calibration_fractions: tuple[float, ...] = (0.25, 1.0)
    r_values: tuple[float, ...] = DEFAULT_R_VALUES
    sweep_calibration_fraction: float = 1.0
    prior_overrides: dict = field(default_factory=dict)
    preprocess: PreprocessConfig = PreprocessConfig()
    calibration_trial: int = 1
    uniform_priors: bool = False
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise VartransferError("config needs exactly one of manifest or synthetic dataset")
        if not self.methods:
            raise VartransferError("at least one method is required")
        for f in (*self.calibration_fractions, self.sweep_calibration_fraction):
            if not 0.0 < f <= 1.0:
                raise VartransferError(f"calibration fractions must lie in (0, 1], got {f}")
        for m in self.methods:
            if m not in METHODS:
                raise VartransferError(f"unknown method {m!r}; expected one of {METHODS}")
        for r in self.r_values:
            if r < 0:
                raise VartransferError(f"r values must be nonnegative, got {r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        dataset = d.pop("dataset", {})
        manifest = dataset.get("manifest")
        synthetic = dataset.get("synthetic")
        if synthetic is not None:
            synthetic = SyntheticConfig.from_dict(synthetic)
        pp = d.pop("preprocess", None)
        kwargs = {
            "manifest": manifest,
            "synthetic": synthetic,
            "preprocess": PreprocessConfig(**pp) if pp else PreprocessConfig(),
        }
        for key in (
            "methods",
            "transfer_modes",
            "calibration_fractions",
            "r_values",
        ):
            if key in d:
                kwargs[key] = tuple(d.pop(key))
        for key in (
            "sweep_calibration_fraction",
            "prior_overrides",
            "calibration_trial",
            "uniform_priors",
            "seed",
            "out_dir",
        ):
            if key in d:
                kwargs[key] = d.pop(key)
        if d:
            raise VartransferError(f"unknown config keys: {sorted(d)}")
        return cls(**kwargs)

    def to_dict(self) -> dict:
        dataset = (
            {"manifest": self.manifest}
            if self.manifest is not None
            else {
                "synthetic": {
                    "n_subjects": self.synthetic.n_subjects,
                    "n_classes": self.synthetic.n_classes,
                    "dim": self.synthetic.dim,
                    "samples_per_class": self.synthetic.samples_per_class,
                    "n_trials": self.synthetic.n_trials,
                    "subject_sigma": self.synthetic.subject_sigma,
                    "class_separation": self.synthetic.class_separation,
                    "covariance": _jsonable(self.synthetic.covariance),
                    "seed": self.synthetic.seed,
                }
            }
        )
        return {
            "dataset": dataset,
            "methods": list(self.methods),
            "transfer_modes": list(self.transfer_modes),
            "calibration_fractions": list(self.calibration_fractions),
            "r_values": list(self.r_values),
            "sweep_calibration_fraction": self.sweep_calibration_fraction,
            "prior_overrides": _jsonable(self.prior_overrides),
            "preprocess": {
                "cutoff_hz": self.preprocess.cutoff_hz,
                "decimation": self.preprocess.decimation,
            },
            "calibration_trial": self.calibration_trial,
            "uniform_priors": self.uniform_priors,
            "seed": self.seed,
            "out_dir": self.out_dir,
        }

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    return value


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


def prepare_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.manifest is not None:
        return load_dataset(cfg.manifest, preprocess=cfg.preprocess)
    synthetic = cfg.synthetic
    if synthetic.seed is None:
        synthetic = replace(synthetic, seed=cfg.seed)
    return generate_synthetic(synthetic)


def build_prior(cfg: ExperimentConfig, dim: int) -> PriorHyperparams:
    overrides = dict(cfg.prior_overrides)
    for key in ("m0", "W0"):
        if key in overrides:
            overrides[key] = np.asarray(overrides[key], dtype=float)
    return init_prior(dim, **overrides)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def evaluate_accuracy(
    predict_fn: Callable[[np.ndarray], np.ndarray], test: Sequence[FeatureSequence]
) -> float:
    """Pooled per-sample accuracy (%) over all test trials."""
    acc, _ = _score_with_log(predict_fn, test)
    return acc


def _score_with_log(predict_fn, test: Sequence[FeatureSequence]):
    correct = 0
    total = 0
    log_rows = []
    for seq in test:
        pred = np.asarray(predict_fn(seq.features))
        correct += int(np.sum(pred == seq.labels))
        total += seq.n_samples
        log_rows.extend(
            (seq.trial_id, i, int(seq.labels[i]), int(pred[i])) for i in range(seq.n_samples)
        )
    if total == 0:
        raise DataQualityError("cannot score an empty test set")
    return 100.0 * correct / total, log_rows


def _gcm_predict_fn(model):
    return lambda X: predict_batch(model, X)[1]


def _run_gcm(
    prior: PriorHyperparams,
    split: RoleSplit,
    n_classes: int,
    fraction: float,
    mode: str,
    r: float | None,
    src_cache: dict | None = None,
):
    """One target-subject run of the Bayesian pipeline; returns (accuracy, logs).

    src_cache, keyed by (fraction, r), avoids repeating the pre-training when
    several modes share one split; the weights depend on the truncated
    calibration size, so the fraction is part of the key.
    """
    cal = truncate_calibration(split.calibration, fraction)
    if mode == "none":
        src_post = None
    else:
        cache_key = (fraction, r)
        if src_cache is not None and cache_key in src_cache:
            src_post = src_cache[cache_key]
        else:
            weights = compute_weights(
                cal.n_samples, [s.n_samples for s in split.source], r
            )
            src_post = pretrain_source(prior, split.source, weights, n_classes)
            if src_cache is not None:
                src_cache[cache_key] = src_post
    post = transfer_update(prior, src_post, cal, TransferConfig(mode=mode, r=r), n_classes)
    model = build_predictive(post)
    return _score_with_log(_gcm_predict_fn(model), split.test)


# ---------------------------------------------------------------------------
# Report tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReportRow:
    dataset: str
    method: str  # transfer mode or method name
    calibration_fraction: float
    mean_accuracy: float
    std_accuracy: float  # sample std (ddof=1) across target subjects
    per_subject: dict  # subject_id -> accuracy %
    hyperparams: dict  # subject_id -> short description of selected settings


@dataclass(frozen=True)
class ReportTable:
    kind: str  # "ablation" or "comparison"
    rows: tuple[ReportRow, ...]

    def row(self, method: str, fraction: float) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.calibration_fraction == fraction:
                return r
        raise KeyError(f"no row for method={method!r} fraction={fraction}")


def _aggregate(dataset, method, fraction, per_subject, hyperparams=None) -> ReportRow:
    values = np.array(list(per_subject.values()))
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return ReportRow(
        dataset=dataset,
        method=method,
        calibration_fraction=fraction,
        mean_accuracy=float(np.mean(values)),
        std_accuracy=std,
        per_subject=dict(per_subject),
        hyperparams=dict(hyperparams or {}),
    )


PredictionLogs = dict  # (subject_id, label, fraction) -> list of (trial, idx, true, pred)


def run_ablation(cfg: ExperimentConfig, ds: Dataset | None = None):
    """Accuracy for every transfer mode x calibration fraction, LOSO across subjects."""
    ds = ds or prepare_dataset(cfg)
    prior = build_prior(cfg, ds.dim)
    logs: PredictionLogs = {}
    per_cell: dict = {
        (mode, f): {} for mode in cfg.transfer_modes for f in cfg.calibration_fractions
    }
    for target in ds.subject_ids:
        split = split_roles(ds, target, cfg.calibration_trial)
        cache: dict = {}
        for fraction in cfg.calibration_fractions:
            for mode in cfg.transfer_modes:
                acc, rows = _run_gcm(
                    prior, split, ds.n_classes, fraction, mode, r=None,
                    src_cache=cache,
                )
                per_cell[(mode, fraction)][target] = acc
                logs[(target, mode, fraction)] = rows
    rows = tuple(
        _aggregate(ds.name, mode, fraction, per_cell[(mode, fraction)])
        for mode in cfg.transfer_modes
        for fraction in cfg.calibration_fractions
    )
    return ReportTable(kind="ablation", rows=rows), logs


def run_comparison(cfg: ExperimentConfig, ds: Dataset | None = None):
    """Adaptive LDA / adaptive QDA / proposed variance transfer, LOSO."""
    ds = ds or prepare_dataset(cfg)
    prior = build_prior(cfg, ds.dim)
    logs: PredictionLogs = {}
    per_cell: dict = {
        (m, f): {} for m in cfg.methods for f in cfg.calibration_fractions
    }
    hyper: dict = {(m, f): {} for m in cfg.methods for f in cfg.calibration_fractions}
    for target in ds.subject_ids:
        split = split_roles(ds, target, cfg.calibration_trial)
        src_stats = fit_gaussian_stats(split.source, ds.n_classes)
        cache: dict = {}
        for fraction in cfg.calibration_fractions:
            cal = truncate_calibration(split.calibration, fraction)
            for method in cfg.methods:
                if method == "proposed":
                    acc, rows = _run_gcm(
                        prior, split, ds.n_classes, fraction, "variance", r=None,
                        src_cache=cache,
                    )
                    hp = "r=1"
                else:
                    kind = "lda" if method == "adaptive_lda" else "qda"
                    result = grid_search_cv(
                        cal, src_stats, kind, ds.n_classes, cfg.uniform_priors
                    )
                    cal_stats = fit_gaussian_stats(cal, ds.n_classes)
                    model = adaptive_blend(
                        src_stats, cal_stats, result.tau, result.lam, kind,
                        cfg.uniform_priors,
                    )
                    acc, rows = _score_with_log(
                        lambda X: discriminant_predict_batch(model, X)[1], split.test
                    )
                    hp = f"tau={result.tau},lambda={result.lam}"
                    if result.status != "ok":
                        hp += f",status={result.status}"
                per_cell[(method, fraction)][target] = acc
                hyper[(method, fraction)][target] = hp
                logs[(target, method, fraction)] = rows
    rows = tuple(
        _aggregate(ds.name, m, f, per_cell[(m, f)], hyper[(m, f)])
        for m in cfg.methods
        for f in cfg.calibration_fractions
    )
    return ReportTable(kind="comparison", rows=rows), logs


@dataclass(frozen=True)
class SweepRow:
    r: float
    mean_accuracy: float
    ci_halfwidth: float  # 1.96 * std / sqrt(S)
    per_subject: dict


def run_r_sweep(cfg: ExperimentConfig, ds: Dataset | None = None) -> tuple[SweepRow, ...]:
    """Variance-transfer accuracy across the configured r values."""
    ds = ds or prepare_dataset(cfg)
    prior = build_prior(cfg, ds.dim)
    fraction = cfg.sweep_calibration_fraction
    per_r: dict = {r: {} for r in cfg.r_values}
    for target in ds.subject_ids:
        split = split_roles(ds, target, cfg.calibration_trial)
        for r in cfg.r_values:
            acc, _ = _run_gcm(prior, split, ds.n_classes, fraction, "variance", r=r)
            per_r[r][target] = acc
    rows = []
    for r in cfg.r_values:
        values = np.array(list(per_r[r].values()))
        std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        rows.append(
            SweepRow(
                r=float(r),
                mean_accuracy=float(np.mean(values)),
                ci_halfwidth=1.96 * std / np.sqrt(len(values)),
                per_subject=dict(per_r[r]),
            )
        )
    return tuple(rows)
