"""Adaptive discriminant-analysis baselines.

Both baselines interpolate Gaussian moments between the target's calibration
data and the pooled source data: means via tau, covariances via lambda
(shared covariance for LDA, per-class for QDA). The interpolation weights are
tuned by an 11 x 11 grid search with two-fold cross-validation on the
calibration data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataQualityError
from .preprocess import FeatureSequence

GRID_VALUES = tuple(i / 10 for i in range(11))

_REG_EPS = 1e-6


@dataclass(frozen=True)
class GaussianStats:
    """Maximum-likelihood per-class moments plus the count-weighted pooled covariance."""

    means: np.ndarray  # (C, D); zero vector for classes with no samples
    covariances: np.ndarray  # (C, D, D), ML (divide by n); zero for counts < 2
    counts: np.ndarray  # (C,)
    pooled: np.ndarray  # (D, D)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass(frozen=True)
class DiscriminantModel:
    """Gaussian discriminant with blended moments; kind is 'lda' or 'qda'."""

    kind: str
    means: np.ndarray  # (C, D)
    covariances: np.ndarray  # (C, D, D); identical across classes for LDA
    log_priors: np.ndarray  # (C,); -inf allowed for classes absent from calibration
    tau: float
    lam: float
    _chol: np.ndarray = field(init=False, repr=False)
    _logdet: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        chol = np.stack([np.linalg.cholesky(c) for c in self.covariances])
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", logdet)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]


def _pool_rows(data: FeatureSequence | Sequence[FeatureSequence]):
    if isinstance(data, FeatureSequence):
        data = [data]
    X = np.concatenate([seq.features for seq in data], axis=0)
    y = np.concatenate([seq.labels for seq in data])
    return X, y


def fit_gaussian_stats(
    data: FeatureSequence | Sequence[FeatureSequence], n_classes: int
) -> GaussianStats:
    """ML moments per class; pooled covariance is the count-weighted average."""
    X, y = _pool_rows(data)
    if X.shape[0] < 1:
        raise DataQualityError("cannot fit Gaussian moments on empty data")
    d = X.shape[1]
    means = np.zeros((n_classes, d))
    covs = np.zeros((n_classes, d, d))
    counts = np.zeros(n_classes)
    for c in range(n_classes):
        xc = X[y == c + 1]
        counts[c] = xc.shape[0]
        if xc.shape[0] >= 1:
            means[c] = xc.mean(axis=0)
        if xc.shape[0] >= 2:
            centered = xc - means[c]
            covs[c] = (centered.T @ centered) / xc.shape[0]
    total = counts.sum()
    pooled = np.tensordot(counts, covs, axes=1) / total if total > 0 else np.zeros((d, d))
    return GaussianStats(means=means, covariances=covs, counts=counts, pooled=pooled)


def regularize_covariance(cov: np.ndarray) -> np.ndarray:
    """Add eps * tr/D to the diagonal (eps * I when the trace vanishes).

    Applied unconditionally before inversion so singular class covariances
    from tiny calibration sets never abort a run, while well-conditioned
    matrices move by at most eps * tr/D on the diagonal.
    """
    d = cov.shape[0]
    trace = np.trace(cov)
    bump = _REG_EPS * trace / d if trace > 0 else _REG_EPS
    return (cov + cov.T) / 2.0 + bump * np.eye(d)


def adaptive_blend(
    src: GaussianStats,
    cal: GaussianStats,
    tau: float,
    lam: float,
    kind: str,
    uniform_priors: bool = False,
) -> DiscriminantModel:
    """Interpolate moments: tau weights calibration means, lam calibration covariances.

    Classes absent from the calibration data fall back to source moments and
    get a -inf log prior (unless priors are uniform), so they can only be
    predicted when every class is absent from calibration.
    """
    if not 0.0 <= tau <= 1.0 or not 0.0 <= lam <= 1.0:
        raise ValueError(f"tau and lambda must lie in [0, 1], got tau={tau}, lambda={lam}")
    if kind not in ("lda", "qda"):
        raise ValueError(f"kind must be 'lda' or 'qda', got {kind!r}")
    C, d = src.means.shape

    present = cal.counts > 0
    means = np.where(
        present[:, None], tau * cal.means + (1.0 - tau) * src.means, src.means
    )
    if kind == "lda":
        blended = lam * cal.pooled + (1.0 - lam) * src.pooled
        covs = np.stack([regularize_covariance(blended)] * C)
    else:
        covs = np.stack(
            [
                regularize_covariance(lam * cal.covariances[c] + (1.0 - lam) * src.covariances[c])
                for c in range(C)
            ]
        )

    if uniform_priors:
        log_priors = np.full(C, -np.log(C))
    else:
        with np.errstate(divide="ignore"):
            log_priors = np.log(cal.counts / cal.counts.sum())
    return DiscriminantModel(
        kind=kind, means=means, covariances=covs, log_priors=log_priors, tau=tau, lam=lam
    )


def _log_gaussian(model: DiscriminantModel, X: np.ndarray) -> np.ndarray:
    """(N, C) Gaussian log densities under each class of the model."""
    n, d = X.shape
    out = np.empty((n, model.n_classes))
    for c in range(model.n_classes):
        diff = X - model.means[c]
        sol = np.linalg.solve(model._chol[c], diff.T)  # lower-triangular solve
        maha = np.einsum("ij,ij->j", sol, sol)
        out[:, c] = -0.5 * (d * np.log(2.0 * np.pi) + model._logdet[c] + maha)
    return out


def discriminant_predict(model: DiscriminantModel, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Class probabilities and 1-based argmax for one point; ties to the lowest index."""
    probs, labels = discriminant_predict_batch(model, np.asarray(x, dtype=float)[None, :])
    return probs[0], int(labels[0])


def discriminant_predict_batch(
    model: DiscriminantModel, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    logp = model.log_priors + _log_gaussian(model, X)
    finite_max = np.max(logp, axis=1, keepdims=True)
    # All classes can be -inf only if every prior is zero, which fit prevents.
    shift = logp - finite_max
    probs = np.exp(shift)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, np.argmax(logp, axis=1) + 1


@dataclass(frozen=True)
class GridSearchResult:
    tau: float
    lam: float
    score: float
    status: str  # "ok" or "fallback"


def _temporal_folds(cal: FeatureSequence) -> tuple[np.ndarray, np.ndarray]:
    """Two boolean masks: per class, first ceil(n/2) rows vs the remainder."""
    first = np.zeros(cal.n_samples, dtype=bool)
    for c in np.unique(cal.labels):
        idx = np.flatnonzero(cal.labels == c)
        first[idx[: (len(idx) + 1) // 2]] = True
    return first, ~first


def _subset(cal: FeatureSequence, mask: np.ndarray) -> FeatureSequence:
    return FeatureSequence(
        features=cal.features[mask],
        labels=cal.labels[mask],
        subject_id=cal.subject_id,
        trial_id=cal.trial_id,
    )


def grid_search_cv(
    cal: FeatureSequence,
    src: GaussianStats,
    kind: str,
    n_classes: int,
    uniform_priors: bool = False,
) -> GridSearchResult:
    """11 x 11 grid over (tau, lambda) scored by two-fold CV accuracy.

    Folds are per-class temporal halves of the calibration data (first half
    trains against second half and vice versa), which respects the
    time-series character of a calibration trial and is deterministic. Ties
    resolve toward smaller tau, then smaller lambda. When no class has two
    samples the folds cannot be formed and the result falls back to
    tau = lambda = 0 with status "fallback".
    """
    if cal.n_samples < 1:
        raise DataQualityError("grid search requires a nonempty calibration set")
    mask_a, mask_b = _temporal_folds(cal)
    if not mask_a.any() or not mask_b.any():
        return GridSearchResult(tau=0.0, lam=0.0, score=float("nan"), status="fallback")

    folds = []
    for train_mask, eval_mask in ((mask_a, mask_b), (mask_b, mask_a)):
        train = _subset(cal, train_mask)
        stats = fit_gaussian_stats(train, n_classes)
        folds.append((stats, cal.features[eval_mask], cal.labels[eval_mask]))

    best = (-1.0, 0.0, 0.0)
    for tau in GRID_VALUES:
        for lam in GRID_VALUES:
            fold_acc = []
            for stats, X_eval, y_eval in folds:
                model = adaptive_blend(src, stats, tau, lam, kind, uniform_priors)
                _, pred = discriminant_predict_batch(model, X_eval)
                fold_acc.append(float(np.mean(pred == y_eval)))
            score = float(np.mean(fold_acc))
            if score > best[0]:
                best = (score, tau, lam)
    return GridSearchResult(tau=best[1], lam=best[2], score=best[0], status="ok")
