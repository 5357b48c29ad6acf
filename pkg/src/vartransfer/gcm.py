"""Bayesian Gaussian classification with inter-subject variance transfer.

Each motion class gets a Gaussian likelihood whose mean and precision carry a
conjugate Gaussian-Wishart prior; class proportions carry a Dirichlet prior.
Pre-training on source subjects keeps per-subject mean hyperparameters but
pools the precision hyperparameters (nu, W^-1) across subjects, scaled by a
per-source weight w_s that controls how much source evidence counts. The
pooled precision hyperparameters can then seed the target subject's update so
only variance information crosses subjects. Prediction marginalizes the
posterior analytically: each class becomes a multivariate Student-t weighted
by the Dirichlet posterior mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    InvalidPosteriorError,
    InvalidPriorError,
    NumericalDegeneracyError,
)
from .preprocess import FeatureSequence

TRANSFER_MODES = ("none", "mean", "variance", "both")

_SPD_JITTER = 1e-10


def symmetrize(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def ensure_spd(a: np.ndarray, context: str = "scale matrix") -> np.ndarray:
    """Symmetrize and verify positive definiteness via Cholesky.

    A single jitter retry (1e-10 * tr/D on the diagonal) absorbs the
    floating-point drift that outer-product accumulation causes on large N;
    anything worse is a genuine degeneracy and raises.
    """
    a = symmetrize(np.asarray(a, dtype=float))
    try:
        np.linalg.cholesky(a)
        return a
    except np.linalg.LinAlgError:
        pass
    trace = np.trace(a)
    if trace <= 0:
        raise NumericalDegeneracyError(f"{context}: not positive definite (trace {trace})")
    jittered = a + (_SPD_JITTER * trace / a.shape[0]) * np.eye(a.shape[0])
    try:
        np.linalg.cholesky(jittered)
        return jittered
    except np.linalg.LinAlgError:
        raise NumericalDegeneracyError(f"{context}: not positive definite after jitter") from None


def _logsumexp(v: np.ndarray) -> float:
    vmax = np.max(v)
    if not np.isfinite(vmax):
        return float(vmax)
    return float(vmax + np.log(np.sum(np.exp(v - vmax))))


@dataclass(frozen=True)
class PriorHyperparams:
    """Gaussian-Wishart prior (m0, beta0, nu0, W0) plus Dirichlet count alpha0."""

    m0: np.ndarray  # (D,)
    beta0: float
    nu0: float
    W0: np.ndarray  # (D, D), symmetric positive definite
    alpha0: float
    w0_inv: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m0 = np.asarray(self.m0, dtype=float)
        w0 = np.asarray(self.W0, dtype=float)
        d = m0.shape[0]
        if m0.ndim != 1 or d < 1:
            raise InvalidPriorError(f"m0 must be a D-vector, got shape {m0.shape}")
        if w0.shape != (d, d):
            raise InvalidPriorError(f"W0 must be {d}x{d}, got {w0.shape}")
        if not self.beta0 > 0:
            raise InvalidPriorError(f"beta0 must be positive, got {self.beta0}")
        if not self.alpha0 > 0:
            raise InvalidPriorError(f"alpha0 must be positive, got {self.alpha0}")
        if not self.nu0 > d - 1:
            raise InvalidPriorError(f"nu0 must exceed D-1 = {d - 1}, got {self.nu0}")
        w0 = symmetrize(w0)
        try:
            np.linalg.cholesky(w0)
        except np.linalg.LinAlgError:
            raise InvalidPriorError("W0 must be symmetric positive definite") from None
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "W0", w0)
        # Cached once so every consumer sees the same bitwise-symmetric inverse.
        object.__setattr__(self, "w0_inv", symmetrize(np.linalg.inv(w0)))

    @property
    def dim(self) -> int:
        return self.m0.shape[0]


def init_prior(
    dim: int,
    m0: np.ndarray | None = None,
    beta0: float = 1.0,
    nu0: float | None = None,
    W0: np.ndarray | None = None,
    alpha0: float = 1.0,
) -> PriorHyperparams:
    """Default prior: m0 = 0, beta0 = 1, nu0 = D + 1, W0 = I, alpha0 = 1."""
    if dim < 1:
        raise InvalidPriorError(f"dimension must be >= 1, got {dim}")
    return PriorHyperparams(
        m0=np.zeros(dim) if m0 is None else np.asarray(m0, dtype=float),
        beta0=beta0,
        nu0=float(dim + 1) if nu0 is None else nu0,
        W0=np.eye(dim) if W0 is None else np.asarray(W0, dtype=float),
        alpha0=alpha0,
    )


def compute_weights(n_cal: int, n_sources: Sequence[int], r: float | None = None) -> np.ndarray:
    """Per-source weights w_s = r * N_cal / N_s.

    The default (r = None, equivalent to r = 1) matches the transferred data
    volume to the calibration volume. For any r the weights satisfy
    sum_s w_s N_s / (S * N_cal) = r exactly.
    """
    if n_cal < 1:
        raise ValueError(f"calibration count must be >= 1, got {n_cal}")
    n_sources = np.asarray(n_sources, dtype=float)
    if np.any(n_sources < 1):
        raise ValueError("every source count must be >= 1")
    if r is None:
        r = 1.0
    if r < 0:
        raise ValueError(f"transfer ratio r must be nonnegative, got {r}")
    return r * float(n_cal) / n_sources


@dataclass(frozen=True)
class TransferConfig:
    """What to transfer and how strongly.

    mode selects which hyperparameters cross from source to target; r = None
    uses the ratio-matched default (r = 1). weights, when present, are the
    realized per-source w_s for the current split.
    """

    mode: str = "variance"
    r: float | None = None
    weights: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in TRANSFER_MODES:
            raise ValueError(f"mode must be one of {TRANSFER_MODES}, got {self.mode!r}")
        if self.r is not None and self.r < 0:
            raise ValueError(f"transfer ratio r must be nonnegative, got {self.r}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0):
                raise ValueError("per-source weights must be nonnegative")
            object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class SourcePosterior:
    """Pre-training posterior: per-subject mean blocks, pooled precision blocks."""

    beta: np.ndarray  # (S, C)
    m: np.ndarray  # (S, C, D)
    nu_src: np.ndarray  # (C,)
    winv_src: np.ndarray  # (C, D, D), inverse scale (W^src_c)^-1
    alpha: np.ndarray  # (S, C)
    subject_ids: tuple[str, ...]

    @property
    def n_subjects(self) -> int:
        return self.beta.shape[0]

    @property
    def n_classes(self) -> int:
        return self.beta.shape[1]

    @property
    def dim(self) -> int:
        return self.m.shape[2]

    def to_dict(self) -> dict:
        return {
            "kind": "source",
            "dim": self.dim,
            "n_classes": self.n_classes,
            "subject_ids": list(self.subject_ids),
            "beta": self.beta.tolist(),
            "m": self.m.tolist(),
            "nu_src": self.nu_src.tolist(),
            "winv_src": self.winv_src.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SourcePosterior":
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            m=np.asarray(d["m"], dtype=float),
            nu_src=np.asarray(d["nu_src"], dtype=float),
            winv_src=np.asarray(d["winv_src"], dtype=float),
            alpha=np.asarray(d["alpha"], dtype=float),
            subject_ids=tuple(d["subject_ids"]),
        )


@dataclass(frozen=True)
class TargetPosterior:
    """Calibration-updated posterior backing the predictive model."""

    beta: np.ndarray  # (C,)
    m: np.ndarray  # (C, D)
    nu: np.ndarray  # (C,)
    winv: np.ndarray  # (C, D, D)
    alpha: np.ndarray  # (C,)
    transfer_mode: str

    def __post_init__(self):
        for name in ("beta", "m", "nu", "winv", "alpha"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        d = self.m.shape[1]
        if np.any(self.nu <= d - 1):
            raise InvalidPosteriorError(f"every nu_c must exceed D-1 = {d - 1}")
        if not np.sum(self.alpha) > 0:
            raise InvalidPosteriorError("Dirichlet counts must sum to a positive value")

    @property
    def n_classes(self) -> int:
        return self.beta.shape[0]

    @property
    def dim(self) -> int:
        return self.m.shape[1]

    def to_dict(self) -> dict:
        return {
            "kind": "target",
            "dim": self.dim,
            "n_classes": self.n_classes,
            "transfer_mode": self.transfer_mode,
            "beta": self.beta.tolist(),
            "m": self.m.tolist(),
            "nu": self.nu.tolist(),
            "winv": self.winv.tolist(),
            "alpha": self.alpha.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TargetPosterior":
        return cls(
            beta=np.asarray(d["beta"], dtype=float),
            m=np.asarray(d["m"], dtype=float),
            nu=np.asarray(d["nu"], dtype=float),
            winv=np.asarray(d["winv"], dtype=float),
            alpha=np.asarray(d["alpha"], dtype=float),
            transfer_mode=d["transfer_mode"],
        )


def save_posterior(post: SourcePosterior | TargetPosterior, path: str | Path) -> None:
    Path(path).write_text(json.dumps(post.to_dict(), indent=1))


def load_posterior(path: str | Path) -> SourcePosterior | TargetPosterior:
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "source":
        return SourcePosterior.from_dict(d)
    if d.get("kind") == "target":
        return TargetPosterior.from_dict(d)
    raise ValueError(f"unrecognized posterior kind {d.get('kind')!r} in {path}")


def _class_sums(seq: FeatureSequence, n_classes: int):
    """Per-class count, sum x, and sum x x^T over one feature sequence."""
    d = seq.dim
    counts = np.zeros(n_classes)
    sx = np.zeros((n_classes, d))
    sxx = np.zeros((n_classes, d, d))
    if np.any(seq.labels > n_classes):
        bad = int(seq.labels.max())
        raise ValueError(
            f"trial {seq.subject_id}/{seq.trial_id}: label {bad} exceeds class count {n_classes}"
        )
    for c in range(n_classes):
        x = seq.features[seq.labels == c + 1]
        counts[c] = x.shape[0]
        if x.shape[0]:
            sx[c] = x.sum(axis=0)
            sxx[c] = x.T @ x
    return counts, sx, sxx


def pretrain_source(
    prior: PriorHyperparams,
    source_data: Sequence[FeatureSequence],
    weights: Sequence[float],
    n_classes: int,
) -> SourcePosterior:
    """Weighted conjugate update over all source subjects.

    Per subject the mean block gets beta_sc = w_s N_sc + beta0 and the
    weighted sample mean shrunk toward m0; the precision block is pooled:
    nu and W^-1 average each subject's weighted scatter contribution, so one
    shared (nu_src_c, W_src_c^-1) summarizes every source's class-c spread.
    Dirichlet counts are plain (unweighted) label counts.
    """
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(source_data),):
        raise ValueError(
            f"need one weight per source subject, got {weights.shape[0]} for {len(source_data)}"
        )
    if np.any(weights < 0):
        raise ValueError("per-source weights must be nonnegative")
    n_subjects = len(source_data)
    if n_subjects < 1:
        raise ValueError("at least one source subject is required")
    d = prior.dim

    beta = np.zeros((n_subjects, n_classes))
    m = np.zeros((n_subjects, n_classes, d))
    alpha = np.zeros((n_subjects, n_classes))
    nu_src = np.zeros(n_classes)
    winv_acc = np.zeros((n_classes, d, d))
    b0m0 = prior.beta0 * np.outer(prior.m0, prior.m0)

    for s, seq in enumerate(source_data):
        if seq.dim != d:
            raise ValueError(
                f"source {seq.subject_id}: feature dim {seq.dim} != prior dim {d}"
            )
        counts, sx, sxx = _class_sums(seq, n_classes)
        w = weights[s]
        for c in range(n_classes):
            wn = w * counts[c]
            beta[s, c] = wn + prior.beta0
            m[s, c] = (w * sx[c] + prior.beta0 * prior.m0) / beta[s, c]
            alpha[s, c] = counts[c] + prior.alpha0
            nu_src[c] += wn
            winv_acc[c] += w * sxx[c] + b0m0 - beta[s, c] * np.outer(m[s, c], m[s, c])

    nu_src = nu_src / n_subjects + prior.nu0
    winv_src = np.stack(
        [
            ensure_spd(winv_acc[c] / n_subjects + prior.w0_inv, f"source W^-1 for class {c + 1}")
            for c in range(n_classes)
        ]
    )
    return SourcePosterior(
        beta=beta,
        m=m,
        nu_src=nu_src,
        winv_src=winv_src,
        alpha=alpha,
        subject_ids=tuple(seq.subject_id for seq in source_data),
    )


def _pooled_mean_prior(prior: PriorHyperparams, src: SourcePosterior):
    """Pooled-mean hyperparameters mirroring the pooled precision structure.

    Averages the per-subject weighted sufficient statistics (recovered from
    beta_sc and m_sc) so the target can use a single source-informed mean
    prior per class: beta_pool = mean_s(w_s N_sc) + beta0 and m_pool the
    correspondingly shrunk pooled weighted mean.
    """
    wsum = np.mean(src.beta - prior.beta0, axis=0)  # (C,)
    wxsum = np.mean(src.beta[:, :, None] * src.m - prior.beta0 * prior.m0, axis=0)  # (C, D)
    beta_pool = wsum + prior.beta0
    m_pool = (wxsum + prior.beta0 * prior.m0) / beta_pool[:, None]
    return beta_pool, m_pool


def transfer_update(
    prior: PriorHyperparams,
    src: SourcePosterior | None,
    cal: FeatureSequence,
    cfg: TransferConfig,
    n_classes: int | None = None,
) -> TargetPosterior:
    """Conjugate update on calibration data with mode-selected seeds.

    variance: mean block seeded by the raw prior, precision block by the
    pooled source posterior (the transfer this package exists for).
    none: both blocks seeded by the raw prior.
    mean: mean block seeded by the pooled source mean, precision by the prior.
    both: source seeds on both blocks.

    The pooled-mean construction for mean/both is one reasonable symmetric
    analog of the precision pooling; it is applied consistently, i.e. the
    beta*m*m^T cross terms in the W^-1 update use whichever mean prior is in
    effect, keeping the update a genuine conjugate posterior.

    Classes absent from the calibration data keep their seed values.
    """
    if src is None:
        if cfg.mode != "none":
            raise ValueError(f"mode {cfg.mode!r} requires a source posterior")
        if n_classes is None:
            raise ValueError("n_classes is required when no source posterior is given")
        C = n_classes
    else:
        C = src.n_classes
        if n_classes is not None and n_classes != C:
            raise ValueError(f"n_classes {n_classes} != source posterior classes {C}")
    d = prior.dim
    if cal.n_samples and cal.dim != d:
        raise ValueError(f"calibration dim {cal.dim} != prior dim {d}")

    if cfg.mode in ("mean", "both"):
        beta_p, m_p = _pooled_mean_prior(prior, src)
    else:
        beta_p = np.full(C, prior.beta0)
        m_p = np.tile(prior.m0, (C, 1))
    if cfg.mode in ("variance", "both"):
        nu_seed = src.nu_src
        winv_seed = src.winv_src
    else:
        nu_seed = np.full(C, prior.nu0)
        winv_seed = np.stack([prior.w0_inv] * C)

    counts, sx, sxx = (
        _class_sums(cal, C)
        if cal.n_samples
        else (np.zeros(C), np.zeros((C, d)), np.zeros((C, d, d)))
    )

    beta = counts + beta_p
    m = (sx + beta_p[:, None] * m_p) / beta[:, None]
    nu = counts + nu_seed
    alpha = counts + prior.alpha0
    winv = np.stack(
        [
            ensure_spd(
                sxx[c]
                + beta_p[c] * np.outer(m_p[c], m_p[c])
                - beta[c] * np.outer(m[c], m[c])
                + winv_seed[c],
                f"target W^-1 for class {c + 1}",
            )
            for c in range(C)
        ]
    )
    return TargetPosterior(beta=beta, m=m, nu=nu, winv=winv, alpha=alpha, transfer_mode=cfg.mode)


@dataclass(frozen=True)
class PredictiveModel:
    """Per-class multivariate Student-t with Dirichlet-mean class weights.

    scale holds the precision-like matrix L_c; log_weights are normalized.
    Cholesky factors and normalization constants are cached at construction
    because prediction is the hot loop of every experiment.
    """

    location: np.ndarray  # (C, D)
    scale: np.ndarray  # (C, D, D), SPD
    dof: np.ndarray  # (C,)
    log_weights: np.ndarray  # (C,), logsumexp == 0
    _chol: np.ndarray = field(init=False, repr=False)
    _lognorm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        C, d = self.location.shape
        if np.any(self.dof <= 0):
            raise InvalidPosteriorError("Student-t degrees of freedom must be positive")
        try:
            chol = np.stack([np.linalg.cholesky(self.scale[c]) for c in range(C)])
        except np.linalg.LinAlgError:
            raise NumericalDegeneracyError("predictive scale matrix lost positive definiteness") from None
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
        lognorm = np.array(
            [
                math.lgamma((self.dof[c] + d) / 2.0)
                - math.lgamma(self.dof[c] / 2.0)
                + 0.5 * logdet[c]
                - (d / 2.0) * math.log(self.dof[c] * math.pi)
                for c in range(C)
            ]
        )
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_lognorm", lognorm)

    @property
    def n_classes(self) -> int:
        return self.location.shape[0]

    @property
    def dim(self) -> int:
        return self.location.shape[1]


def build_predictive(post: TargetPosterior) -> PredictiveModel:
    """Marginalize the Gaussian-Wishart posterior into the predictive model.

    Each class yields a Student-t with dof eta_c = nu_c + 1 - D, location
    m_c, and precision-scale L_c = (eta_c beta_c / (1 + beta_c)) W_c; class
    weights are the Dirichlet posterior mean alpha_c / sum(alpha).
    """
    d = post.dim
    eta = post.nu + 1.0 - d
    if np.any(eta <= 0):
        raise InvalidPosteriorError(
            f"predictive dof nu + 1 - D must be positive, got min {eta.min()}"
        )
    scale = np.stack(
        [
            symmetrize((eta[c] * post.beta[c] / (1.0 + post.beta[c])) * np.linalg.inv(post.winv[c]))
            for c in range(post.n_classes)
        ]
    )
    log_weights = np.log(post.alpha) - math.log(float(np.sum(post.alpha)))
    return PredictiveModel(location=post.m, scale=scale, dof=eta, log_weights=log_weights)


def _log_st_density(model: PredictiveModel, x: np.ndarray) -> np.ndarray:
    """Per-class Student-t log density at one point, safe for any finite x."""
    out = np.empty(model.n_classes)
    for c in range(model.n_classes):
        v = model._chol[c].T @ (x - model.location[c])
        vmax = np.max(np.abs(v)) if v.size else 0.0
        if vmax == 0.0:
            quad_term = 0.0
        elif vmax < 1e100:
            quad_term = math.log1p(float(v @ v) / model.dof[c])
        else:
            # ||v||^2 would overflow; work with log(delta^2 / eta) directly.
            s = v / vmax
            quad_term = 2.0 * math.log(vmax) + math.log(float(s @ s) / model.dof[c])
        out[c] = model._lognorm[c] - (model.dof[c] + model.dim) / 2.0 * quad_term
    return out


def class_log_densities(model: PredictiveModel, x: np.ndarray) -> np.ndarray:
    """Per-class Student-t log densities at x, without the class weights."""
    return _log_st_density(model, np.asarray(x, dtype=float))


def predict(model: PredictiveModel, x: np.ndarray) -> tuple[np.ndarray, int]:
    """Class probabilities and the 1-based argmax class for one feature vector.

    Everything stays in the log domain until the final normalization, so no
    finite input can overflow. Ties go to the smallest class index.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("query point must be finite")
    logp = model.log_weights + _log_st_density(model, x)
    probs = np.exp(logp - _logsumexp(logp))
    return probs, int(np.argmax(logp)) + 1


def predict_batch(model: PredictiveModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized predict over the rows of X: (N, C) probabilities, (N,) labels."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    logp = np.empty((n, model.n_classes))
    for c in range(model.n_classes):
        t = (X - model.location[c]) @ model._chol[c]
        delta2 = np.einsum("ij,ij->i", t, t)
        logp[:, c] = (
            model.log_weights[c]
            + model._lognorm[c]
            - (model.dof[c] + model.dim) / 2.0 * np.log1p(delta2 / model.dof[c])
        )
    shift = logp - logp.max(axis=1, keepdims=True)
    probs = np.exp(shift)
    probs /= probs.sum(axis=1, keepdims=True)
    return probs, np.argmax(logp, axis=1) + 1
