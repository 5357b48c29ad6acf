"""Dataset ingestion, leave-one-subject-out role splits, and synthetic data.

Features (not raw signals) are the canonical in-memory representation: raw
trial CSVs pass through the preprocessing pipeline exactly once at load time.
The synthetic generator is the reproducible stand-in for multi-subject EMG
corpora: subject-specific class means around shared prototypes, with the
per-class covariance identical for every subject.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DatasetError
from .preprocess import FeatureSequence, PreprocessConfig, RawTrial, extract_features


@dataclass(frozen=True)
class SubjectData:
    subject_id: str
    trials: tuple[FeatureSequence, ...]


@dataclass(frozen=True)
class Dataset:
    name: str
    subjects: tuple[SubjectData, ...]
    n_classes: int
    dim: int
    fs: float

    def __post_init__(self):
        ids = [s.subject_id for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise DatasetError("subject ids must be unique")
        for subject in self.subjects:
            for trial in subject.trials:
                if trial.dim != self.dim:
                    raise DatasetError(
                        f"subject {subject.subject_id} trial {trial.trial_id}: "
                        f"dim {trial.dim} != dataset dim {self.dim}"
                    )
                if trial.n_samples and trial.labels.max() > self.n_classes:
                    raise DatasetError(
                        f"subject {subject.subject_id} trial {trial.trial_id}: "
                        f"label {trial.labels.max()} exceeds C={self.n_classes}"
                    )

    @property
    def subject_ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    def subject(self, subject_id: str) -> SubjectData:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise DatasetError(f"unknown subject id {subject_id!r}")


@dataclass(frozen=True)
class RoleSplit:
    """Leave-one-subject-out roles: pooled per-source sequences, one calibration
    trial, remaining target trials as test."""

    source: tuple[FeatureSequence, ...]
    calibration: FeatureSequence
    test: tuple[FeatureSequence, ...]
    target_subject_id: str


def pool_trials(subject: SubjectData) -> FeatureSequence:
    """Concatenate all trials of a subject into one sequence (trial_id 0)."""
    return FeatureSequence(
        features=np.concatenate([t.features for t in subject.trials], axis=0),
        labels=np.concatenate([t.labels for t in subject.trials]),
        subject_id=subject.subject_id,
        trial_id=0,
    )


def split_roles(ds: Dataset, target_id: str, calibration_trial: int = 1) -> RoleSplit:
    """All non-target trials become source data; the target's chosen trial is
    the calibration set and the rest its test set."""
    target = ds.subject(target_id)
    if len(ds.subjects) < 2:
        raise DatasetError("leave-one-subject-out needs at least two subjects")
    if len(target.trials) < 2:
        raise DatasetError(
            f"target {target_id!r} has {len(target.trials)} trial(s); need a "
            "calibration trial plus at least one test trial"
        )
    cal = [t for t in target.trials if t.trial_id == calibration_trial]
    if not cal:
        raise DatasetError(f"target {target_id!r} has no trial {calibration_trial}")
    test = tuple(t for t in target.trials if t.trial_id != calibration_trial)
    source = tuple(pool_trials(s) for s in ds.subjects if s.subject_id != target_id)
    return RoleSplit(
        source=source, calibration=cal[0], test=test, target_subject_id=target_id
    )


def truncate_calibration(cal: FeatureSequence, fraction: float) -> FeatureSequence:
    """Temporal prefix: keep the first floor(fraction * N) rows."""
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"calibration fraction must be in (0, 1], got {fraction}")
    keep = int(fraction * cal.n_samples)
    if keep < 1:
        raise DatasetError(
            f"fraction {fraction} of {cal.n_samples} calibration samples is empty"
        )
    return FeatureSequence(
        features=cal.features[:keep],
        labels=cal.labels[:keep],
        subject_id=cal.subject_id,
        trial_id=cal.trial_id,
    )


# ---------------------------------------------------------------------------
# Manifest-driven loading and serialization
# ---------------------------------------------------------------------------


def _read_trial_csv(path: Path, dim: int, n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Parse one `t,ch1..chD,label` CSV; returns (samples, labels)."""
    if not path.is_file():
        raise DatasetError(f"trial file not found: {path}")
    with path.open() as fh:
        header = fh.readline().strip().split(",")
    expected = ["t"] + [f"ch{i + 1}" for i in range(dim)] + ["label"]
    if header != expected:
        raise DatasetError(
            f"{path}: expected columns {','.join(expected)}, got {','.join(header)}"
        )
    try:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"{path}: unparseable numeric data ({exc})") from None
    if table.shape[1] != dim + 2:
        raise DatasetError(f"{path}: expected {dim + 2} columns, got {table.shape[1]}")
    labels_f = table[:, -1]
    labels = labels_f.astype(int)
    bad = np.flatnonzero((labels_f != labels) | (labels < 1) | (labels > n_classes))
    if bad.size:
        row = int(bad[0])
        raise DatasetError(
            f"{path}: row {row + 2}: label {labels_f[row]!r} not an integer in 1..{n_classes}"
        )
    return table[:, 1:-1], labels


def load_dataset(
    manifest: str | Path,
    preprocess: PreprocessConfig | None = None,
    root: str | Path | None = None,
) -> Dataset:
    """Load a dataset described by a JSON manifest.

    Manifest schema: {"name", "C", "D", "fs", "subjects": [{"id", "trials":
    [paths]}], "kind": "raw" | "features"}. Paths are relative to `root`
    (default: the manifest's directory). Raw trials run through the
    preprocessing pipeline; feature trials are taken as-is.
    """
    manifest = Path(manifest)
    if not manifest.is_file():
        raise DatasetError(f"manifest not found: {manifest}")
    spec = json.loads(manifest.read_text())
    root = Path(root) if root is not None else manifest.parent
    for key in ("name", "C", "D", "fs", "subjects"):
        if key not in spec:
            raise DatasetError(f"{manifest}: manifest missing required key {key!r}")
    kind = spec.get("kind", "raw")
    if kind not in ("raw", "features"):
        raise DatasetError(f"{manifest}: unknown dataset kind {kind!r}")
    C, D, fs = int(spec["C"]), int(spec["D"]), float(spec["fs"])
    preprocess = preprocess or PreprocessConfig()

    subjects = []
    for entry in spec["subjects"]:
        trials = []
        for i, rel in enumerate(entry["trials"], start=1):
            samples, labels = _read_trial_csv(root / rel, D, C)
            if kind == "raw":
                trial = RawTrial(
                    samples=samples,
                    fs=fs,
                    labels=labels,
                    subject_id=str(entry["id"]),
                    trial_id=i,
                )
                trials.append(extract_features(trial, preprocess))
            else:
                trials.append(
                    FeatureSequence(
                        features=samples,
                        labels=labels,
                        subject_id=str(entry["id"]),
                        trial_id=i,
                    )
                )
        subjects.append(SubjectData(subject_id=str(entry["id"]), trials=tuple(trials)))
    return Dataset(name=spec["name"], subjects=tuple(subjects), n_classes=C, dim=D, fs=fs)


def save_dataset(ds: Dataset, out_dir: str | Path) -> Path:
    """Write feature CSVs plus a kind="features" manifest; returns the manifest path.

    Values are written with repr so a load round-trips bit-identically.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for subject in ds.subjects:
        rels = []
        for trial in subject.trials:
            rel = f"{subject.subject_id}_trial{trial.trial_id}.csv"
            header = ",".join(["t"] + [f"ch{i + 1}" for i in range(ds.dim)] + ["label"])
            lines = [header]
            for t in range(trial.n_samples):
                cells = (
                    [str(t)]
                    + [repr(float(v)) for v in trial.features[t]]
                    + [str(int(trial.labels[t]))]
                )
                lines.append(",".join(cells))
            (out_dir / rel).write_text("\n".join(lines) + "\n")
            rels.append(rel)
        entries.append({"id": subject.subject_id, "trials": rels})
    manifest = {
        "name": ds.name,
        "C": ds.n_classes,
        "D": ds.dim,
        "fs": ds.fs,
        "kind": "features",
        "subjects": entries,
    }
    path = out_dir / "dataset.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticConfig:
    """Multi-subject generator settings.

    Every subject draws one offset vector (dispersion subject_sigma) added to
    all of its class means, while the per-class covariance is the same for
    every subject: large between-subject mean shifts, common variance
    structure. covariance accepts a scalar, a D-vector of variances, one
    D x D matrix, a (C, D, D) stack, or a {"kind": "random_spd", ...} recipe.
    """

    n_subjects: int = 6
    n_classes: int = 4
    dim: int = 4
    samples_per_class: int = 5
    n_trials: int = 6
    subject_sigma: float = 3.0
    class_separation: float = 3.0
    covariance: object = None
    seed: int | None = None  # None defers to the experiment-level seed

    def __post_init__(self):
        for name in ("n_subjects", "n_classes", "dim", "samples_per_class", "n_trials"):
            if getattr(self, name) < 1:
                raise DatasetError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.subject_sigma < 0 or self.class_separation < 0:
            raise DatasetError("dispersion and separation must be nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticConfig":
        return cls(**d)


def random_spd_covariances(
    n_classes: int, dim: int, scale: float = 1.0, condition: float = 10.0, seed: int = 0
) -> np.ndarray:
    """Deterministic stack of rotated anisotropic SPD matrices.

    Eigenvalues are log-spaced over [scale/sqrt(condition), scale*sqrt(condition)]
    and each class gets its own random rotation.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(7,)))
    eigs = scale * np.logspace(-0.5, 0.5, dim, base=condition)
    covs = np.empty((n_classes, dim, dim))
    for c in range(n_classes):
        q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        covs[c] = (q * eigs) @ q.T
    return covs


def resolve_covariances(spec: object, n_classes: int, dim: int) -> np.ndarray:
    """Normalize any accepted covariance spec to a Cholesky-checked (C, D, D) stack."""
    if spec is None:
        covs = random_spd_covariances(n_classes, dim)
    elif isinstance(spec, dict):
        if spec.get("kind") != "random_spd":
            raise DatasetError(f"unknown covariance recipe {spec.get('kind')!r}")
        covs = random_spd_covariances(
            n_classes,
            dim,
            scale=float(spec.get("scale", 1.0)),
            condition=float(spec.get("condition", 10.0)),
            seed=int(spec.get("seed", 0)),
        )
    else:
        arr = np.asarray(spec, dtype=float)
        if arr.ndim == 0:
            covs = np.stack([float(arr) * np.eye(dim)] * n_classes)
        elif arr.shape == (dim,):
            covs = np.stack([np.diag(arr)] * n_classes)
        elif arr.shape == (dim, dim):
            covs = np.stack([arr] * n_classes)
        elif arr.shape == (n_classes, dim, dim):
            covs = arr
        else:
            raise DatasetError(
                f"covariance spec shape {arr.shape} fits none of: scalar, ({dim},), "
                f"({dim},{dim}), ({n_classes},{dim},{dim})"
            )
    for c in range(n_classes):
        try:
            np.linalg.cholesky((covs[c] + covs[c].T) / 2.0)
        except np.linalg.LinAlgError:
            raise DatasetError(f"covariance for class {c + 1} is not positive definite") from None
    return covs


def class_prototypes(n_classes: int, dim: int, separation: float) -> np.ndarray:
    """Deterministic class centers: +/- separation along cycling basis axes."""
    protos = np.zeros((n_classes, dim))
    for c in range(n_classes):
        sign = 1.0 if (c // dim) % 2 == 0 else -1.0
        protos[c, c % dim] = sign * separation
    return protos


def generate_synthetic(cfg: SyntheticConfig) -> Dataset:
    """Draw the configured multi-subject dataset, deterministic given the seed.

    Each trial lays classes out in blocks (all class-1 rows, then class-2,
    ...), mimicking a motion-protocol recording; truncating a trial to a
    prefix therefore drops whole classes first. Per-subject random streams
    are spawned from the seed so generation order cannot change the data.
    """
    covs = resolve_covariances(cfg.covariance, cfg.n_classes, cfg.dim)
    chols = np.stack([np.linalg.cholesky((c + c.T) / 2.0) for c in covs])
    protos = class_prototypes(cfg.n_classes, cfg.dim, cfg.class_separation)

    base = np.random.SeedSequence(cfg.seed if cfg.seed is not None else 0)
    children = base.spawn(cfg.n_subjects)
    subjects = []
    n_block = cfg.samples_per_class
    labels = np.repeat(np.arange(1, cfg.n_classes + 1), n_block)
    for s in range(cfg.n_subjects):
        rng = np.random.default_rng(children[s])
        offset = cfg.subject_sigma * rng.standard_normal(cfg.dim)
        trials = []
        for t in range(1, cfg.n_trials + 1):
            rows = np.empty((cfg.n_classes * n_block, cfg.dim))
            for c in range(cfg.n_classes):
                z = rng.standard_normal((n_block, cfg.dim))
                rows[c * n_block : (c + 1) * n_block] = protos[c] + offset + z @ chols[c].T
            trials.append(
                FeatureSequence(
                    features=rows, labels=labels, subject_id=f"s{s + 1:02d}", trial_id=t
                )
            )
        subjects.append(SubjectData(subject_id=f"s{s + 1:02d}", trials=tuple(trials)))
    return Dataset(
        name=f"synthetic-{cfg.seed if cfg.seed is not None else 0}",
        subjects=tuple(subjects),
        n_classes=cfg.n_classes,
        dim=cfg.dim,
        fs=1.0,
    )
