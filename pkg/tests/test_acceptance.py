"""Acceptance suite: one test per release criterion, one printed verdict each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines. Every tolerance is pinned here; nothing is calibrated at run time.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import integrate
from scipy.signal import butter

from oracles import gw_marginal_quad_1d, incremental_gw_update, plain_gaussian_discriminant
from vartransfer.baselines import (
    GRID_VALUES,
    adaptive_blend,
    discriminant_predict_batch,
    fit_gaussian_stats,
    grid_search_cv,
)
from vartransfer.cli import main as cli_main
from vartransfer.datasets import (
    SyntheticConfig,
    generate_synthetic,
    random_spd_covariances,
    split_roles,
    truncate_calibration,
)
from vartransfer.experiments import (
    ExperimentConfig,
    prepare_dataset,
    run_ablation,
    run_r_sweep,
)
from vartransfer.gcm import (
    TransferConfig,
    build_predictive,
    class_log_densities,
    compute_weights,
    init_prior,
    predict_batch,
    pretrain_source,
    transfer_update,
)
from vartransfer.preprocess import FeatureSequence, design_butterworth2_lowpass


def _verdict(number: int, description: str) -> None:
    print(f"[PASS] criterion {number}: {description}")


def _seq(features, labels, subject="s", trial=1):
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    return FeatureSequence(
        features=features, labels=np.asarray(labels, dtype=int),
        subject_id=subject, trial_id=trial,
    )


# The synthetic family shared by the qualitative criteria: six subjects whose
# class means scatter widely around common prototypes while every subject
# shares the same anisotropic per-class covariance; 5 calibration samples per
# class.
ACCEPTANCE_COVS = random_spd_covariances(4, 4, scale=2.5, condition=10.0, seed=0)


def acceptance_family(seed: int) -> SyntheticConfig:
    return SyntheticConfig(
        n_subjects=6, n_classes=4, dim=4, samples_per_class=5, n_trials=6,
        subject_sigma=11.0, class_separation=4.0, covariance=ACCEPTANCE_COVS,
        seed=seed,
    )


def test_criterion_01_conjugacy_batch_vs_incremental():
    """Batch no-transfer posteriors equal point-by-point updates (1e-10 rel)."""
    start = time.monotonic()
    rng = np.random.default_rng(2024)
    for dim in (1, 2, 4):
        prior = init_prior(dim)
        for _ in range(20):
            n = int(rng.integers(5, 40))
            X = rng.normal(size=(n, dim)) * rng.uniform(0.5, 3.0) + rng.normal(size=dim)
            cal = _seq(X, np.ones(n, dtype=int), subject="t")
            post = transfer_update(prior, None, cal, TransferConfig(mode="none"), n_classes=1)
            m, beta, nu, winv = incremental_gw_update(
                prior.m0, prior.beta0, prior.nu0, prior.w0_inv, X
            )
            np.testing.assert_allclose(post.beta[0], beta, rtol=1e-10)
            np.testing.assert_allclose(post.m[0], m, rtol=1e-10)
            np.testing.assert_allclose(post.nu[0], nu, rtol=1e-10)
            np.testing.assert_allclose(post.winv[0], winv, rtol=1e-10, atol=1e-12)
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"conjugacy check took {elapsed:.1f}s"
    _verdict(1, f"batch == incremental for D in (1,2,4), 20 datasets each ({elapsed:.1f}s)")


def test_criterion_02_predictive_matches_quadrature():
    """Closed-form Student-t density vs 2-D integration over (mu, lambda)."""
    start = time.monotonic()
    rng = np.random.default_rng(77)
    worst_density = 0.0
    worst_mass = 0.0
    for _ in range(10):
        n = int(rng.integers(3, 25))
        loc = rng.normal() * 3.0
        scale = rng.uniform(0.3, 3.0)
        X = (loc + scale * rng.normal(size=n))[:, None]
        cal = _seq(X, np.ones(n, dtype=int), subject="t")
        post = transfer_update(init_prior(1), None, cal, TransferConfig(mode="none"), n_classes=1)
        model = build_predictive(post)
        for q in loc + 4.0 * scale * rng.standard_normal(10):
            closed = float(np.exp(class_log_densities(model, np.array([q]))[0]))
            numeric = gw_marginal_quad_1d(
                q, post.m[0, 0], post.beta[0], post.nu[0], post.winv[0, 0, 0]
            )
            worst_density = max(worst_density, abs(closed - numeric))
        mass, _ = integrate.quad(
            lambda x: float(np.exp(class_log_densities(model, np.array([x]))[0])),
            -np.inf,
            np.inf,
        )
        worst_mass = max(worst_mass, abs(mass - 1.0))
    elapsed = time.monotonic() - start
    assert worst_density < 1e-6, f"worst density gap {worst_density:.2e}"
    assert worst_mass < 1e-6, f"worst unit-mass gap {worst_mass:.2e}"
    assert elapsed < 60.0, f"quadrature check took {elapsed:.1f}s"
    _verdict(
        2,
        f"closed form vs quadrature: max gap {worst_density:.1e}, "
        f"max |mass-1| {worst_mass:.1e} ({elapsed:.1f}s)",
    )


def test_criterion_03_zero_transfer_identities():
    """w = 0 reproduces the prior exactly; the r = 0 sweep row equals the
    no-transfer ablation row subject by subject."""
    rng = np.random.default_rng(5)
    prior = init_prior(3)
    sources = [
        _seq(rng.normal(size=(30, 3)), rng.integers(1, 3, size=30), subject=f"s{i}")
        for i in range(4)
    ]
    post = pretrain_source(prior, sources, np.zeros(4), n_classes=2)
    assert np.all(post.beta == prior.beta0)
    assert np.all(post.m == 0.0)
    assert np.all(post.nu_src == prior.nu0)
    assert all(np.array_equal(post.winv_src[c], prior.w0_inv) for c in range(2))

    cfg = ExperimentConfig(
        synthetic=acceptance_family(0), seed=0, r_values=(0.0,),
        calibration_fractions=(1.0,),
    )
    ds = prepare_dataset(cfg)
    table, _ = run_ablation(cfg, ds)
    sweep = run_r_sweep(cfg, ds)
    assert sweep[0].per_subject == table.row("none", 1.0).per_subject
    _verdict(3, "zero weights == prior (exact); r=0 sweep row == no-transfer row (exact)")


def test_criterion_04_hand_worked_pipeline():
    """The 1-D chain: pretrain, both transfer seeds, and the predictive scale."""
    prior = init_prior(1)
    data = _seq([1.0, 3.0], [1, 1])
    src = pretrain_source(prior, [data], [1.0], n_classes=1)
    np.testing.assert_allclose(src.beta[0, 0], 3.0, rtol=1e-12)
    np.testing.assert_allclose(src.m[0, 0, 0], 4.0 / 3.0, rtol=1e-12)
    np.testing.assert_allclose(src.nu_src[0], 4.0, rtol=1e-12)
    np.testing.assert_allclose(src.winv_src[0, 0, 0], 17.0 / 3.0, rtol=1e-12)

    cal = _seq([1.0, 3.0], [1, 1], subject="t")
    plain = transfer_update(prior, None, cal, TransferConfig(mode="none"), n_classes=1)
    np.testing.assert_allclose(plain.nu[0], 4.0, rtol=1e-12)
    np.testing.assert_allclose(plain.winv[0, 0, 0], 17.0 / 3.0, rtol=1e-12)

    shared = transfer_update(prior, src, cal, TransferConfig(mode="variance"))
    np.testing.assert_allclose(shared.nu[0], 6.0, rtol=1e-12)
    np.testing.assert_allclose(shared.winv[0, 0, 0], 31.0 / 3.0, rtol=1e-12)

    model = build_predictive(plain)
    np.testing.assert_allclose(model.dof[0], 4.0, rtol=1e-12)
    np.testing.assert_allclose(model.scale[0, 0, 0], 9.0 / 17.0, rtol=1e-12)
    _verdict(4, "1-D chain (beta 3, m 4/3, nu 4->6, W^-1 17/3->31/3, L 9/17) at 1e-12")


def test_criterion_05_baseline_endpoints_and_grid(monkeypatch):
    """Blend endpoints reproduce from-scratch discriminants on every test
    prediction; the search enumerates exactly 11 x 11 candidates."""
    ds = generate_synthetic(acceptance_family(1))
    split = split_roles(ds, "s01")
    src_stats = fit_gaussian_stats(split.source, ds.n_classes)
    cal_stats = fit_gaussian_stats(split.calibration, ds.n_classes)
    X = np.concatenate([t.features for t in split.test], axis=0)

    def scratch_covs(covs):
        out = []
        for cov in covs:
            d = cov.shape[0]
            tr = np.trace(cov)
            bump = 1e-6 * tr / d if tr > 0 else 1e-6
            out.append((cov + cov.T) / 2.0 + bump * np.eye(d))
        return out

    for kind in ("lda", "qda"):
        cal_covs = (
            [cal_stats.pooled] * ds.n_classes if kind == "lda" else list(cal_stats.covariances)
        )
        model = adaptive_blend(src_stats, cal_stats, 1.0, 1.0, kind)
        with np.errstate(divide="ignore"):
            log_priors = np.log(cal_stats.counts / cal_stats.counts.sum())
        expected = plain_gaussian_discriminant(
            cal_stats.means, scratch_covs(cal_covs), log_priors, X
        )
        _, got = discriminant_predict_batch(model, X)
        np.testing.assert_array_equal(got, expected)

        src_covs = (
            [src_stats.pooled] * ds.n_classes if kind == "lda" else list(src_stats.covariances)
        )
        model0 = adaptive_blend(src_stats, cal_stats, 0.0, 0.0, kind, uniform_priors=True)
        expected0 = plain_gaussian_discriminant(
            src_stats.means,
            scratch_covs(src_covs),
            np.full(ds.n_classes, -math.log(ds.n_classes)),
            X,
        )
        _, got0 = discriminant_predict_batch(model0, X)
        np.testing.assert_array_equal(got0, expected0)

    evaluated = set()
    import vartransfer.baselines as bl

    original = bl.adaptive_blend

    def counting_blend(src, cal, tau, lam, kind, uniform_priors=False):
        evaluated.add((tau, lam))
        return original(src, cal, tau, lam, kind, uniform_priors)

    monkeypatch.setattr(bl, "adaptive_blend", counting_blend)
    grid_search_cv(split.calibration, src_stats, "lda", ds.n_classes)
    assert len(evaluated) == 121
    assert len(GRID_VALUES) ** 2 == 121
    _verdict(5, "endpoints reproduce from-scratch discriminants; grid = 121 points")


def test_criterion_06_filter_against_reference_design():
    coeffs = design_butterworth2_lowpass(2000.0, 1.0)
    b_ref, a_ref = butter(2, 1.0, btype="low", fs=2000.0)
    np.testing.assert_allclose([coeffs.b0, coeffs.b1, coeffs.b2], b_ref, rtol=1e-12)
    np.testing.assert_allclose([1.0, coeffs.a1, coeffs.a2], a_ref, rtol=1e-12)
    assert abs(coeffs.dc_gain() - 1.0) < 1e-9

    rng = np.random.default_rng(99)
    for _ in range(50):
        fs = rng.uniform(20.0, 10000.0)
        fc = rng.uniform(0.001, 0.499) * fs
        c = design_butterworth2_lowpass(fs, fc)
        assert abs(c.dc_gain() - 1.0) < 1e-9
        assert np.max(np.abs(c.poles())) < 1.0
    _verdict(6, "filter matches reference design at 1e-12; unity DC; 50 stable designs")


def test_criterion_07_ablation_ordering_on_synthetic():
    """Variance transfer beats both no transfer and mean transfer by >= 3
    points, averaged over 10 generator seeds."""
    start = time.monotonic()
    gap_none, gap_mean = [], []
    for seed in range(10):
        cfg = ExperimentConfig(
            synthetic=acceptance_family(seed), seed=seed,
            calibration_fractions=(1.0,),
            transfer_modes=("none", "mean", "variance"),
        )
        table, _ = run_ablation(cfg)
        var = table.row("variance", 1.0).mean_accuracy
        gap_none.append(var - table.row("none", 1.0).mean_accuracy)
        gap_mean.append(var - table.row("mean", 1.0).mean_accuracy)
    elapsed = time.monotonic() - start
    mean_gap_none = float(np.mean(gap_none))
    mean_gap_mean = float(np.mean(gap_mean))
    assert mean_gap_none >= 3.0, f"variance - none = {mean_gap_none:.2f} pp"
    assert mean_gap_mean >= 3.0, f"variance - mean = {mean_gap_mean:.2f} pp"
    assert elapsed < 120.0, f"ablation reproduction took {elapsed:.1f}s"
    _verdict(
        7,
        f"variance transfer leads no-transfer by {mean_gap_none:.1f} pp and "
        f"mean transfer by {mean_gap_mean:.1f} pp over 10 seeds ({elapsed:.1f}s)",
    )


def test_criterion_08_sweep_declines_at_large_r():
    """Volume-matched transfer (r = 1) beats r = 100 by >= 2 points."""
    gaps = []
    for seed in range(10):
        cfg = ExperimentConfig(
            synthetic=acceptance_family(seed), seed=seed, r_values=(1.0, 100.0),
        )
        rows = run_r_sweep(cfg)
        gaps.append(rows[0].mean_accuracy - rows[1].mean_accuracy)
    mean_gap = float(np.mean(gaps))
    assert mean_gap >= 2.0, f"r=1 minus r=100 = {mean_gap:.2f} pp"
    _verdict(8, f"accuracy at r=1 exceeds r=100 by {mean_gap:.1f} pp over 10 seeds")


def test_criterion_09_cli_determinism(tmp_path):
    cfg = {
        "dataset": {
            "synthetic": {
                "n_subjects": 4, "n_classes": 3, "dim": 3, "samples_per_class": 5,
                "n_trials": 3, "subject_sigma": 6.0, "class_separation": 3.0,
            }
        },
        "calibration_fractions": [0.25, 1.0],
        "seed": 11,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert cli_main(["ablate", "--config", str(cfg_path), "--out-dir", str(out_a)]) == 0
    assert cli_main(["ablate", "--config", str(cfg_path), "--out-dir", str(out_b)]) == 0
    csvs_a = sorted(p.relative_to(out_a) for p in out_a.rglob("*.csv"))
    csvs_b = sorted(p.relative_to(out_b) for p in out_b.rglob("*.csv"))
    assert csvs_a == csvs_b and csvs_a
    for rel in csvs_a:
        assert (out_a / rel).read_bytes() == (out_b / rel).read_bytes(), rel
    _verdict(9, f"two ablate runs byte-identical across {len(csvs_a)} CSV files")


def test_criterion_10_truncation_dropping_classes_is_survivable():
    """A 25% prefix of a block-ordered trial keeps only class 1; the Bayesian
    path seeds the missing classes and QDA survives via regularization."""
    ds = generate_synthetic(acceptance_family(2))
    split = split_roles(ds, "s01")
    cal = truncate_calibration(split.calibration, 0.25)
    present = set(np.unique(cal.labels))
    assert present == {1}, "the 25% prefix should keep only the first motion block"

    prior = init_prior(ds.dim)
    weights = compute_weights(cal.n_samples, [s.n_samples for s in split.source])
    src = pretrain_source(prior, split.source, weights, ds.n_classes)
    post = transfer_update(prior, src, cal, TransferConfig(mode="variance"))
    for c in range(1, ds.n_classes):  # classes 2..C fell back to their seeds
        assert post.beta[c] == prior.beta0
        np.testing.assert_array_equal(post.m[c], prior.m0)
        assert post.nu[c] == src.nu_src[c]
        np.testing.assert_array_equal(post.winv[c], src.winv_src[c])
    model = build_predictive(post)
    _, pred = predict_batch(model, split.test[0].features)
    assert pred.shape[0] == split.test[0].n_samples

    src_stats = fit_gaussian_stats(split.source, ds.n_classes)
    result = grid_search_cv(cal, src_stats, "qda", ds.n_classes)
    cal_stats = fit_gaussian_stats(cal, ds.n_classes)
    qda = adaptive_blend(src_stats, cal_stats, result.tau, result.lam, "qda")
    _, qda_pred = discriminant_predict_batch(qda, split.test[0].features)
    assert np.all(np.isfinite(qda_pred))
    _verdict(10, "class-dropping truncation: seeded posteriors and regularized QDA both complete")
