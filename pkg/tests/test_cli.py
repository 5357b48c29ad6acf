"""End-to-end CLI coverage over a small synthetic config."""

import json

import numpy as np
import pytest

from vartransfer.cli import main
from vartransfer.datasets import load_dataset
from vartransfer.gcm import load_posterior


@pytest.fixture
def config_path(tmp_path):
    cfg = {
        "dataset": {
            "synthetic": {
                "n_subjects": 4,
                "n_classes": 3,
                "dim": 2,
                "samples_per_class": 6,
                "n_trials": 3,
                "subject_sigma": 4.0,
                "class_separation": 3.0,
                "covariance": 1.0,
            }
        },
        "calibration_fractions": [0.5, 1.0],
        "r_values": [0, 1, 10],
        "seed": 5,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_synth_writes_loadable_dataset(config_path, tmp_path):
    out = tmp_path / "synth"
    assert main(["synth", "--config", str(config_path), "--out-dir", str(out)]) == 0
    ds = load_dataset(out / "dataset.json")
    assert len(ds.subjects) == 4
    assert ds.n_classes == 3


def test_ablate_outputs_and_determinism(config_path, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["ablate", "--config", str(config_path), "--out-dir", str(out_a)]) == 0
    assert main(["ablate", "--config", str(config_path), "--out-dir", str(out_b)]) == 0
    assert (out_a / "ablation.csv").is_file()
    assert (out_a / "ablation.png").is_file()
    assert (out_a / "run_meta.json").is_file()
    assert (out_a / "predictions" / "s01" / "none_cal100.csv").is_file()
    assert (out_a / "ablation.csv").read_bytes() == (out_b / "ablation.csv").read_bytes()
    meta = json.loads((out_a / "run_meta.json").read_text())
    assert meta["command"] == "ablate"
    assert "config_sha256" in meta


def test_compare_outputs(config_path, tmp_path):
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(config_path), "--out-dir", str(out)]) == 0
    lines = (out / "comparison.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3 * 2  # header + methods x fractions
    assert (out / "comparison.png").is_file()


def test_report_accuracies_recomputable_from_persisted_logs(config_path, tmp_path):
    from vartransfer.reports import unpack_per_subject

    out = tmp_path / "logs"
    assert main(["ablate", "--config", str(config_path), "--out-dir", str(out)]) == 0
    rows = (out / "ablation.csv").read_text().strip().splitlines()[1:]
    for row in rows:
        _, mode, fraction, _, _, per_subject_cell, _ = row.split(",")
        pct = int(round(float(fraction) * 100))
        for subject, reported in unpack_per_subject(per_subject_cell).items():
            log = out / "predictions" / subject / f"{mode}_cal{pct}.csv"
            pairs = [line.split(",")[2:4] for line in log.read_text().strip().splitlines()[1:]]
            correct = sum(1 for y, p in pairs if y == p)
            assert reported == 100.0 * correct / len(pairs)


def test_sweep_outputs(config_path, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep-r", "--config", str(config_path), "--out-dir", str(out)]) == 0
    lines = (out / "r_sweep.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + 3
    assert lines[0].startswith("r,mean_accuracy_pct")
    assert (out / "r_sweep.png").is_file()


def test_pretrain_writes_posterior(config_path, tmp_path):
    out = tmp_path / "pre"
    assert main(
        ["pretrain", "--config", str(config_path), "--target", "s02", "--out-dir", str(out)]
    ) == 0
    post = load_posterior(out / "source_posterior_s02.json")
    assert post.n_subjects == 3  # target excluded
    assert post.n_classes == 3


def test_preprocess_requires_manifest(config_path, tmp_path):
    code = main(
        ["preprocess", "--config", str(config_path), "--out-dir", str(tmp_path / "p")]
    )
    assert code == 2


def test_preprocess_roundtrip(tmp_path):
    # Build a raw manifest via the synth CSV format: feature-kind datasets load
    # directly, raw datasets go through the filter; use a raw manifest here.
    rng = np.random.default_rng(0)
    rows = 40
    labels = np.resize([1, 2], rows)
    subjects = []
    for s in range(2):
        rels = []
        for t in range(2):
            rel = f"s{s}_{t}.csv"
            lines = ["t,ch1,label"]
            for i in range(rows):
                lines.append(f"{i / 100.0},{float(rng.normal()):.6f},{labels[i]}")
            (tmp_path / rel).write_text("\n".join(lines) + "\n")
            rels.append(rel)
        subjects.append({"id": f"s{s + 1}", "trials": rels})
    manifest = {"name": "raw-toy", "C": 2, "D": 1, "fs": 100.0, "subjects": subjects}
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    cfg = {
        "dataset": {"manifest": str(tmp_path / "manifest.json")},
        "preprocess": {"cutoff_hz": 2.0, "decimation": 2},
        "seed": 0,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    out = tmp_path / "features"
    assert main(["preprocess", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    ds = load_dataset(out / "dataset.json")
    assert ds.subjects[0].trials[0].n_samples == rows // 2


def test_override_flag(config_path, tmp_path):
    out = tmp_path / "o"
    assert main(
        [
            "ablate",
            "--config", str(config_path),
            "--out-dir", str(out),
            "--override", "dataset.synthetic.seed=9",
            "--override", "calibration_fractions=[1.0]",
        ]
    ) == 0
    meta = json.loads((out / "run_meta.json").read_text())
    assert meta["config"]["dataset"]["synthetic"]["seed"] == 9
    assert meta["config"]["calibration_fractions"] == [1.0]


def test_seed_flag_changes_synthetic_data(config_path, tmp_path):
    out_a, out_b = tmp_path / "sa", tmp_path / "sb"
    main(["ablate", "--config", str(config_path), "--out-dir", str(out_a), "--seed", "5"])
    main(["ablate", "--config", str(config_path), "--out-dir", str(out_b), "--seed", "6"])
    assert (out_a / "ablation.csv").read_bytes() != (out_b / "ablation.csv").read_bytes()


def test_missing_out_dir_is_an_error(config_path):
    assert main(["ablate", "--config", str(config_path)]) == 2
