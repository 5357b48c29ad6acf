"""Command-line entry points.

Every subcommand takes one JSON config file (see README for the schema) plus
`--override key=value` patches, an optional `--seed`, and an output directory
from `--out-dir` or the config's `out_dir` field. Report subcommands write
CSV tables, per-sample prediction logs, a run_meta.json provenance record,
and a rendered PNG next to each table.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .datasets import generate_synthetic, save_dataset
from .errors import VartransferError
from .experiments import (
    ExperimentConfig,
    prepare_dataset,
    build_prior,
    run_ablation,
    run_comparison,
    run_r_sweep,
)
from .gcm import compute_weights, pretrain_source, save_posterior
from .datasets import split_roles, truncate_calibration
from .reports import (
    render_sweep_figure,
    render_table_figure,
    write_prediction_logs,
    write_report_csv,
    write_run_meta,
    write_sweep_csv,
)


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def _apply_override(config: dict, path: list[str], value: object) -> None:
    node = config
    for part in path[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise VartransferError(f"cannot descend into non-object config key {part!r}")
    node[path[-1]] = value


def _load_cli_config(args: argparse.Namespace) -> ExperimentConfig:
    raw = json.loads(Path(args.config).read_text())
    for path, value in args.override or []:
        _apply_override(raw, path, value)
    cfg = ExperimentConfig.from_dict(raw)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out_dir is not None:
        cfg = replace(cfg, out_dir=args.out_dir)
    if cfg.out_dir is None:
        raise VartransferError("an output directory is required (--out-dir or config out_dir)")
    return cfg


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="experiment config JSON")
    parser.add_argument(
        "--override",
        action="append",
        type=_parse_override,
        metavar="KEY=VALUE",
        help="patch a config entry; dotted keys descend (e.g. dataset.synthetic.seed=3)",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=None, help="output directory")


def _cmd_preprocess(args) -> int:
    cfg = _load_cli_config(args)
    if cfg.manifest is None:
        raise VartransferError("preprocess needs a dataset manifest in the config")
    ds = prepare_dataset(cfg)
    manifest = save_dataset(ds, cfg.out_dir)
    print(f"wrote preprocessed dataset: {manifest}")
    return 0


def _cmd_synth(args) -> int:
    cfg = _load_cli_config(args)
    if cfg.synthetic is None:
        raise VartransferError("synth needs a dataset.synthetic block in the config")
    synthetic = cfg.synthetic
    if synthetic.seed is None:
        synthetic = replace(synthetic, seed=cfg.seed)
    ds = generate_synthetic(synthetic)
    manifest = save_dataset(ds, cfg.out_dir)
    print(f"wrote synthetic dataset: {manifest}")
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_cli_config(args)
    ds = prepare_dataset(cfg)
    prior = build_prior(cfg, ds.dim)
    split = split_roles(ds, args.target, cfg.calibration_trial)
    cal = truncate_calibration(split.calibration, args.fraction)
    weights = compute_weights(cal.n_samples, [s.n_samples for s in split.source], args.r)
    post = pretrain_source(prior, split.source, weights, ds.n_classes)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"source_posterior_{args.target}.json"
    save_posterior(post, path)
    print(f"wrote source posterior: {path}")
    return 0


def _cmd_ablate(args) -> int:
    cfg = _load_cli_config(args)
    ds = prepare_dataset(cfg)
    table, logs = run_ablation(cfg, ds)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_report_csv(table, out_dir / "ablation.csv")
    write_prediction_logs(logs, out_dir)
    write_run_meta(cfg, out_dir, "ablate")
    render_table_figure(table, out_dir / "ablation.png", f"transfer ablation on {ds.name}")
    print(f"wrote {csv_path}")
    for row in table.rows:
        print(
            f"  {row.method:<10} cal={row.calibration_fraction:>4}: "
            f"{row.mean_accuracy:6.2f} +/- {row.std_accuracy:5.2f} %"
        )
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_cli_config(args)
    ds = prepare_dataset(cfg)
    table, logs = run_comparison(cfg, ds)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_report_csv(table, out_dir / "comparison.csv")
    write_prediction_logs(logs, out_dir)
    write_run_meta(cfg, out_dir, "compare")
    render_table_figure(table, out_dir / "comparison.png", f"method comparison on {ds.name}")
    print(f"wrote {csv_path}")
    for row in table.rows:
        print(
            f"  {row.method:<13} cal={row.calibration_fraction:>4}: "
            f"{row.mean_accuracy:6.2f} +/- {row.std_accuracy:5.2f} %"
        )
    return 0


def _cmd_sweep_r(args) -> int:
    cfg = _load_cli_config(args)
    ds = prepare_dataset(cfg)
    rows = run_r_sweep(cfg, ds)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_sweep_csv(rows, out_dir / "r_sweep.csv")
    write_run_meta(cfg, out_dir, "sweep-r")
    render_sweep_figure(rows, out_dir / "r_sweep.png", f"transfer-ratio sweep on {ds.name}")
    print(f"wrote {csv_path}")
    for row in rows:
        print(f"  r={row.r:>6g}: {row.mean_accuracy:6.2f} +/- {row.ci_halfwidth:5.2f} %")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="vartransfer",
        description="Bayesian inter-subject variance transfer for EMG classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="run the feature pipeline over a raw manifest")
    _add_common(p)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("synth", help="generate and save a synthetic dataset")
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="save the source posterior for one target subject")
    _add_common(p)
    p.add_argument("--target", required=True, help="target subject id (excluded from sources)")
    p.add_argument("--fraction", type=float, default=1.0, help="calibration fraction for weight sizing")
    p.add_argument("--r", type=float, default=None, help="transfer ratio (default: volume-matched)")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("ablate", help="transfer-mode ablation report")
    _add_common(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("compare", help="baseline comparison report")
    _add_common(p)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("sweep-r", help="accuracy across transfer ratios")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep_r)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VartransferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
