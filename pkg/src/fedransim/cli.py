"""Command-line surface: extract, synth, partition, train, report.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data, experiment, metrics, pe

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4


def cmd_extract(args) -> int:
    """Directory tree of executables -> dataset file + reject manifest.

    The family tag of each row is the file's parent directory name relative
    to the input root ("unknown" for files at the root). Unparseable files
    land in the reject manifest with their error, never silently dropped.
    """
    root = Path(args.input_dir)
    if not root.is_dir():
        print(f"error: {root} is not a readable directory", file=sys.stderr)
        return EXIT_DATA
    rows_feats, rows_fams, rejects = [], [], []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        try:
            blob = path.read_bytes()
        except OSError as e:
            rejects.append((path, f"io error: {e}"))
            continue
        try:
            summary = pe.parse_pe(blob)
        except pe.PeError as e:
            rejects.append((path, str(e)))
            continue
        rows_feats.append(pe.to_feature_vector(summary))
        rel = path.relative_to(root)
        rows_fams.append(rel.parts[0] if len(rel.parts) > 1 else "unknown")
    ds = data.Dataset(
        np.array(rows_feats).reshape(-1, data.N_FEATURES),
        np.array(rows_fams, dtype=object),
    )
    try:
        data.save_dataset(ds, args.output)
        reject_path = args.rejects or (str(args.output) + ".rejects")
        with open(reject_path, "w") as f:
            f.write("path,error\n")
            for path, err in rejects:
                f.write(f"{path},{err}\n")
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {len(ds)} rows to {args.output}, {len(rejects)} reject(s) to {reject_path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    specs = data.default_synthetic_spec(
        count_per_family=args.count_per_family,
        benign_count=args.benign_count,
        separation=args.separation,
    )
    ds = data.generate_synthetic(specs, args.seed)
    data.save_dataset(ds, args.output)
    print(f"wrote {len(ds)} rows to {args.output}")
    return EXIT_OK


def cmd_partition(args) -> int:
    ds = data.load_dataset(args.dataset)
    train, test = data.split_train_test(ds, args.seed)
    if args.scenario == "balanced":
        plan = data.partition_balanced(train, K=3, seed=args.seed)
    else:
        plan = data.partition_canonical_imbalanced(train, seed=args.seed)
    plan.test_counts = test.family_counts()
    data.save_plan(plan, train, args.output)

    gammas = data.client_gamma_diagnostics(plan, train)
    print("client  ransomware-only  with-benign  binary")
    for i, g in enumerate(gammas, start=1):
        print(
            f"{i:<7} {g['ransomware']:<16.4g} {g['with_benign']:<12.4g} {g['binary']:.4g}"
        )
    print(f"global (ransomware-only): {data.global_imbalance_ratio(plan):.4g}")
    print(f"global (with benign):     {data.global_imbalance_ratio(plan, include_benign=True):.4g}")
    print(f"plan written to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    if args.config:
        cfg = experiment.load_config(args.config)
    else:
        cfg = experiment.ExperimentConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        cfg.trials = args.trials
    if args.output is not None:
        cfg.output_dir = args.output
    cfg.validate()
    out = experiment.run_experiment(cfg, jobs=args.jobs)
    print(metrics.render_table(out["report"]))
    print(f"reports written to {cfg.output_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = metrics.report_from_json(Path(args.report).read_text())
    print(metrics.render_table(report), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedransim",
        description="Federated-learning simulator for imbalance-aware ransomware classification",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="extract PE features from a directory tree")
    p.add_argument("input_dir")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--rejects", default=None, help="reject manifest path")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate the default synthetic dataset")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count-per-family", type=int, default=140)
    p.add_argument("--benign-count", type=int, default=2000)
    p.add_argument("--separation", type=float, default=4.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("partition", help="split + partition a dataset, print imbalance ratios")
    p.add_argument("dataset")
    p.add_argument("--scenario", choices=["balanced", "imbalanced"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run a federated training experiment")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="re-render a machine report as a table")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except experiment.ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (data.DataError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
