"""Command line entry point for experiments and synthetic data generation.

    fedtop run --config exp.cfg --out metrics.csv
    fedtop compare --config exp.cfg --algorithms fedtop1,fedadmm,fedadmm_vc --out results/
    fedtop gen-synth --config exp.cfg --out synth.npz
"""
from __future__ import annotations

import argparse
import io
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as dt
from . import fedsim
from .config import ALGORITHM_LABELS, ALGORITHMS, ConfigError, ExperimentConfig, load_config, parse_config
from .numkit import RngStream
from .objectives import LogisticShard

TARGETS = (0.97, 0.98)
BASELINE = "fedadmm"


# -- dataset assembly ---------------------------------------------------------

def load_dataset(cfg: ExperimentConfig, data_dir=None) -> tuple[dt.RawDataset, dt.RawDataset, np.ndarray, np.ndarray]:
    """Return ``(train, test, t_train, t_test)`` with scaling already applied."""
    if cfg.dataset == "synthetic":
        full, _ = dt.synth_sparse_logistic(cfg.synth_n, cfg.synth_d, cfg.synth_density,
                                           RngStream(cfg.seed, "synthetic-data"), cfg.synth_logit_scale)
        train, test = dt.train_test_split(full, cfg.holdout, RngStream(cfg.seed, "holdout"))
        t_train, t_test = train.labels.astype(float), test.labels.astype(float)
    else:
        train, test = dt.load_mnist(data_dir or cfg.data_dir)
        t_train = dt.binarize(train.labels, cfg.positive_digit)
        t_test = dt.binarize(test.labels, cfg.positive_digit)
    offsets = dt.scaling_offsets(train.A, cfg.scaling)
    train = dt.RawDataset(dt.scale_features(train.A, cfg.scaling, offsets), train.labels)
    if test.n_examples:
        test = dt.RawDataset(dt.scale_features(test.A, cfg.scaling, offsets), test.labels)
    return train, test, t_train, t_test


def server_shard_size(cfg: ExperimentConfig, d: int) -> int:
    if cfg.server_shard_fraction is None:
        return d // (cfg.M + 1)  # one client-sized chunk
    return int(round(cfg.server_shard_fraction * d))


def build_federation(cfg: ExperimentConfig, data_dir=None) -> fedsim.Federation:
    train, test, t_train, t_test = load_dataset(cfg, data_dir)
    d = train.n_examples
    part = dt.make_partition(d, cfg.M, cfg.partition, train.labels, RngStream(cfg.seed, "partition"),
                             server_size=server_shard_size(cfg, d))

    def shard(A, t):
        return LogisticShard(A, t, kappa=cfg.kappa)

    clients = [shard(train.A[:, idx], t_train[idx]) for idx in part.client_indices]
    srv = part.server_indices
    server = shard(train.A[:, srv], t_train[srv]) if srv else None
    test_shard = shard(test.A, t_test) if test.n_examples else None
    return fedsim.Federation(clients, server, test_shard)


# -- CSV ----------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % x


def write_csv(rows, fh):
    fh.write(",".join(fedsim.COLUMNS) + "\n")
    for r in rows:
        fh.write(",".join(_fmt(getattr(r, c)) for c in fedsim.COLUMNS) + "\n")


def read_csv(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            vals = line.strip().split(",")
            rec = dict(zip(header, vals))
            rows.append(fedsim.MetricRow(
                round=int(rec["round"]), iteration=int(rec["iteration"]),
                **{k: float(rec[k]) for k in fedsim.COLUMNS[2:]},
            ))
    return rows


# -- operations ---------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out=None, workers: int = 1, data_dir=None,
                   timing: bool = False, fed: Optional[fedsim.Federation] = None) -> int:
    """Run one configuration and write its CSV to ``out`` (a path, file, or stdout)."""
    try:
        if fed is None:
            fed = build_federation(cfg, data_dir)
    except (OSError, dt.IdxFormatError, ValueError) as exc:
        print(f"error: cannot load dataset: {exc}", file=sys.stderr)
        return 2
    result = fedsim.run(cfg, fed, workers=workers, timing=timing)
    if out is None or out == "-":
        write_csv(result.rows, sys.stdout)
    elif isinstance(out, io.IOBase):
        write_csv(result.rows, out)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            write_csv(result.rows, fh)
    return 0


def rounds_to_target(rows, target: float) -> Optional[int]:
    for r in rows:
        if r.test_accuracy >= target:
            return r.round
    return None


def savings(base: Optional[int], other: Optional[int]) -> Optional[float]:
    """``(base - other) / base``; None unless both reached the target."""
    if base is None or other is None:
        return None
    if base == 0:
        return 0.0
    return (base - other) / base


def summarize(results: dict, targets=TARGETS, baseline: str = BASELINE) -> list:
    """One dict per algorithm with rounds-to-target and savings vs the baseline."""
    base_rows = results.get(baseline)
    out = []
    for algo, rows in results.items():
        rec = {"algorithm": algo}
        for tgt in targets:
            r = rounds_to_target(rows, tgt)
            rec[f"rounds@{tgt:g}"] = r
            ref = rounds_to_target(base_rows, tgt) if base_rows is not None else None
            rec[f"savings@{tgt:g}"] = savings(ref, r)
        out.append(rec)
    return out


def format_summary(summary: list) -> str:
    if not summary:
        return ""
    keys = list(summary[0])
    lines = [",".join(keys)]
    for rec in summary:
        cells = []
        for k in keys:
            v = rec[k]
            if v is None:
                cells.append("n/a")
            elif isinstance(v, float):
                cells.append(f"{100 * v:.1f}%")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def compare_suite(configs: Sequence[ExperimentConfig], out_dir, workers: int = 1, data_dir=None,
                  timing: bool = False, fed: Optional[fedsim.Federation] = None) -> list:
    """Run each config, write ``<algorithm>.csv`` plus ``summary.csv`` into ``out_dir``."""
    if not configs:
        raise ValueError("nothing to compare")
    ref = configs[0]
    for c in configs[1:]:
        if (c.dataset, c.seed, c.M, c.partition, c.scaling) != (ref.dataset, ref.seed, ref.M, ref.partition, ref.scaling):
            raise ValueError("compared configs must share dataset, seed, M, partition and scaling")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if fed is None:
        fed = build_federation(ref, data_dir)
    results = {}
    for cfg in configs:
        rows = fedsim.run(cfg, fed, workers=workers, timing=timing).rows
        with open(out_dir / f"{cfg.algorithm}.csv", "w", encoding="utf-8", newline="") as fh:
            write_csv(rows, fh)
        results[cfg.algorithm] = rows
    baseline = BASELINE if BASELINE in results else configs[0].algorithm
    summary = summarize(results, baseline=baseline)
    (out_dir / "summary.csv").write_text(format_summary(summary), encoding="utf-8")
    return summary


def gen_synth(cfg: ExperimentConfig, out) -> None:
    ds, true_w = dt.synth_sparse_logistic(cfg.synth_n, cfg.synth_d, cfg.synth_density,
                                          RngStream(cfg.seed, "synthetic-data"), cfg.synth_logit_scale)
    np.savez(out, A=ds.A, labels=ds.labels, true_w=true_w)


# -- argument parsing ---------------------------------------------------------

def _config_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig().validate()
    overrides = {}
    for item in args.set or []:
        key, _, raw = item.partition("=")
        overrides[key.strip()] = raw.strip()
    if overrides:
        base = cfg.to_text()
        extra = "".join(f"{k} = {v}\n" for k, v in overrides.items())
        cfg = parse_config(base + extra)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedtop", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key = value experiment file (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("--out", help="output path")
        sp.add_argument("--data-dir", default=os.environ.get(dt.DATA_DIR_ENV),
                        help=f"MNIST directory (default ${dt.DATA_DIR_ENV})")
        sp.add_argument("--workers", type=int, default=1, help="threads for client steps")
        sp.add_argument("--timing", action="store_true", help="record wall-clock ms (breaks byte reproducibility)")

    common(sub.add_parser("run", help="run one experiment and emit CSV metrics"))
    cmp_ = sub.add_parser("compare", help="run several algorithms on the same data")
    common(cmp_)
    cmp_.add_argument("--algorithms", default="fedtop1,fedtop2,fedadmm,fedadmm_vc",
                      help="comma-separated list from: " + ", ".join(ALGORITHMS))
    common(sub.add_parser("gen-synth", help="write the synthetic dataset to an .npz file"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2
    try:
        cfg = _config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.command == "run":
        return run_experiment(cfg, args.out, workers=args.workers, data_dir=args.data_dir, timing=args.timing)

    if args.command == "compare":
        names = [a.strip() for a in args.algorithms.split(",") if a.strip()]
        try:
            configs = [cfg.replace(algorithm=a) for a in names]
            summary = compare_suite(configs, args.out or "compare-out", workers=args.workers,
                                    data_dir=args.data_dir, timing=args.timing)
        except (ConfigError, OSError, dt.IdxFormatError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        for rec in summary:
            rec["algorithm"] = ALGORITHM_LABELS[rec["algorithm"]]
        sys.stdout.write(format_summary(summary))
        return 0

    if args.command == "gen-synth":
        if not args.out:
            print("error: gen-synth needs --out", file=sys.stderr)
            return 2
        gen_synth(cfg, args.out)
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
