"""Command-line entry points.

Subcommands:

* ``prepare``  -- materialize a benchmark's train/val/test splits as files
* ``poison``   -- attack a dataset, write the poisoned copy + truth mask
* ``defend``   -- run the likelihood defence on a dataset file
* ``baseline`` -- run a comparison defence (knn / l2 / lof) on a file
* ``table``    -- reproduce a full results table across datasets
* ``sweep``    -- 2-D grids: decision surface and poison-loss landscape
* ``roc``      -- per-run ROC curves of the defence's suspicion scores

Every artifact embeds the resolved configuration, so re-running a command
with the same flags and seed reproduces it byte for byte.  Output and
data directories default to ``./out`` and ``./data`` and can be overridden
with POISONLAB_OUT / POISONLAB_DATA or ``--out`` / ``--data-dir``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import datasets as ds
from .attacks import AttackConfig, back_gradient_attack, flip_labels
from .baselines import KnnConfig, OutlierConfig, knn_sanitize, outlier_defence
from .defence import DefenceConfig, defend, label_likelihoods, scorer_train_config
from .evaluation import (
    auc,
    decision_surface,
    detection_metrics,
    evaluate_model,
    make_grid,
    poison_grid_sweep,
    roc_curve,
    write_grid,
    write_knee_plot,
    write_roc,
)
from .experiments import ExperimentConfig, config_from_ini, run_single, run_table
from .nn import TrainConfig, train


def _default_out() -> str:
    return os.environ.get("POISONLAB_OUT", "out")


def _default_data() -> str:
    return os.environ.get("POISONLAB_DATA", "data")


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _config_header(args: argparse.Namespace, keys: list[str]) -> str:
    resolved = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return json.dumps(resolved, sort_keys=True)


def _experiment_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if getattr(args, "config", None):
        cfg = config_from_ini(args.config, cfg)
    overrides = {}
    for attr in ("dataset", "nu", "runs", "seed", "jobs", "data_dir"):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[attr] = value
    cfg = replace(cfg, **overrides)
    return cfg.with_nu(cfg.nu)


def cmd_prepare(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = _config_header(args, ["dataset", "seed"])
    splits = ds.prepare_benchmark(args.dataset, args.data_dir, seed=args.seed)
    for split, name in zip(splits, ("train", "val", "test")):
        path = out / f"{args.dataset}_{name}.csv"
        ds.save_dataset(path, split, header=f"config: {header}")
        print(f"{name}: {split.n} x {split.d} ({split.n_classes} classes) -> {path}")
    return 0


def cmd_poison(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_data, val_data, test_data = ds.prepare_benchmark(
        args.dataset, args.data_dir, seed=args.seed
    )
    tc = TrainConfig(seed=args.seed)
    header = _config_header(args, ["dataset", "attack", "nu", "seed"])

    if args.attack == "flip":
        poisoned = flip_labels(train_data, args.nu, seed=args.seed)
    else:
        cfg = AttackConfig(nu=args.nu, seed=args.seed)
        poisoned = back_gradient_attack(train_data, val_data, cfg)

    stem = f"{args.dataset}_{args.attack}_nu{args.nu:g}_seed{args.seed}"
    ds.save_dataset(out / f"{stem}.csv", poisoned.data, header=f"config: {header}")
    ds.save_mask(out / f"{stem}.mask", np.flatnonzero(poisoned.poison_mask))
    _write_json(
        out / f"{stem}_provenance.json",
        {
            "config": json.loads(header),
            "records": [
                {
                    "source_index": rec.source_index,
                    "original_label": rec.original_label,
                    "poison_label": rec.poison_label,
                    "frozen": rec.frozen,
                    "trajectory": [[repr(float(v)) for v in x] for x in rec.trajectory],
                    "objective_values": [repr(float(v)) for v in rec.objective_values],
                }
                for rec in poisoned.provenance
            ],
        },
    )

    clean_params, _ = train(train_data, tc)
    victim_params, _ = train(poisoned.data, tc)
    closs, cacc = evaluate_model(clean_params, test_data)
    ploss, pacc = evaluate_model(victim_params, test_data)
    print(f"poisoned {poisoned.n_poisoned} of {poisoned.data.n} instances -> {out / stem}.csv")
    print(f"victim test loss {closs:.3f} -> {ploss:.3f}, accuracy {cacc:.3f} -> {pacc:.3f}")
    return 0


def cmd_defend(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = ds.load_delimited(args.data)
    mask = ds.load_mask(args.mask, data.n) if args.mask else None

    cfg = DefenceConfig(
        window=args.window, max_iterations=args.max_iterations,
        train=scorer_train_config().with_seed(args.seed),
    )
    report, cleaned = defend(data, cfg)
    header = _config_header(args, ["data", "seed", "window", "max_iterations"])

    stem = Path(args.data).stem
    ds.save_dataset(out / f"{stem}_cleaned.csv", cleaned, header=f"config: {header}")
    ds.save_mask(out / f"{stem}_removed.mask", report.removed_indices)
    first = report.iterations[0] if report.iterations else None
    if first is not None:
        is_poison = (
            mask[first.indices][first.order]
            if mask is not None
            else np.zeros(first.indices.shape[0], dtype=bool)
        )
        write_knee_plot(
            out / f"{stem}_knee.tsv", first.sorted_likelihoods, is_poison,
            first.cutoff_index,
        )
    _write_json(
        out / f"{stem}_defence.json",
        {
            "config": json.loads(header),
            "iterations": [
                {
                    "n": int(it.indices.shape[0]),
                    "window": it.window,
                    "cutoff_index": it.cutoff_index,
                    "nu_hat": it.nu_hat,
                    "removed": [int(i) for i in it.removed_indices],
                    "applied": it.applied,
                }
                for it in report.iterations
            ],
            "nu_hat_total": report.nu_hat_total,
            "kept": int(report.kept_indices.shape[0]),
        },
    )
    print(
        f"defence converged after {report.iterations_run} iteration(s), "
        f"nu_hat={report.nu_hat_total:.3f}, kept {cleaned.n} of {data.n}"
    )
    if mask is not None:
        m = detection_metrics(report.removed_indices, mask)
        print(f"FPR={m.fpr:.3f} FNR={m.fnr:.3f}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = ds.load_delimited(args.data)
    if args.method == "knn":
        flagged = knn_sanitize(data, KnnConfig(k=args.k or 10, t=args.t))
    else:
        if not args.trusted:
            print("error: --trusted is required for l2/lof", file=sys.stderr)
            return 1
        trusted = ds.load_delimited(args.trusted)
        cfg = OutlierConfig(args.method, k=args.k or 5, alpha=args.alpha)
        flagged = outlier_defence(data, trusted, cfg)

    stem = f"{Path(args.data).stem}_{args.method}"
    ds.save_mask(out / f"{stem}_flagged.mask", flagged)
    print(f"{args.method} flagged {flagged.shape[0]} of {data.n} -> {out / stem}_flagged.mask")
    if args.mask:
        truth = ds.load_mask(args.mask, data.n)
        m = detection_metrics(flagged, truth)
        print(f"FPR={m.fpr:.3f} FNR={m.fnr:.3f}")
    return 0


_TABLE_COLUMNS: dict[int, list[tuple[str, str]]] = {
    2: [
        ("loss_clean", "clean.loss"), ("loss_flip", "flip.loss"),
        ("loss_backgrad", "backgrad.loss"), ("acc_clean", "clean.acc"),
        ("acc_flip", "flip.acc"), ("acc_backgrad", "backgrad.acc"),
    ],
    3: [
        ("nu_hat", "defence.nu_hat"), ("fpr_rand", "defence.random_fpr"),
        ("fpr", "defence.fpr"), ("fnr_rand", "defence.random_fnr"),
        ("fnr", "defence.fnr"), ("loss_before", "defence.pre_loss"),
        ("loss_after", "defence.post_loss"), ("acc_before", "defence.pre_acc"),
        ("acc_after", "defence.post_acc"),
    ],
    4: [
        ("fpr_knn", "baselines.knn.fpr"), ("fpr_l2", "baselines.l2.fpr"),
        ("fpr_lof", "baselines.lof.fpr"), ("fpr_ours", "defence.fpr"),
        ("fnr_knn", "baselines.knn.fnr"), ("fnr_l2", "baselines.l2.fnr"),
        ("fnr_lof", "baselines.lof.fnr"), ("fnr_ours", "defence.fnr"),
    ],
    6: [
        ("nu_hat", "defence.nu_hat"), ("fpr_rand", "defence.random_fpr"),
        ("fpr", "defence.fpr"), ("fnr_rand", "defence.random_fnr"),
        ("fnr", "defence.fnr"), ("loss_before", "defence.pre_loss"),
        ("loss_after", "defence.post_loss"), ("acc_before", "defence.pre_acc"),
        ("acc_after", "defence.post_acc"),
    ],
}


def _dig(tree: dict, path: str):
    node = tree
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def render_table(result: dict) -> str:
    columns = _TABLE_COLUMNS[result["table"]]
    lines = []
    nu_keys = sorted({k for row in result["rows"].values() for k in row})
    for nu_key in nu_keys:
        lines.append(f"table {result['table']} ({nu_key})")
        header = ["dataset".ljust(20)] + [label.rjust(12) for label, _ in columns]
        lines.append(" ".join(header))
        for dataset in sorted(result["rows"]):
            if nu_key not in result["rows"][dataset]:
                continue
            agg = result["rows"][dataset][nu_key]
            cells = [dataset.ljust(20)]
            for _, path in columns:
                value = _dig(agg["mean"], path)
                cells.append(("-" if value is None else f"{value:.3f}").rjust(12))
            lines.append(" ".join(cells))
        mean = result.get("mean", {}).get(nu_key, {})
        cells = ["mean".ljust(20)]
        for _, path in columns:
            value = _dig(mean, path)
            cells.append(("-" if value is None else f"{value:.3f}").rjust(12))
        lines.append(" ".join(cells))
        lines.append("")
    return "\n".join(lines)


def cmd_table(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.datasets:
        names = [n.strip() for n in args.datasets.split(",") if n.strip()]
    else:
        names = ds.available_benchmarks(cfg.data_dir)
        if not names:
            print("error: no benchmark datasets available", file=sys.stderr)
            return 1
    result = run_table(cfg, args.table, names)
    _write_json(out / f"table{args.table}.json", result)
    text = render_table(result)
    (out / f"table{args.table}.txt").write_text(text, encoding="utf-8")
    print(text)
    if result["errors"]:
        for err in result["errors"]:
            print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_data, val_data, _ = ds.prepare_benchmark(
        args.dataset, args.data_dir, seed=args.seed
    )
    if train_data.d != 2:
        print("error: sweep requires a 2-D dataset", file=sys.stderr)
        return 1
    tc = TrainConfig(seed=args.seed)
    grid_points, _, _ = make_grid(
        np.vstack([train_data.X, val_data.X]), resolution=args.resolution
    )
    params, _ = train(train_data, tc)
    surface = decision_surface(params, grid_points)
    write_grid(out / f"{args.dataset}_surface.tsv", grid_points, surface, "label")
    print(f"decision surface -> {out / args.dataset}_surface.tsv")
    if not args.surface_only:
        losses, accs = poison_grid_sweep(
            train_data, val_data, args.poison_label, grid_points, tc
        )
        write_grid(out / f"{args.dataset}_poison_loss.tsv", grid_points, losses, "val_loss")
        write_grid(out / f"{args.dataset}_poison_acc.tsv", grid_points, accs, "val_acc")
        print(f"poison landscape -> {out / args.dataset}_poison_loss.tsv")
    return 0


def cmd_roc(args: argparse.Namespace) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    aucs = []
    for i in range(cfg.runs):
        seed = cfg.seed + i
        train_data, val_data, _ = ds.prepare_benchmark(cfg.dataset, cfg.data_dir, seed=seed)
        attack = replace(cfg.attack, seed=seed)
        poisoned = back_gradient_attack(train_data, val_data, attack)
        params, _ = train(poisoned.data, cfg.train.with_seed(seed))
        scores = 1.0 - label_likelihoods(params, poisoned.data)
        curve = roc_curve(scores, poisoned.poison_mask)
        write_roc(out / f"{cfg.dataset}_roc_seed{seed}.tsv", curve)
        aucs.append(auc(curve))
    print(f"{cfg.dataset}: mean AUC {np.mean(aucs):.3f} over {cfg.runs} run(s)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poisonlab",
        description="training-set poisoning attacks, defences, and experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, dataset: bool = True) -> None:
        if dataset:
            p.add_argument("--dataset", default="points")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=_default_out())
        p.add_argument("--data-dir", default=_default_data())

    p = sub.add_parser("prepare", help="write train/val/test splits")
    common(p)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("poison", help="attack a dataset")
    common(p)
    p.add_argument("--attack", choices=("flip", "backgrad"), default="backgrad")
    p.add_argument("--nu", type=float, default=0.10)
    p.set_defaults(fn=cmd_poison)

    p = sub.add_parser("defend", help="run the likelihood defence on a dataset file")
    common(p, dataset=False)
    p.add_argument("--data", required=True, help="dataset file (poisoned or clean)")
    p.add_argument("--mask", help="ground-truth poison mask for scoring")
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=5)
    p.set_defaults(fn=cmd_defend)

    p = sub.add_parser("baseline", help="run a comparison defence on a dataset file")
    common(p, dataset=False)
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("knn", "l2", "lof"), required=True)
    p.add_argument("--trusted", help="trusted reference dataset file (l2/lof)")
    p.add_argument("--mask", help="ground-truth poison mask for scoring")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--t", type=float, default=0.6)
    p.add_argument("--alpha", type=float, default=None)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("table", help="reproduce a results table")
    common(p, dataset=False)
    p.add_argument("--table", type=int, choices=(2, 3, 4, 6), required=True)
    p.add_argument("--datasets", help="comma-separated names (default: all available)")
    p.add_argument("--nu", type=float, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--config", help="INI config file; flags override its keys")
    p.set_defaults(fn=cmd_table, dataset=None)

    p = sub.add_parser("sweep", help="2-D decision surface and poison landscape")
    common(p)
    p.add_argument("--resolution", type=int, default=20)
    p.add_argument("--poison-label", type=int, default=1)
    p.add_argument("--surface-only", action="store_true")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("roc", help="defence suspicion-score ROC curves")
    common(p)
    p.add_argument("--nu", type=float, default=0.10)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--config", help="INI config file; flags override its keys")
    p.set_defaults(fn=cmd_roc)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ds.DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
