"""End-to-end experiment pipeline and results-table runners.

One "run" is a seeded pipeline over a single dataset: split, train clean,
attack (label flip and/or back-gradient), defend, score the related-work
baselines, and evaluate every model on the held-out test split.  Tables
aggregate runs as mean and sample standard deviation, with run seeds
``base_seed + i`` so any row can be reproduced in isolation.

All results are plain nested dicts of floats so they serialize to JSON
unchanged; aggregation works on any record shape by recursing over keys.
"""

from __future__ import annotations

import configparser
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attacks import AttackConfig, back_gradient_attack, flip_labels
from .baselines import KnnConfig, OutlierConfig, knn_sanitize, outlier_defence
from .datasets import prepare_benchmark
from .defence import DefenceConfig, defend
from .evaluation import detection_metrics, evaluate_model, random_baseline
from .nn import TrainConfig, train

TRUSTED_PER_CLASS = 50


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "points"
    nu: float = 0.10
    runs: int = 5
    seed: int = 0
    data_dir: str = "data"
    jobs: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=lambda: AttackConfig(nu=0.10))
    defence: DefenceConfig = field(default_factory=DefenceConfig)
    knn: KnnConfig = field(default_factory=KnnConfig)

    def __post_init__(self) -> None:
        if self.runs < 1:
            raise ValueError("runs must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def with_nu(self, nu: float) -> "ExperimentConfig":
        return replace(self, nu=nu, attack=replace(self.attack, nu=nu))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "nu": self.nu,
            "runs": self.runs,
            "seed": self.seed,
            "jobs": self.jobs,
            "train": {
                "hidden_width": self.train.hidden_width,
                "learning_rate": self.train.learning_rate,
                "epochs": self.train.epochs,
            },
            "attack": {
                "outer_iters": self.attack.outer_iters,
                "attack_step": self.attack.attack_step,
                "unroll_epochs": self.attack.unroll_epochs,
                "unroll_step": self.attack.unroll_step,
            },
            "defence": {
                "window": self.defence.window,
                "max_iterations": self.defence.max_iterations,
            },
        }


def config_from_ini(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Load an ExperimentConfig from a sectioned key=value file.

    Missing sections or keys keep the defaults of ``base``.
    """
    cfg = base if base is not None else ExperimentConfig()
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file {path} not found")

    if parser.has_section("experiment"):
        sec = parser["experiment"]
        cfg = replace(
            cfg,
            dataset=sec.get("dataset", cfg.dataset),
            nu=sec.getfloat("nu", cfg.nu),
            runs=sec.getint("runs", cfg.runs),
            seed=sec.getint("seed", cfg.seed),
            data_dir=sec.get("data_dir", cfg.data_dir),
            jobs=sec.getint("jobs", cfg.jobs),
        )
    if parser.has_section("train"):
        sec = parser["train"]
        cfg = replace(
            cfg,
            train=replace(
                cfg.train,
                hidden_width=sec.getint("hidden_width", cfg.train.hidden_width),
                learning_rate=sec.getfloat("learning_rate", cfg.train.learning_rate),
                epochs=sec.getint("epochs", cfg.train.epochs),
            ),
        )
    if parser.has_section("attack"):
        sec = parser["attack"]
        cfg = replace(
            cfg,
            attack=replace(
                cfg.attack,
                outer_iters=sec.getint("outer_iters", cfg.attack.outer_iters),
                attack_step=sec.getfloat("attack_step", cfg.attack.attack_step),
                unroll_epochs=sec.getint("unroll_epochs", cfg.attack.unroll_epochs),
                unroll_step=sec.getfloat("unroll_step", cfg.attack.unroll_step),
            ),
        )
    if parser.has_section("defence"):
        sec = parser["defence"]
        window = sec.get("window", "")
        cfg = replace(
            cfg,
            defence=replace(
                cfg.defence,
                window=int(window) if window else cfg.defence.window,
                max_iterations=sec.getint("max_iterations", cfg.defence.max_iterations),
            ),
        )
    cfg = replace(cfg, attack=replace(cfg.attack, nu=cfg.nu))
    return cfg


def carve_trusted(val, used_indices: set[int], per_class: int = TRUSTED_PER_CLASS):
    """Clean per-class reference slice for the outlier baselines.

    Taken from the validation split, skipping rows the attacker already
    sampled as poison seeds, up to ``per_class`` instances per class.
    """
    keep: list[int] = []
    for c in range(val.n_classes):
        members = [i for i in np.flatnonzero(val.y == c) if i not in used_indices]
        keep.extend(members[:per_class])
    return val.subset(np.array(sorted(keep), dtype=np.int64))


def run_single(
    cfg: ExperimentConfig,
    seed: int,
    with_flip: bool = True,
    with_backgrad: bool = True,
    with_defence: bool = True,
    with_baselines: bool = True,
) -> dict:
    """One seeded pipeline pass; returns a JSON-ready record."""
    train_data, val_data, test_data = prepare_benchmark(
        cfg.dataset, cfg.data_dir, seed=seed
    )
    tc = cfg.train.with_seed(seed)

    record: dict = {"dataset": cfg.dataset, "seed": seed, "nu": cfg.nu}

    clean_params, _ = train(train_data, tc)
    loss, acc = evaluate_model(clean_params, test_data)
    record["clean"] = {"loss": loss, "acc": acc}

    if with_flip:
        flipped = flip_labels(train_data, cfg.nu, seed=seed)
        flip_params, _ = train(flipped.data, tc)
        loss, acc = evaluate_model(flip_params, test_data)
        record["flip"] = {"loss": loss, "acc": acc}

    if not (with_backgrad or with_defence or with_baselines):
        return record

    attack = replace(cfg.attack, nu=cfg.nu, seed=seed)
    poisoned = back_gradient_attack(train_data, val_data, attack)
    bg_params, _ = train(poisoned.data, tc)
    loss, acc = evaluate_model(bg_params, test_data)
    record["backgrad"] = {
        "loss": loss,
        "acc": acc,
        "n_poison": poisoned.n_poisoned,
        "frozen": sum(r.frozen for r in poisoned.provenance),
    }

    if with_defence:
        # the defence keeps its own scoring budget; only the seed follows the run
        dc = replace(cfg.defence, train=cfg.defence.train.with_seed(seed))
        report, cleaned = defend(poisoned.data, dc)
        post_params, _ = train(cleaned, tc)
        post_loss, post_acc = evaluate_model(post_params, test_data)
        metrics = detection_metrics(report.removed_indices, poisoned.poison_mask)
        rand_fpr, rand_fnr = random_baseline(cfg.nu)
        record["defence"] = {
            "nu_hat": report.nu_hat_total,
            "fpr": metrics.fpr,
            "fnr": metrics.fnr,
            "random_fpr": rand_fpr,
            "random_fnr": rand_fnr,
            "iterations": report.iterations_run,
            "pre_loss": record["backgrad"]["loss"],
            "pre_acc": record["backgrad"]["acc"],
            "post_loss": post_loss,
            "post_acc": post_acc,
        }

    if with_baselines:
        used = {rec.source_index for rec in poisoned.provenance}
        trusted = carve_trusted(val_data, used)
        mask = poisoned.poison_mask
        knn_m = detection_metrics(knn_sanitize(poisoned.data, cfg.knn), mask)
        l2_m = detection_metrics(
            outlier_defence(poisoned.data, trusted, OutlierConfig("l2")), mask
        )
        lof_m = detection_metrics(
            outlier_defence(poisoned.data, trusted, OutlierConfig("lof")), mask
        )
        record["baselines"] = {
            "knn": {"fpr": knn_m.fpr, "fnr": knn_m.fnr},
            "l2": {"fpr": l2_m.fpr, "fnr": l2_m.fnr},
            "lof": {"fpr": lof_m.fpr, "fnr": lof_m.fnr},
        }
    return record


def _numeric_leaves(record: dict, prefix: str = "") -> dict[str, float]:
    out: dict[str, float] = {}
    for key, value in record.items():
        path = f"{prefix}.{key}" if prefix else key
        if isinstance(value, dict):
            out.update(_numeric_leaves(value, path))
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            out[path] = float(value)
    return out


def _nest(flat: dict[str, float]) -> dict:
    out: dict = {}
    for path, value in flat.items():
        node = out
        *parents, leaf = path.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return out


def aggregate(records: list[dict]) -> dict:
    """Mean and sample standard deviation (ddof=1) over numeric leaves."""
    if not records:
        raise ValueError("nothing to aggregate")
    flats = [_numeric_leaves(r) for r in records]
    keys = sorted(set().union(*flats))
    mean: dict[str, float] = {}
    std: dict[str, float] = {}
    for key in keys:
        values = [f[key] for f in flats if key in f]
        mean[key] = float(np.mean(values))
        std[key] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return {"mean": _nest(mean), "std": _nest(std), "n_runs": len(records)}


_TABLE_PARTS = {
    2: dict(with_flip=True, with_backgrad=True, with_defence=False, with_baselines=False),
    3: dict(with_flip=False, with_backgrad=True, with_defence=True, with_baselines=False),
    4: dict(with_flip=False, with_backgrad=True, with_defence=True, with_baselines=True),
    6: dict(with_flip=False, with_backgrad=True, with_defence=True, with_baselines=False),
}


def _run_job(args) -> tuple[str, float, int, dict, str | None]:
    cfg, dataset, nu, seed, parts = args
    job_cfg = replace(cfg, dataset=dataset).with_nu(nu)
    try:
        return dataset, nu, seed, run_single(job_cfg, seed, **parts), None
    except Exception as exc:  # recorded per-row, table still emitted
        return dataset, nu, seed, {}, f"{type(exc).__name__}: {exc}"


def run_table(
    cfg: ExperimentConfig, table_id: int, datasets: list[str]
) -> dict:
    """Reproduce one results table over the given datasets.

    Table 2: attack effectiveness (clean / flip / back-gradient).
    Table 3: defence vs the back-gradient attack at the configured nu.
    Table 4: defence vs kNN / L2 / LOF baselines.
    Table 6: defence at nu = 0 and nu = 0.05.
    """
    if table_id not in _TABLE_PARTS:
        raise ValueError(f"unknown table {table_id}; know {sorted(_TABLE_PARTS)}")
    parts = _TABLE_PARTS[table_id]
    nus = [0.0, 0.05] if table_id == 6 else [cfg.nu]

    jobs = [
        (cfg, dataset, nu, cfg.seed + i, parts)
        for dataset in datasets
        for nu in nus
        for i in range(cfg.runs)
    ]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_run_job, jobs))
    else:
        outcomes = [_run_job(job) for job in jobs]

    rows: dict = {}
    errors: list[dict] = []
    for dataset, nu, seed, record, error in sorted(
        outcomes, key=lambda o: (o[0], o[1], o[2])
    ):
        if error is not None:
            errors.append({"dataset": dataset, "nu": nu, "seed": seed, "error": error})
            continue
        rows.setdefault(dataset, {}).setdefault(f"nu={nu:g}", []).append(record)

    table: dict = {
        "table": table_id,
        "config": cfg.to_dict(),
        "datasets": datasets,
        "rows": {},
        "errors": errors,
    }
    for dataset, by_nu in rows.items():
        table["rows"][dataset] = {
            nu_key: {"runs": records, **aggregate(records)}
            for nu_key, records in by_nu.items()
        }

    # summary row: cross-dataset mean of the per-dataset means
    for nu_key in {k for by_nu in rows.values() for k in by_nu}:
        per_dataset = [
            table["rows"][d][nu_key]["mean"]
            for d in rows
            if nu_key in table["rows"][d]
        ]
        if per_dataset:
            flats = [_numeric_leaves(m) for m in per_dataset]
            keys = sorted(set().union(*flats))
            table.setdefault("mean", {})[nu_key] = _nest(
                {
                    key: float(np.mean([f[key] for f in flats if key in f]))
                    for key in keys
                }
            )
    return table
