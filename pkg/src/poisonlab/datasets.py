"""Dataset loading, synthesis, splitting, and the benchmark registry.

All experiments run on seven small classification datasets: two UCI tables
(breast_cancer, spambase), four image subsets (MNIST / Fashion-MNIST digit
pairs and triples, flattened to 784 pixel features), and a synthetic 2-d
three-blob problem (points). Each benchmark is a fixed-size pool from which
stratified train/validation/test splits are drawn per run seed.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

POINTS_CENTERS = np.array([[0.0, 2.0], [-2.0, -1.0], [2.0, -1.0]])
POINTS_STDDEV = 1.05


class DatasetError(ValueError):
    """Malformed dataset file or inconsistent dataset construction."""


class DatasetUnavailableError(FileNotFoundError):
    """Raised when a benchmark's source files are not present locally."""


@dataclass
class Dataset:
    """Feature matrix plus integer labels.

    X is always float64 with shape (n, d); y is int64 in [0, n_classes).
    Instances are immutable by convention: every transformation returns a
    new Dataset.
    """

    name: str
    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise DatasetError(f"{self.name}: X must be 2-d, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DatasetError(
                f"{self.name}: {self.X.shape[0]} rows but {self.y.shape[0]} labels"
            )
        if not np.isfinite(self.X).all():
            raise DatasetError(f"{self.name}: non-finite feature values")
        if self.n_classes < 2:
            raise DatasetError(f"{self.name}: need at least 2 classes")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
            raise DatasetError(
                f"{self.name}: labels outside [0, {self.n_classes})"
            )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    # shorthand used throughout the maths-heavy modules
    d = n_features

    def one_hot(self) -> np.ndarray:
        out = np.zeros((self.n, self.n_classes))
        out[np.arange(self.n), self.y] = 1.0
        return out

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)

    def subset(self, indices, name: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(name or self.name, self.X[idx], self.y[idx], self.n_classes)

    def with_labels(self, y, name: str | None = None) -> "Dataset":
        return Dataset(name or self.name, self.X, y, self.n_classes)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int
    n_val: int
    n_test: int
    seed: int = 0

    @property
    def total(self) -> int:
        return self.n_train + self.n_val + self.n_test


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer allocation of `total` proportional to `weights`, sums exactly."""
    quota = total * weights / weights.sum()
    alloc = np.floor(quota).astype(np.int64)
    remainder = quota - alloc
    short = total - alloc.sum()
    for i in np.argsort(-remainder, kind="stable")[:short]:
        alloc[i] += 1
    return alloc


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint stratified train/val/test split with exact sizes.

    Per-class allocation uses largest-remainder rounding, so each split's
    class proportions stay within one instance of the pool's — except that
    when the three sizes consume the pool exactly, the last split inherits
    whatever the earlier rounding left and can sit up to two instances off
    its quota. Raises if the sizes are infeasible or any split would miss
    a class.
    """
    if spec.total > data.n:
        raise DatasetError(
            f"split sizes {spec.n_train}+{spec.n_val}+{spec.n_test} exceed pool {data.n}"
        )
    rng = np.random.default_rng(spec.seed)
    counts = data.class_counts()
    if (counts == 0).any():
        raise DatasetError(f"{data.name}: class missing from pool")

    # Allocate splits in sequence, never exceeding a class's remaining
    # capacity: proportional floors first, then the shortfall by largest
    # remainder among classes that still have instances left.
    per_split: list[np.ndarray] = []
    committed = np.zeros(data.n_classes, dtype=np.int64)
    for n, label in zip((spec.n_train, spec.n_val, spec.n_test), ("train", "val", "test")):
        capacity = counts - committed
        quota = n * counts / data.n
        alloc = np.minimum(np.floor(quota).astype(np.int64), capacity)
        deficit = n - int(alloc.sum())
        order = np.argsort(-(quota - np.floor(quota)), kind="stable")
        while deficit > 0:
            progressed = False
            for c in order:
                if deficit > 0 and alloc[c] < capacity[c]:
                    alloc[c] += 1
                    deficit -= 1
                    progressed = True
            if not progressed:
                raise DatasetError(f"{data.name}: {label} split exceeds class counts")
        if (alloc == 0).any():
            raise DatasetError(f"{data.name}: {label} split would miss a class")
        per_split.append(alloc)
        committed += alloc

    picks: list[list[np.ndarray]] = [[], [], []]
    for c in range(data.n_classes):
        pool_c = rng.permutation(np.flatnonzero(data.y == c))
        offset = 0
        for s in range(3):
            take = per_split[s][c]
            picks[s].append(pool_c[offset : offset + take])
            offset += take

    out = []
    for s, label in enumerate(("train", "val", "test")):
        idx = np.sort(np.concatenate(picks[s]))
        out.append(data.subset(idx, name=f"{data.name}/{label}"))
    return tuple(out)


# ---------------------------------------------------------------------------
# File formats


def load_delimited(
    path,
    label_column: int = -1,
    class_filter=None,
    name: str | None = None,
    delimiter: str = ",",
) -> Dataset:
    """Parse a delimited numeric table into a Dataset.

    The label column is removed from the features and raw label values are
    mapped, in ascending order, onto 0..C-1. Lines starting with '#' are
    skipped (reproducibility headers); a first row that is entirely
    non-numeric is treated as a header. Any other non-numeric cell is an
    error naming its row and column.
    """
    path = Path(path)
    rows: list[list[float]] = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = [c.strip() for c in line.split(delimiter)]
            parsed = []
            bad_col = None
            for j, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    bad_col = j
                    break
            if bad_col is not None:
                if not rows and bad_col == 0:  # header row
                    continue
                raise DatasetError(
                    f"{path.name}: non-numeric cell at row {lineno}, column {bad_col + 1}: "
                    f"{cells[bad_col]!r}"
                )
            if width is None:
                width = len(parsed)
            elif len(parsed) != width:
                raise DatasetError(
                    f"{path.name}: row {lineno} has {len(parsed)} cells, expected {width}"
                )
            rows.append(parsed)
    if not rows:
        raise DatasetError(f"{path.name}: no data rows")

    table = np.asarray(rows, dtype=np.float64)
    label_column = label_column % table.shape[1]
    raw_labels = table[:, label_column]
    X = np.delete(table, label_column, axis=1)

    if class_filter is not None:
        keep = np.isin(raw_labels, list(class_filter))
        X, raw_labels = X[keep], raw_labels[keep]
    values = np.unique(raw_labels)
    y = np.searchsorted(values, raw_labels)
    return Dataset(name or path.stem, X, y, n_classes=len(values))


def save_dataset(path, data: Dataset, header: str | None = None) -> None:
    """Write the canonical dataset file: feature columns, trailing int label.

    Floats are written with shortest round-trip repr so a load reproduces X
    bit-exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for row, label in zip(data.X, data.y):
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write(f",{int(label)}\n")


def save_mask(path, indices) -> None:
    """Mask sidecar format: one poisoned-row index per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    path.write_text("".join(f"{i}\n" for i in idx), encoding="utf-8")


def load_mask(path, n: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    text = Path(path).read_text(encoding="utf-8")
    for token in text.split():
        i = int(token)
        if not 0 <= i < n:
            raise DatasetError(f"mask index {i} out of range for {n} rows")
        mask[i] = True
    return mask


def _read_idx(path, expected_magic: int, expected_ndim: int) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        head = fh.read(4 * (1 + expected_ndim))
        if len(head) < 4 * (1 + expected_ndim):
            raise DatasetError(f"{path.name}: truncated IDX header")
        magic = struct.unpack(">i", head[:4])[0]
        if magic != expected_magic:
            raise DatasetError(
                f"{path.name}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
            )
        dims = struct.unpack(f">{expected_ndim}i", head[4:])
        count = int(np.prod(dims))
        buf = fh.read(count)
        if len(buf) < count:
            raise DatasetError(
                f"{path.name}: truncated IDX payload ({len(buf)} of {count} bytes)"
            )
        return np.frombuffer(buf, dtype=np.uint8).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    return _read_idx(path, IDX_IMAGE_MAGIC, 3)


def load_idx_labels(path) -> np.ndarray:
    return _read_idx(path, IDX_LABEL_MAGIC, 1)


def load_idx_subset(
    images_path,
    labels_path,
    classes,
    size: int,
    seed: int = 0,
    name: str = "idx",
) -> Dataset:
    """Load an IDX image/label pair restricted to the given original classes.

    Images are flattened and scaled to [0, 1]; the selected classes are
    relabeled in ascending original order to 0..C-1, then `size` instances
    are drawn uniformly without replacement with the given seed.
    """
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(
            f"{Path(images_path).name}: {images.shape[0]} images vs {labels.shape[0]} labels"
        )
    classes = sorted(int(c) for c in classes)
    keep = np.isin(labels, classes)
    X = images[keep].reshape(keep.sum(), -1).astype(np.float64) / 255.0
    y = np.searchsorted(classes, labels[keep])
    if size > X.shape[0]:
        raise DatasetError(
            f"requested {size} instances but only {X.shape[0]} match classes {classes}"
        )
    pick = np.sort(np.random.default_rng(seed).choice(X.shape[0], size, replace=False))
    return Dataset(name, X[pick], y[pick], n_classes=len(classes))


def make_points(n: int, seed: int = 0) -> Dataset:
    """Synthetic 2-d dataset: three equal isotropic Gaussian blobs."""
    if n % 3 != 0:
        raise DatasetError(f"points size {n} not divisible by 3")
    rng = np.random.default_rng(seed)
    per = n // 3
    X = np.concatenate(
        [c + POINTS_STDDEV * rng.standard_normal((per, 2)) for c in POINTS_CENTERS]
    )
    y = np.repeat(np.arange(3), per)
    return Dataset("points", X, y, n_classes=3)


# ---------------------------------------------------------------------------
# Feature scaling


def fit_minmax(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    return lo, hi


def apply_minmax(X: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = hi - lo
    span = np.where(span > 0, span, 1.0)  # constant features pass through
    return (X - lo) / span


# ---------------------------------------------------------------------------
# Benchmark registry


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    pool_size: int
    n_classes: int
    splits: tuple[int, int, int]
    source: str  # "csv" | "idx" | "synthetic"
    normalize: bool
    csv_file: str = ""
    idx_dir: str = ""
    classes: tuple[int, ...] = ()


BENCHMARKS: dict[str, BenchmarkSpec] = {
    spec.name: spec
    for spec in [
        BenchmarkSpec("breast_cancer", 540, 2, (100, 220, 220), "csv", True,
                      csv_file="breast_cancer.csv"),
        BenchmarkSpec("fashion_mnist_156", 6300, 3, (300, 3000, 3000), "idx", False,
                      idx_dir="fashion_mnist", classes=(1, 5, 6)),
        BenchmarkSpec("fashion_mnist_17", 2100, 2, (100, 1000, 1000), "idx", False,
                      idx_dir="fashion_mnist", classes=(1, 7)),
        BenchmarkSpec("mnist_156", 6300, 3, (300, 3000, 3000), "idx", False,
                      idx_dir="mnist", classes=(1, 5, 6)),
        BenchmarkSpec("mnist_17", 2100, 2, (100, 1000, 1000), "idx", False,
                      idx_dir="mnist", classes=(1, 7)),
        BenchmarkSpec("points", 300, 3, (100, 100, 100), "synthetic", False),
        BenchmarkSpec("spambase", 4200, 2, (200, 2000, 2000), "csv", True,
                      csv_file="spambase.data"),
    ]
}

IDX_IMAGES_FILE = "train-images-idx3-ubyte"
IDX_LABELS_FILE = "train-labels-idx1-ubyte"


def ensure_breast_cancer_csv(data_dir) -> Path:
    """Materialize the Wisconsin diagnostic table from scikit-learn's copy."""
    path = Path(data_dir) / "breast_cancer.csv"
    if not path.exists():
        from sklearn.datasets import load_breast_cancer

        raw = load_breast_cancer()
        ds = Dataset("breast_cancer", raw.data, raw.target, n_classes=2)
        save_dataset(path, ds)
    return path


def _find_idx_pair(data_dir: Path, spec: BenchmarkSpec) -> tuple[Path, Path]:
    base = data_dir / spec.idx_dir
    for suffix in ("", ".gz"):
        images = base / (IDX_IMAGES_FILE + suffix)
        labels = base / (IDX_LABELS_FILE + suffix)
        if images.exists() and labels.exists():
            return images, labels
    raise DatasetUnavailableError(
        f"{spec.name}: expected {base}/{IDX_IMAGES_FILE}[.gz] and "
        f"{base}/{IDX_LABELS_FILE}[.gz]; run scripts/fetch_data.py on a "
        f"machine with network access"
    )


def load_benchmark_pool(name: str, data_dir, seed: int = 0) -> Dataset:
    """Load one benchmark's fixed-size pool, subsampled with the run seed."""
    if name not in BENCHMARKS:
        raise DatasetError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}")
    spec = BENCHMARKS[name]
    data_dir = Path(data_dir)

    if spec.source == "synthetic":
        return make_points(spec.pool_size, seed=seed)

    if spec.source == "idx":
        images, labels = _find_idx_pair(data_dir, spec)
        ds = load_idx_subset(images, labels, spec.classes, spec.pool_size,
                             seed=seed, name=name)
        return ds

    path = data_dir / spec.csv_file
    if name == "breast_cancer":
        path = ensure_breast_cancer_csv(data_dir)
    if not path.exists():
        raise DatasetUnavailableError(
            f"{name}: expected {path}; run scripts/fetch_data.py on a machine "
            f"with network access"
        )
    full = load_delimited(path, label_column=-1, name=name)
    if full.n < spec.pool_size:
        raise DatasetError(f"{name}: file has {full.n} rows, pool needs {spec.pool_size}")
    pick = np.sort(
        np.random.default_rng(seed).choice(full.n, spec.pool_size, replace=False)
    )
    return full.subset(pick)


def prepare_benchmark(
    name: str, data_dir, seed: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Pool -> stratified split -> per-feature min-max scaling (UCI tables).

    Scaling statistics come from the train split only and are applied to all
    three splits; image pixels are already in [0, 1] and points stays raw.
    """
    spec = BENCHMARKS[name]
    pool = load_benchmark_pool(name, data_dir, seed=seed)
    train, val, test = split(pool, SplitSpec(*spec.splits, seed=seed))
    if spec.normalize:
        lo, hi = fit_minmax(train.X)
        train, val, test = (
            Dataset(d.name, apply_minmax(d.X, lo, hi), d.y, d.n_classes)
            for d in (train, val, test)
        )
    return train, val, test


def available_benchmarks(data_dir) -> list[str]:
    """Benchmarks whose source data can be loaded right now."""
    out = []
    for name in BENCHMARKS:
        try:
            load_benchmark_pool(name, data_dir, seed=0)
        except DatasetUnavailableError:
            continue
        out.append(name)
    return out
