"""Dataset construction, splitting, and file formats."""

import struct

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from poisonlab.datasets import (
    Dataset,
    DatasetError,
    SplitSpec,
    load_delimited,
    load_idx_subset,
    load_mask,
    make_points,
    save_dataset,
    save_mask,
    split,
)


# ---------------------------------------------------------------------------
# make_points


def test_make_points_shapes_and_balance():
    ds = make_points(300, seed=0)
    assert ds.X.shape == (300, 2)
    assert ds.y.shape == (300,)
    assert ds.n_classes == 3
    assert np.array_equal(ds.class_counts(), [100, 100, 100])
    assert ds.X.dtype == np.float64


def test_make_points_rejects_unbalanced_size():
    with pytest.raises(DatasetError, match="divisible by 3"):
        make_points(100)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_make_points_deterministic(seed):
    a = make_points(30, seed=seed)
    b = make_points(30, seed=seed)
    assert np.array_equal(a.X, b.X)
    assert np.array_equal(a.y, b.y)


def test_make_points_clusters_roughly_centered():
    # with 1500 draws per class the empirical means should sit near the
    # generating centers
    ds = make_points(4500, seed=1)
    for c, center in enumerate([[0.0, 2.0], [-2.0, -1.0], [2.0, -1.0]]):
        mean = ds.X[ds.y == c].mean(axis=0)
        assert np.linalg.norm(mean - center) < 0.15


# ---------------------------------------------------------------------------
# Dataset basics


def test_dataset_validates_row_label_mismatch():
    with pytest.raises(DatasetError):
        Dataset("bad", np.zeros((3, 2)), np.zeros(2, dtype=np.int64), 2)


def test_one_hot_round_trip():
    ds = make_points(30, seed=0)
    onehot = ds.one_hot()
    assert onehot.shape == (30, 3)
    assert np.array_equal(onehot.argmax(axis=1), ds.y)
    assert np.array_equal(onehot.sum(axis=1), np.ones(30))


def test_subset_preserves_alignment():
    ds = make_points(30, seed=0)
    idx = np.array([5, 1, 20])
    sub = ds.subset(idx)
    assert np.array_equal(sub.X, ds.X[idx])
    assert np.array_equal(sub.y, ds.y[idx])
    assert sub.n_classes == ds.n_classes


# ---------------------------------------------------------------------------
# split


def test_split_exact_sizes_and_disjoint():
    ds = make_points(300, seed=0)
    tr, va, te = split(ds, SplitSpec(100, 100, 100, seed=0))
    assert (tr.n, va.n, te.n) == (100, 100, 100)
    # rows are unique in the pool, so feature-row identity tracks indices
    seen = {tuple(row) for part in (tr, va, te) for row in part.X}
    assert len(seen) == 300


def test_split_stratification_bounds():
    # Exact partition of the pool: the first two splits stay within one
    # instance of the pool proportions; the last absorbs the accumulated
    # rounding and may drift one further.
    ds = make_points(300, seed=0)
    parts = split(ds, SplitSpec(100, 100, 100, seed=3))
    for part, bound in zip(parts, (1, 1, 2)):
        assert np.all(np.abs(part.class_counts() - part.n / 3) <= bound)


def test_split_rejects_oversized_request():
    ds = make_points(30, seed=0)
    with pytest.raises(DatasetError, match="exceed pool"):
        split(ds, SplitSpec(20, 20, 20))


def test_split_rejects_class_starvation():
    # 2 instances of class 0 cannot stock three class-complete splits
    X = np.random.default_rng(0).normal(size=(22, 2))
    y = np.array([0, 0] + [1] * 20)
    with pytest.raises(DatasetError, match="class"):
        split(Dataset("skew", X, y, 2), SplitSpec(7, 7, 7, seed=0))


@given(st.data())
@settings(max_examples=40, deadline=None)
def test_split_invariants_hold_on_random_pools(data):
    n_classes = data.draw(st.integers(2, 4), label="classes")
    counts = data.draw(
        st.lists(st.integers(4, 40), min_size=n_classes, max_size=n_classes),
        label="counts",
    )
    n = sum(counts)
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16), label="rng"))
    y = np.repeat(np.arange(n_classes), counts)
    rng.shuffle(y)
    ds = Dataset("fuzz", rng.normal(size=(n, 2)), y, n_classes)
    sizes = data.draw(
        st.lists(st.integers(n_classes, max(n_classes + 1, n // 2)), min_size=3, max_size=3),
        label="sizes",
    )
    assume(sum(sizes) <= n)
    spec = SplitSpec(*sizes, seed=data.draw(st.integers(0, 100), label="seed"))
    try:
        parts = split(ds, spec)
    except DatasetError:
        assume(False)
    pool_counts = ds.class_counts()
    taken = np.zeros(n_classes, dtype=np.int64)
    # The last split of an exact partition inherits earlier rounding, so its
    # bound is one instance looser than the others'.
    for part, size, bound in zip(parts, sizes, (1, 1, 2)):
        assert part.n == size
        pc = part.class_counts()
        assert np.all(pc >= 1), "every split must be class-complete"
        assert np.all(np.abs(pc - size * pool_counts / n) <= bound + 1e-9)
        taken += pc
    assert np.all(taken <= pool_counts)


def test_split_deterministic_per_seed():
    ds = make_points(150, seed=2)
    a = split(ds, SplitSpec(50, 50, 50, seed=7))
    b = split(ds, SplitSpec(50, 50, 50, seed=7))
    c = split(ds, SplitSpec(50, 50, 50, seed=8))
    for x, y in zip(a, b):
        assert np.array_equal(x.X, y.X) and np.array_equal(x.y, y.y)
    assert not all(np.array_equal(x.X, z.X) for x, z in zip(a, c))


# ---------------------------------------------------------------------------
# delimited files


def test_load_delimited_names_bad_cell(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# comment\n1.0,2.0,0\n3.0,4.0,1\n5.0,oops,0\n")
    with pytest.raises(DatasetError, match=r"row 4, column 2"):
        load_delimited(p)


def test_load_delimited_names_ragged_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("f1,f2,label\n1.0,2.0,0\n3.0,4.0\n")
    with pytest.raises(DatasetError, match=r"row 3 has 2 cells, expected 3"):
        load_delimited(p)


def test_load_delimited_skips_header_and_comments(tmp_path):
    p = tmp_path / "ok.csv"
    p.write_text("# generated\nf1,f2,label\n1.0,2.0,0\n3.0,4.0,1\n")
    ds = load_delimited(p)
    assert ds.n == 2
    assert np.array_equal(ds.X, [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ds.y, [0, 1])


def test_load_delimited_label_column_and_filter(tmp_path):
    p = tmp_path / "mid.csv"
    p.write_text("1.0,2,9.0\n1.5,0,8.0\n2.0,2,7.0\n")
    ds = load_delimited(p, label_column=1, class_filter=[2, 0])
    assert ds.n == 3
    # labels relabeled ascending by raw value: 0 -> 0, 2 -> 1
    assert np.array_equal(ds.y, [1, 0, 1])
    assert np.array_equal(ds.X[:, 1], [9.0, 8.0, 7.0])


def test_save_load_round_trip_bit_exact(tmp_path):
    ds = make_points(30, seed=9)
    p = tmp_path / "pts.csv"
    save_dataset(p, ds, header="round trip")
    back = load_delimited(p, name="pts")
    assert np.array_equal(back.X, ds.X)  # repr() serialization is lossless
    assert np.array_equal(back.y, ds.y)


def test_mask_round_trip_and_range_check(tmp_path):
    p = tmp_path / "m.mask"
    save_mask(p, np.array([7, 2, 11]))
    expected = np.zeros(12, dtype=bool)
    expected[[2, 7, 11]] = True
    assert np.array_equal(load_mask(p, 12), expected)
    with pytest.raises(DatasetError, match="out of range"):
        load_mask(p, 11)


# ---------------------------------------------------------------------------
# IDX image files


def _write_idx_pair(tmp_path, images, labels):
    ip, lp = tmp_path / "im.idx", tmp_path / "lb.idx"
    ip.write_bytes(struct.pack(">IIII", 2051, *images.shape) + images.tobytes())
    lp.write_bytes(struct.pack(">II", 2049, labels.shape[0]) + labels.tobytes())
    return ip, lp


def test_idx_subset_relabels_and_scales(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(30, 4, 4), dtype=np.uint8)
    labels = np.tile([3, 9, 5], 10).astype(np.uint8)
    ip, lp = _write_idx_pair(tmp_path, images, labels)
    ds = load_idx_subset(ip, lp, classes=[9, 3], size=12, seed=0)
    assert ds.X.shape == (12, 16)
    assert ds.n_classes == 2
    # classes relabeled 0..C-1 in ascending original order: 3 -> 0, 9 -> 1
    assert sorted(set(ds.y.tolist())) == [0, 1]
    assert ds.X.min() >= 0.0 and ds.X.max() <= 1.0


def test_idx_rejects_bad_magic(tmp_path):
    ip, lp = _write_idx_pair(
        tmp_path,
        np.zeros((2, 4, 4), dtype=np.uint8),
        np.zeros(2, dtype=np.uint8),
    )
    ip.write_bytes(struct.pack(">IIII", 1234, 2, 4, 4) + bytes(32))
    with pytest.raises(DatasetError, match="magic"):
        load_idx_subset(ip, lp, classes=[0], size=1)


def test_idx_rejects_truncated_payload(tmp_path):
    images = np.zeros((2, 4, 4), dtype=np.uint8)
    labels = np.zeros(2, dtype=np.uint8)
    ip, lp = _write_idx_pair(tmp_path, images, labels)
    ip.write_bytes(struct.pack(">IIII", 2051, 2, 4, 4) + images.tobytes()[:-5])
    with pytest.raises(DatasetError, match="truncated"):
        load_idx_subset(ip, lp, classes=[0], size=1)
