#!/usr/bin/env python3
"""Download the benchmark source files that cannot be generated locally.

Needs network access; everything lands under --data-dir (default ./data):

    mnist/train-images-idx3-ubyte.gz      mnist/train-labels-idx1-ubyte.gz
    fashion_mnist/train-images-idx3-ubyte.gz   (and labels)
    spambase.data

breast_cancer.csv is materialized automatically from scikit-learn the
first time it's needed, and the points dataset is synthetic; neither is
fetched here.  Each source has mirror URLs tried in order.
"""

import argparse
import sys
import urllib.error
import urllib.request
from pathlib import Path

IDX_FILES = ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz")

MIRRORS = {
    "mnist": [
        "https://ossci-datasets.s3.amazonaws.com/mnist/",
        "https://storage.googleapis.com/cvdf-datasets/mnist/",
        "http://yann.lecun.com/exdb/mnist/",
    ],
    "fashion_mnist": [
        "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
        "https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/",
    ],
    "spambase": [
        "https://archive.ics.uci.edu/ml/machine-learning-databases/spambase/",
    ],
}


def fetch(url: str, dest: Path, timeout: float) -> bool:
    try:
        print(f"  {url}")
        with urllib.request.urlopen(url, timeout=timeout) as response:
            payload = response.read()
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        print(f"    failed: {exc}")
        return False
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_bytes(payload)
    print(f"    -> {dest} ({len(payload)} bytes)")
    return True


def fetch_first(mirrors: list[str], filename: str, dest: Path, timeout: float) -> bool:
    if dest.exists():
        print(f"  {dest} already present, skipping")
        return True
    return any(fetch(base + filename, dest, timeout) for base in mirrors)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--data-dir", default="data")
    parser.add_argument(
        "--only", choices=sorted(MIRRORS), action="append",
        help="restrict to one source (repeatable)",
    )
    parser.add_argument("--timeout", type=float, default=60.0)
    args = parser.parse_args(argv)

    data_dir = Path(args.data_dir)
    sources = args.only or sorted(MIRRORS)
    missing = []
    for source in sources:
        print(f"{source}:")
        if source == "spambase":
            ok = fetch_first(MIRRORS[source], "spambase.data",
                             data_dir / "spambase.data", args.timeout)
            if not ok:
                missing.append("spambase.data")
            continue
        for filename in IDX_FILES:
            ok = fetch_first(MIRRORS[source], filename,
                             data_dir / source / filename, args.timeout)
            if not ok:
                missing.append(f"{source}/{filename}")

    if missing:
        print("\nstill missing: " + ", ".join(missing), file=sys.stderr)
        return 1
    print("\nall sources present")
    return 0


if __name__ == "__main__":
    sys.exit(main())
