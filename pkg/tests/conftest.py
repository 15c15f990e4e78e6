"""Shared fixtures: the experiment battery and acceptance bookkeeping.

The ``battery`` fixture runs the full attack -> defence -> baseline
pipeline five times per available dataset (plus clean-data and nu=0.05
defence passes) and is shared session-wide, so the acceptance tests all
score one deterministic set of runs.  Expect it to take a minute or two
the first time a test that uses it runs.
"""

from __future__ import annotations

import sys
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))  # for `import oracles`

from poisonlab.datasets import available_benchmarks, ensure_breast_cancer_csv
from poisonlab.experiments import ExperimentConfig, run_single

DATA_DIR = Path(__file__).resolve().parent.parent / "data"
SEEDS = (0, 1, 2, 3, 4)

# ---------------------------------------------------------------------------
# Acceptance criterion bookkeeping.  Tests wrap their body in
# `with criterion(n, title) as entry:`; the terminal summary prints one
# PASS/FAIL/SKIP line per criterion.

_criteria: dict[int, dict] = {}


@contextmanager
def _criterion(number: int, title: str):
    entry = _criteria.setdefault(number, {"title": title, "outcome": "FAIL", "detail": ""})
    entry["title"] = title
    try:
        yield entry
    except pytest.skip.Exception as exc:
        entry["outcome"] = "SKIP"
        if str(exc):
            entry["detail"] = str(exc).splitlines()[0]
        raise
    except BaseException as exc:
        entry["outcome"] = "FAIL"
        first = str(exc).splitlines()[0] if str(exc) else exc.__class__.__name__
        entry["detail"] = (entry["detail"] + " | " + first).strip(" |")[:160]
        raise
    else:
        entry["outcome"] = "PASS"


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        line = f"criterion {number:2d} [{entry['outcome']}] {entry['title']}"
        if entry["detail"]:
            line += f"  -- {entry['detail']}"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# Data fixtures


@pytest.fixture(scope="session")
def data_dir() -> Path:
    ensure_breast_cancer_csv(DATA_DIR)
    return DATA_DIR


@pytest.fixture(scope="session")
def bench_names(data_dir) -> list[str]:
    names = available_benchmarks(data_dir)
    if not names:
        pytest.skip("no benchmark datasets available")
    return sorted(names)


@pytest.fixture(scope="session")
def battery(bench_names, data_dir) -> dict:
    """Deterministic experiment records, keyed by regime then dataset.

    battery["nu10"][name]  -> per-seed records at nu = 0.10, all stages
    battery["nu0"][name]   -> defence-only records on clean data
    battery["nu05"][name]  -> defence-only records at nu = 0.05
    """
    out = {
        "datasets": bench_names,
        "seeds": list(SEEDS),
        "nu10": {},
        "nu0": {},
        "nu05": {},
    }
    for name in bench_names:
        cfg = ExperimentConfig(dataset=name, data_dir=str(data_dir))
        out["nu10"][name] = [run_single(cfg, s) for s in SEEDS]
        out["nu0"][name] = [
            run_single(cfg.with_nu(0.0), s, with_flip=False, with_baselines=False)
            for s in SEEDS
        ]
        out["nu05"][name] = [
            run_single(cfg.with_nu(0.05), s, with_flip=False, with_baselines=False)
            for s in SEEDS
        ]
    return out
