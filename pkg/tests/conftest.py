import numpy as np
import pytest

from biaslens import AuditConfig, Dataset


def make_dataset(groups, y_true, y_pred=None, split="source", attr="g", **kw):
    n = len(groups)
    y_pred = y_true if y_pred is None else y_pred
    splits = [split] * n if isinstance(split, str) else split
    return Dataset([f"r{i:06d}" for i in range(n)], y_true, y_pred, splits,
                   {attr: list(groups)}, **kw)


def binary_cells(spec, attr="g", split="source", prefix="r"):
    """Dataset from {cell: (n_pos, n_neg)} for y_true and y_pred alike."""
    groups, ys = [], []
    for cell, (pos, neg) in spec.items():
        groups += [cell] * (pos + neg)
        ys += ["pos"] * pos + ["neg"] * neg
    n = len(groups)
    return Dataset([f"{prefix}{i:06d}" for i in range(n)], ys, ys, [split] * n, {attr: groups})


@pytest.fixture
def config():
    return AuditConfig(attributes=("g",), n_permutations=200, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance as acc
    except ImportError:
        return
    if not acc.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.TITLES):
        if n not in acc.RESULTS:
            terminalreporter.write_line(f"criterion {n} ({acc.TITLES[n]}): NOT RUN")
            continue
        status, elapsed, detail = acc.RESULTS[n]
        terminalreporter.write_line(
            f"criterion {n} ({acc.TITLES[n]}): {status} [{elapsed:.2f}s] {detail}")
