import math

import numpy as np
import pytest

from protoclr.core import RngStream


def central_diff(f, x, h=1e-5):
    """Independent finite-difference oracle (does not use the package helper)."""
    x = np.array(x, dtype=float)
    out = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        up = f(x)
        x[i] = orig - h
        down = f(x)
        x[i] = orig
        out[i] = (up - down) / (2 * h)
    return out


def rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / scale


def brute_supcon(z, labels, tau, weighting="inverse_positives"):
    """Loop-by-loop sum over anchors, positives and denominators."""
    total = 0.0
    n = len(z)
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        denom = sum(math.exp(np.dot(z[i], z[a]) / tau) for a in range(n) if a != i)
        w = 1.0 / len(positives) if weighting == "inverse_positives" else 1.0
        for p in positives:
            total -= w * math.log(math.exp(np.dot(z[i], z[p]) / tau) / denom)
    return total


def brute_protoclr(z, labels, tau, weighting="uniform"):
    classes = sorted(set(int(y) for y in labels))
    cents = {c: np.mean([z[j] for j in range(len(z)) if labels[j] == c], axis=0) for c in classes}
    total = 0.0
    for i in range(len(z)):
        size = sum(1 for y in labels if y == labels[i])
        w = 1.0 if weighting == "uniform" else 1.0 / (size - 1)
        num = math.exp(np.dot(z[i], cents[int(labels[i])]) / tau)
        den = sum(math.exp(np.dot(z[i], cents[c]) / tau) for c in classes)
        total -= w * math.log(num / den)
    return total


@pytest.fixture
def four_points():
    z = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return z, np.array([0, 0, 1, 1])


@pytest.fixture
def rng():
    return RngStream(1234)


def unit_rows(rng, n, d):
    g = rng.normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


# One "PASS/FAIL criterion N: ..." line per acceptance check, echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
