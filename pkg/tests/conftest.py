import itertools
import re

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(202406)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One verdict line per acceptance criterion when any of them ran."""
    verdicts = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = re.search(r"test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m is None:
                continue
            if status == "passed" and getattr(rep, "when", "call") != "call":
                continue
            num = int(m.group(1))
            if status in ("failed", "error"):
                verdicts[num] = "FAIL"
            else:
                verdicts.setdefault(num, "PASS")
    if verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for num in sorted(verdicts):
            terminalreporter.write_line(f"criterion {num:02d}: {verdicts[num]}")


def enumerate_vertices_bruteforce(A, b, tol=1e-9):
    """All vertices of {v: Av <= b} by trying every dim-subset of rows.

    Exponential; test oracle only.  Assumes the polytope is bounded.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    m, d = A.shape
    verts = []
    for rows in itertools.combinations(range(m), d):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        v = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ v <= b + tol):
            if not any(np.linalg.norm(v - w) < 1e-8 for w in verts):
                verts.append(v)
    return np.array(verts)


def random_cut_box(rng, dim, ncuts, margin=0.2):
    """Unit box [-1,1]^dim with random halfspace cuts that keep 0 feasible."""
    A = np.vstack([np.eye(dim), -np.eye(dim)])
    b = np.ones(2 * dim)
    for _ in range(ncuts):
        a = rng.normal(size=dim)
        a /= np.linalg.norm(a)
        A = np.vstack([A, a])
        b = np.append(b, margin + rng.uniform(0.0, 1.0))
    return A, b
