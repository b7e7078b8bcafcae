import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyflow.lp import SolveStatus, simplex_solve

from conftest import enumerate_vertices_bruteforce, random_cut_box


def unit_square():
    A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    b = np.array([1.0, 0.0, 1.0, 0.0])
    return A, b


def test_max_x_over_unit_square():
    A, b = unit_square()
    sol = simplex_solve([1.0, 0.0], A, b, maximize=True)
    assert sol.optimal
    assert sol.objective == pytest.approx(1.0, abs=1e-9)
    assert np.all(A @ sol.x <= b + 1e-9)


def test_triangle_matches_vertex_enumeration():
    # conv{(0,0),(1,0),(0,1)}: x >= 0, y >= 0, x + y <= 1
    A = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
    b = np.array([0.0, 0.0, 1.0])
    verts = enumerate_vertices_bruteforce(A, b)
    assert len(verts) == 3
    sol = simplex_solve([1.0, 1.0], A, b, maximize=True)
    assert sol.optimal
    assert sol.objective == pytest.approx(max(verts @ [1.0, 1.0]), abs=1e-9)
    assert sol.objective == pytest.approx(1.0, abs=1e-9)


def test_infeasible():
    A = np.array([[1.0], [-1.0]])
    b = np.array([0.0, -1.0])  # x <= 0 and x >= 1
    sol = simplex_solve([1.0], A, b, maximize=True)
    assert sol.status is SolveStatus.INFEASIBLE
    assert sol.x is None


def test_unbounded():
    A = np.array([[-1.0]])
    b = np.array([0.0])  # x >= 0
    sol = simplex_solve([1.0], A, b, maximize=True)
    assert sol.status is SolveStatus.UNBOUNDED


def test_minimize_direction():
    A, b = unit_square()
    sol = simplex_solve([1.0, 0.0], A, b, maximize=False)
    assert sol.objective == pytest.approx(0.0, abs=1e-9)


def test_deterministic_repeat():
    A, b = unit_square()
    s1 = simplex_solve([0.3, -0.7], A, b, maximize=True)
    s2 = simplex_solve([0.3, -0.7], A, b, maximize=True)
    assert np.array_equal(s1.x, s2.x)
    assert s1.objective == s2.objective


def test_degenerate_duplicated_rows_terminate():
    A, b = unit_square()
    A = np.vstack([A, A[0], A[0]])
    b = np.concatenate([b, [1.0, 1.0]])
    sol = simplex_solve([1.0, 1.0], A, b, maximize=True)
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0, abs=1e-9)


def test_negative_rhs_needs_phase1():
    # x >= 2, x <= 5: feasible only through artificial variables
    A = np.array([[-1.0], [1.0]])
    b = np.array([-2.0, 5.0])
    sol = simplex_solve([1.0], A, b, maximize=False)
    assert sol.optimal
    assert sol.objective == pytest.approx(2.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    dim=st.integers(min_value=2, max_value=3),
    ncuts=st.integers(min_value=0, max_value=4),
    seed=st.integers(min_value=0, max_value=10_000),
)
def test_optimum_matches_vertex_oracle(dim, ncuts, seed):
    rng = np.random.default_rng(seed)
    A, b = random_cut_box(rng, dim, ncuts)
    c = rng.normal(size=dim)
    verts = enumerate_vertices_bruteforce(A, b)
    assert len(verts) >= dim + 1
    sol = simplex_solve(c, A, b, maximize=True)
    assert sol.optimal
    assert sol.objective == pytest.approx(float(np.max(verts @ c)), abs=1e-9)
    # status=Optimal implies feasibility within tolerance
    assert np.all(A @ sol.x <= b + 1e-9)
