import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlfiber.benchmarks import hemmecke_design, independence_design, jobsat_4x4
from mlfiber.core import (
    INT64_MAX,
    ConvergenceError,
    DesignMatrix,
    DimensionError,
    IntegerOverflowError,
    chi_square,
    chi_square_statistic,
    fit_expected_table,
    in_fiber,
    is_feasible,
    sufficient_statistic,
)
from mlfiber.textio import MatrixFormatError, format_matrix, parse_matrix, read_vector, write_vector

U = (10, 0, 0, 2, 0, 3, 0, 40, 10, 0, 2, 0, 0, 3, 40, 0)
M = (1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0)


def closed_form_independence(rows, cols):
    N = sum(rows)
    return np.array([r * c / N for r in rows for c in cols])


# -- design matrix and statistics ---------------------------------------------------

def test_jobsat_margins():
    A = jobsat_4x4().A
    assert sufficient_statistic(A, U) == (12, 43, 12, 43, 20, 6, 42, 42)


def test_zero_vector_maps_to_zero():
    A = independence_design(3, 4)
    assert sufficient_statistic(A, [0] * 12) == (0,) * 7


def test_hemmecke_start_statistic():
    assert sufficient_statistic(hemmecke_design(1), (0, 1, 0, 0, 1, 0)) == (0, 0, 1)


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        sufficient_statistic(independence_design(2, 2), [1, 2, 3])


def test_design_matrix_rejects_bad_shapes():
    with pytest.raises(ValueError):
        DesignMatrix.from_rows([])
    with pytest.raises(ValueError):
        DesignMatrix.from_rows([[1, 2], [3]])


def test_overflow_is_detected():
    A = DesignMatrix.from_rows([[1, 1]])
    with pytest.raises(IntegerOverflowError):
        sufficient_statistic(A, [INT64_MAX, 1])
    A = DesignMatrix.from_rows([[2**40]])
    with pytest.raises(IntegerOverflowError):
        sufficient_statistic(A, [2**30])


def test_near_overflow_is_exact():
    A = DesignMatrix.from_rows([[1, 1]])
    assert sufficient_statistic(A, [INT64_MAX - 1, 1]) == (INT64_MAX,)


@pytest.mark.parametrize("x, ok", [([0, 0, 0], True), ([1, -1], False), ([], True)])
def test_is_feasible(x, ok):
    assert is_feasible(x) is ok


def test_appendix_move_leaves_orthant():
    assert not is_feasible([a + b for a, b in zip(U, M)])
    assert is_feasible([a - b for a, b in zip(U, M)])


@given(st.lists(st.integers(0, 20), min_size=9, max_size=9), st.integers(-5, 5))
def test_move_preserves_statistic(x, j):
    A = independence_design(3, 3)
    m = [1, -1, 0, -1, 1, 0, 0, 0, 0]
    y = [a + j * b for a, b in zip(x, m)]
    assert sufficient_statistic(A, y) == sufficient_statistic(A, x)


# -- IPF and chi-square ----------------------------------------------------------------

def test_ipf_matches_closed_form_jobsat():
    inst = jobsat_4x4()
    e = fit_expected_table(inst.A, inst.b)
    ref = closed_form_independence([12, 43, 12, 43], [20, 6, 42, 42])
    assert e.residual <= 1e-10
    assert np.max(np.abs(inst.A.to_numpy(float) @ e.cells - np.array(inst.b))) <= 1e-10
    assert math.isclose(e.cells[0], 20 * 12 / 110, rel_tol=1e-9)
    np.testing.assert_allclose(e.cells, ref, atol=1e-9)


@given(st.lists(st.integers(1, 30), min_size=2, max_size=4), st.lists(st.integers(1, 30), min_size=2, max_size=4))
@settings(max_examples=40)
def test_ipf_independence_closed_form(rows, cols):
    diff = sum(rows) - sum(cols)
    cols = list(cols)
    if diff > 0:
        cols[0] += diff
    else:
        rows = list(rows)
        rows[0] -= diff
    A = independence_design(len(rows), len(cols))
    e = fit_expected_table(A, list(rows) + cols)
    np.testing.assert_allclose(e.cells, closed_form_independence(rows, cols), atol=1e-9)


def test_ipf_two_by_two():
    e = fit_expected_table(independence_design(2, 2), (1, 1, 1, 1))
    np.testing.assert_allclose(e.cells, [0.5] * 4, atol=1e-12)


def test_ipf_fixed_point():
    A = independence_design(2, 3)
    e0 = np.ones(6)
    e = fit_expected_table(A, A.apply([1] * 6))
    np.testing.assert_array_equal(e.cells, e0)
    assert e.residual == 0.0


def test_ipf_zero_margin_excludes_cells():
    A = independence_design(2, 2)
    with pytest.warns(RuntimeWarning):
        e = fit_expected_table(A, (2, 0, 1, 1))
    assert e.excluded == (2, 3)
    assert e.warnings
    assert chi_square([1, 1, 0, 0], e) == pytest.approx(0.0, abs=1e-12)


def test_ipf_rejects_non_01():
    with pytest.raises(ValueError):
        fit_expected_table(hemmecke_design(1), (0, 0, 1))


def test_ipf_nonconvergence():
    A = independence_design(3, 3)
    with pytest.raises(ConvergenceError):
        fit_expected_table(A, (1, 2, 30, 10, 20, 3), tol=1e-15, max_iter=1)


def test_chi_square_examples():
    A = DesignMatrix.from_rows([[1, 1]])
    e = fit_expected_table(A, (2,))
    assert chi_square([2, 0], e) == 2.0
    assert chi_square([1, 1], e) == 0.0


def test_chi_square_of_start_independent_recomputation():
    inst = jobsat_4x4()
    e = fit_expected_table(inst.A, inst.b)
    # independent recomputation: cell (i, j) at 4*i + j, row sums b[:4], column sums b[4:]
    rowsum, colsum = inst.b[:4], inst.b[4:]
    N = sum(rowsum)
    x2 = 0.0
    for i in range(4):
        for j in range(4):
            exp = rowsum[i] * colsum[j] / N
            x2 += (U[4 * i + j] - exp) ** 2 / exp
    assert chi_square(U, e) == pytest.approx(x2, rel=1e-12)
    assert chi_square_statistic(e)(U) == pytest.approx(x2, rel=1e-12)


@given(st.lists(st.integers(0, 9), min_size=4, max_size=4))
def test_chi_square_zero_iff_equal(x):
    A = DesignMatrix.from_rows([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]])
    if any(v == 0 for v in x):
        return
    e = fit_expected_table(A, x)
    assert chi_square(x, e) == pytest.approx(0.0, abs=1e-12)
    y = list(x)
    y[0] += 1
    assert chi_square(y, e) > 0


def test_in_fiber():
    inst = jobsat_4x4()
    assert in_fiber(inst.A, inst.b, U)
    assert not in_fiber(inst.A, inst.b, [a - b for a, b in zip(U, M)][:15] + [1])


# -- text format -------------------------------------------------------------------------

def test_matrix_round_trip(tmp_path):
    rows = [[1, -2, 3], [0, 0, 7]]
    text = format_matrix(rows)
    assert text == "2 3\n1 -2 3\n0 0 7\n"
    assert parse_matrix(text) == rows
    write_vector(tmp_path / "v.txt", [4, 5])
    assert read_vector(tmp_path / "v.txt") == [4, 5]
    assert (tmp_path / "v.txt").read_bytes() == b"1 2\n4 5\n"


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("2\n1 2\n", 1),
    ("1 2\n1 2\n3 4\n", 3),
    ("1 3\n1 2\n", 2),
    ("1 2\n1 x\n", 2),
])
def test_matrix_format_errors(text, line):
    with pytest.raises(MatrixFormatError) as ei:
        parse_matrix(text)
    assert ei.value.line == line
