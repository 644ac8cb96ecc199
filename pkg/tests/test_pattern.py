import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lgcpkit.errors import DimensionError, ParseError
from lgcpkit.pattern import (GridSpec, Point, PointPattern, Window, aggregate_counts, cell_center,
                             grid_counts, read_pattern, write_pattern)

UNIT = Window(0.0, 1.0, 0.0, 1.0)


def test_window_rejects_empty_extent():
    with pytest.raises(ValueError):
        Window(1.0, 1.0, 0.0, 1.0)


def test_point_must_be_finite():
    with pytest.raises(ValueError):
        Point(float("nan"), 0.0)


def test_grid_counts_empty():
    c = grid_counts(PointPattern.empty(UNIT), GridSpec(4, 5, UNIT))
    assert c.as_array().shape == (4, 5)
    assert c.total() == 0


def test_grid_counts_single_cell():
    p = PointPattern([0.5], [0.5], UNIT)
    assert grid_counts(p, GridSpec(1, 1, UNIT)).as_array().tolist() == [[1]]


def test_grid_counts_large_surrogate():
    # same size as a 7416-tree plot on a 50x100 lattice
    w = Window(0.0, 1000.0, 0.0, 500.0)
    rng = np.random.default_rng(3)
    p = PointPattern(rng.uniform(0, 1000, 7416), rng.uniform(0, 500, 7416), w)
    assert grid_counts(p, GridSpec(50, 100, w)).total() == 7416


def test_boundary_ties_go_to_larger_index():
    g = GridSpec(2, 2, UNIT)
    p = PointPattern([0.5, 1.0, 0.0], [0.5, 1.0, 0.0], UNIT)
    c = grid_counts(p, g).as_array()
    # (0.5, 0.5) is shared by all four cells -> top-right; (1, 1) stays in the last cell
    assert c.tolist() == [[1, 0], [0, 2]]


def test_window_mismatch():
    p = PointPattern([0.5], [0.5], UNIT)
    with pytest.raises(DimensionError):
        grid_counts(p, GridSpec(2, 2, Window(0, 2, 0, 1)))


@pytest.mark.parametrize("window,shape,ij,expected", [
    (UNIT, (1, 1), (0, 0), (0.5, 0.5)),
    (UNIT, (2, 2), (0, 0), (0.25, 0.25)),
    (Window(0, 2, 0, 1), (1, 2), (0, 1), (1.5, 0.5)),
])
def test_cell_center(window, shape, ij, expected):
    c = cell_center(GridSpec(*shape, window), *ij)
    assert (c.x, c.y) == pytest.approx(expected)


def test_cell_center_out_of_range():
    with pytest.raises(IndexError):
        cell_center(GridSpec(2, 2, UNIT), 2, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 300), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_partition_and_refinement(n, k_row, k_col, seed):
    rng = np.random.default_rng(seed)
    p = PointPattern(rng.random(n), rng.random(n), UNIT)
    fine = grid_counts(p, GridSpec(2 * k_row, 2 * k_col, UNIT))
    coarse = grid_counts(p, GridSpec(k_row, k_col, UNIT))
    assert fine.total() == n
    assert np.array_equal(aggregate_counts(fine, 2).counts, coarse.counts)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9))
def test_cell_center_inside_its_cell(n_row, n_col):
    g = GridSpec(n_row, n_col, Window(-1.0, 2.5, 0.3, 0.9))
    for i in range(n_row):
        for j in range(n_col):
            c = cell_center(g, i, j)
            assert g.cell_index(c.x, c.y) == i * n_col + j


def test_read_header_only(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x,y\n")
    assert read_pattern(f, UNIT).n == 0


def test_read_marks(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("x,y,leaf\n0.1,0.2,1.5\n0.3,0.4,2\n0.5,0.6,-1\n")
    p = read_pattern(f, UNIT)
    assert p.n == 3
    assert list(p.marks) == ["leaf"]
    assert p.marks["leaf"].tolist() == [1.5, 2.0, -1.0]


def test_roundtrip_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    p = PointPattern(rng.random(20), rng.random(20), UNIT,
                     marks={"leaf": rng.normal(size=20), "freq": rng.integers(0, 9, 20)})
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    write_pattern(p, a)
    q = read_pattern(a)
    write_pattern(q, b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(q.x, p.x) and np.array_equal(q.y, p.y)
    assert np.array_equal(q.marks["leaf"], p.marks["leaf"])


@pytest.mark.parametrize("body,line", [
    ("x,y\n0.1,0.2\n0.3\n", 3),
    ("x,y\n0.1,nan\n", 2),
    ("x,y\n0.1,0.2\n1.5,0.2\n", 3),
    ("x,y\n0.1,abc\n", 2),
])
def test_parse_errors_carry_line(tmp_path, body, line):
    f = tmp_path / "p.csv"
    f.write_text(body)
    with pytest.raises(ParseError) as exc:
        read_pattern(f, UNIT)
    assert exc.value.line == line
