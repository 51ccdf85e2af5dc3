"""Grid helpers and the binary container format."""

import numpy as np
import pytest

from elastogan.container import ContainerError, read_container, write_container
from elastogan.grids import UniformGrid2D, bilinear_interpolate, parse_grid_spec


def test_parse_grid_spec():
    assert parse_grid_spec("25x25") == (25, 25)
    assert parse_grid_spec(" 10x4 ") == (10, 4)
    for bad in ("25", "axb", "10x", "0x5", "1x1", "-3x4"):
        with pytest.raises(ValueError):
            parse_grid_spec(bad)


def test_grid_points_order_and_spacing():
    g = UniformGrid2D(3, 2)
    pts = g.points()
    expected = np.array(
        [[0, 0], [0.5, 0], [1, 0], [0, 1], [0.5, 1], [1, 1]], dtype=float
    )
    assert np.array_equal(pts, expected)
    assert g.n_points == 6
    assert g.spec == "3x2"


def test_trapezoid_weights_integrate_constants_and_linears():
    g = UniformGrid2D(25, 25)
    w = g.trapezoid_weights()
    assert abs(w.sum() - 1.0) < 1e-14
    pts = g.points()
    # trapezoid rule is exact for bilinear integrands
    assert abs(np.sum(w * pts[:, 0]) - 0.5) < 1e-14
    assert abs(np.sum(w * pts[:, 0] * pts[:, 1]) - 0.25) < 1e-14


def test_row_and_point_lookup():
    g = UniformGrid2D(5, 5)
    row = g.row_indices(0.75)
    assert np.array_equal(row, np.arange(5) + 15)
    assert g.point_index(0.5, 0.25) == 5 + 2
    with pytest.raises(ValueError):
        g.row_indices(0.3)
    with pytest.raises(ValueError):
        g.point_index(0.3, 0.5)


def test_bilinear_interpolation_exact_for_bilinear_functions():
    g = UniformGrid2D(9, 7)
    pts = g.points()
    f = 2.0 + 3.0 * pts[:, 0] - pts[:, 1] + 0.5 * pts[:, 0] * pts[:, 1]
    rng = np.random.default_rng(0)
    q = rng.uniform(0, 1, size=(50, 2))
    expect = 2.0 + 3.0 * q[:, 0] - q[:, 1] + 0.5 * q[:, 0] * q[:, 1]
    got = bilinear_interpolate(g, f, q)
    assert np.abs(got - expect).max() < 1e-13


def test_bilinear_interpolation_matches_grid_values_and_stacks():
    g = UniformGrid2D(4, 4)
    vals = np.arange(2 * g.n_points, dtype=float).reshape(2, -1)
    got = bilinear_interpolate(g, vals, g.points())
    assert np.abs(got - vals).max() < 1e-12


def test_container_roundtrip_and_determinism(tmp_path):
    meta = {"kind": "demo", "n": 3, "nested": {"a": [1, 2]}}
    arrays = {
        "b": np.arange(6, dtype=float).reshape(2, 3),
        "a": np.array([1.5]),
    }
    p1, p2 = tmp_path / "x1.bin", tmp_path / "x2.bin"
    write_container(p1, meta, arrays)
    write_container(p2, meta, arrays)
    assert p1.read_bytes() == p2.read_bytes(), "identical input must give identical bytes"

    meta2, arrays2 = read_container(p1)
    assert meta2 == meta
    assert set(arrays2) == {"a", "b"}
    assert np.array_equal(arrays2["b"], arrays["b"])


def test_container_rejects_garbage(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"not a container at all")
    with pytest.raises(ContainerError):
        read_container(p)
    with pytest.raises(ContainerError):
        read_container(tmp_path / "missing.bin")


def test_container_detects_truncation(tmp_path):
    p = tmp_path / "trunc.bin"
    write_container(p, {}, {"a": np.ones(100)})
    data = p.read_bytes()
    p.write_bytes(data[:-40])
    with pytest.raises(ContainerError):
        read_container(p)
