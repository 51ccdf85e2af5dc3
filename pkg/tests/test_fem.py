"""Plane-stress FEM solver and dataset generation."""

import numpy as np
import pytest

from elastogan.fem import (
    BoundaryLoad,
    DatasetGenerationError,
    MeshSpec,
    SnapshotDataset,
    SolverError,
    element_center_stresses,
    generate_dataset,
    interpolate_displacements,
    make_sensor_grid,
    reaction_forces,
    solve_plane_stress,
)
from elastogan.grids import UniformGrid2D
from elastogan.randomfield import FieldSample, KernelSpec, build_kl_model

NU = 0.3
E_HOM = 1.1
TRACTION = 1.5


def homogeneous(points):
    return np.full(len(points), E_HOM)


def analytic_uniaxial(points):
    s = TRACTION / E_HOM
    return np.column_stack([s * points[:, 0], -NU * s * points[:, 1]])


@pytest.fixture(scope="module")
def field_model():
    return build_kl_model(UniformGrid2D(25, 25), KernelSpec(1.0), 5, 1.0, 0.1)


def test_uniform_uniaxial_stress_is_exact():
    mesh = MeshSpec(32, 32)
    u = solve_plane_stress(homogeneous, mesh, BoundaryLoad(), NU)
    expect = analytic_uniaxial(mesh.node_grid.points())
    err = np.abs(u - expect).max()
    assert err < 1e-8, f"nodal error {err:.3e} vs analytic uniaxial solution"


def test_zero_traction_gives_zero_displacement():
    load = BoundaryLoad((0.0, 0.0), (0.0, 0.0), (0.0, 0.0))
    u = solve_plane_stress(homogeneous, MeshSpec(8, 8), load, NU)
    assert np.abs(u).max() < 1e-12


def test_global_equilibrium(field_model):
    """Reactions on the constrained dofs balance the applied traction."""
    sample = FieldSample(field_model, np.random.default_rng(0).standard_normal(5))
    mesh = MeshSpec(24, 24)
    load = BoundaryLoad()
    u = solve_plane_stress(sample, mesh, load, NU)
    r = reaction_forces(u, sample, mesh, load, NU)
    # all but the last constrained dof are u1 on the left edge
    total_x = r[:-1].sum()
    assert abs(total_x + TRACTION) < 1e-8 * TRACTION
    assert abs(r[-1]) < 1e-8  # corner u2 reaction: nothing applied in x2


def test_homogeneous_stress_field_is_constant():
    mesh = MeshSpec(16, 16)
    u = solve_plane_stress(homogeneous, mesh, BoundaryLoad(), NU)
    stresses = element_center_stresses(u, homogeneous, mesh, NU)
    expect = np.array([TRACTION, 0.0, 0.0])
    assert np.abs(stresses - expect).max() < 1e-8


def test_mesh_self_convergence_second_order(field_model):
    """Sensor-value error against a fine solve decays at ~O(h^2): the 16->64
    error over the 32->64 error should be close to its asymptotic value 5."""
    sample = FieldSample(field_model, np.random.default_rng(1).standard_normal(5))
    sensors = make_sensor_grid(10)

    def solve_at(n):
        mesh = MeshSpec(n, n)
        u = solve_plane_stress(sample, mesh, BoundaryLoad(), NU)
        return interpolate_displacements(u, mesh, sensors)

    fine = solve_at(64)
    e16 = np.abs(solve_at(16) - fine).max()
    e32 = np.abs(solve_at(32) - fine).max()
    ratio = e16 / e32
    assert 3.0 < ratio < 7.5, f"convergence ratio {ratio:.2f} not ~2nd order"


def test_nonpositive_modulus_rejected():
    with pytest.raises(SolverError):
        solve_plane_stress(lambda p: np.zeros(len(p)), MeshSpec(4, 4), BoundaryLoad(), NU)


def test_invalid_poisson_ratio_rejected():
    with pytest.raises(ValueError):
        solve_plane_stress(homogeneous, MeshSpec(4, 4), BoundaryLoad(), 0.5)


def test_sensor_grid_layout():
    s = make_sensor_grid(10)
    assert s.shape == (90, 2)
    assert np.all(s[:, 0] > 0.0)
    xs = np.unique(s[:, 0])
    assert np.abs(xs - np.arange(1, 10) / 9.0).max() < 1e-15

    s2 = make_sensor_grid(2)
    assert np.array_equal(s2, np.array([[1.0, 0.0], [1.0, 1.0]]))

    with pytest.raises(ValueError):
        make_sensor_grid(1)


def test_zero_coefficient_snapshot_matches_analytic(field_model):
    """Composes the homogeneous-solution oracle with sensor interpolation."""
    sample = FieldSample(field_model, np.zeros(5))
    mesh = MeshSpec(32, 32)
    u = solve_plane_stress(sample, mesh, BoundaryLoad(), NU)
    sensors = make_sensor_grid(10)
    got = interpolate_displacements(u, mesh, sensors)
    assert np.abs(got - analytic_uniaxial(sensors)).max() < 1e-8


def test_generate_dataset_shapes_and_determinism(tmp_path, field_model):
    sensors = make_sensor_grid(10)
    kwargs = dict(mesh=MeshSpec(8, 8), load=BoundaryLoad(), sensors=sensors,
                  n_snapshots=5, seed=42, nu=NU)
    ds1 = generate_dataset(field_model, **kwargs)
    ds2 = generate_dataset(field_model, **kwargs)
    assert ds1.displacements.shape == (5, 90, 2)
    assert ds1.kl_coefficients.shape == (5, 5)
    assert np.array_equal(ds1.displacements, ds2.displacements)

    p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
    ds1.save(p1)
    ds2.save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_generate_dataset_parallel_matches_serial(field_model):
    sensors = make_sensor_grid(4)
    kwargs = dict(mesh=MeshSpec(6, 6), load=BoundaryLoad(), sensors=sensors,
                  n_snapshots=6, seed=3, nu=NU)
    serial = generate_dataset(field_model, **kwargs, n_workers=1)
    parallel = generate_dataset(field_model, **kwargs, n_workers=2)
    assert np.array_equal(serial.displacements, parallel.displacements)
    assert np.array_equal(serial.kl_coefficients, parallel.kl_coefficients)


def test_dataset_roundtrip_and_flattening(tmp_path, field_model):
    sensors = make_sensor_grid(3)
    ds = generate_dataset(field_model, MeshSpec(4, 4), BoundaryLoad(), sensors,
                          n_snapshots=2, seed=0, nu=NU,
                          fingerprint="abc", config={"n": 2})
    path = tmp_path / "ds.bin"
    ds.save(path)
    back = SnapshotDataset.load(path)
    assert back.fingerprint == "abc"
    assert back.config == {"n": 2}
    assert np.array_equal(back.displacements, ds.displacements)

    flat = back.flattened()
    assert flat.shape == (2, 2 * len(sensors))
    assert np.array_equal(flat[0, :2], ds.displacements[0, 0])

    snap = back.snapshot(1)
    assert np.array_equal(snap.u_values, ds.displacements[1])
    assert np.array_equal(snap.field_provenance, ds.kl_coefficients[1])


def test_dataset_csv_export(tmp_path, field_model):
    sensors = make_sensor_grid(3)
    ds = generate_dataset(field_model, MeshSpec(4, 4), BoundaryLoad(), sensors,
                          n_snapshots=2, seed=0, nu=NU)
    path = tmp_path / "ds.csv"
    ds.export_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "snapshot_id,x1,x2,u1,u2"
    assert len(lines) == 1 + 2 * len(sensors)
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[3]) == ds.displacements[0, 0, 0]


def test_solver_failure_reports_snapshot_index(field_model):
    # an offset that makes the modulus negative fails on the first snapshot
    bad = build_kl_model(UniformGrid2D(5, 5), KernelSpec(1.0), 3, -5.0, 0.1)
    with pytest.raises(DatasetGenerationError, match="snapshot 0"):
        generate_dataset(bad, MeshSpec(4, 4), BoundaryLoad(), make_sensor_grid(3),
                         n_snapshots=1, seed=0, nu=NU)
