"""Plane-stress finite element solver and displacement dataset generation.

Bilinear quadrilaterals on a structured unit-square mesh, 2x2 Gauss quadrature
with the modulus evaluated at quadrature points, direct sparse factorization.
The left edge is fixed in x, the bottom-left corner additionally in y, and
tractions act on the right/top/bottom edges.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .container import read_container, write_container
from .grids import UniformGrid2D, bilinear_interpolate
from .randomfield import FieldSample, RandomFieldModel

Array = np.ndarray

RESIDUAL_TOL = 1e-10


class SolverError(Exception):
    pass


class DatasetGenerationError(Exception):
    pass


@dataclass(frozen=True)
class MeshSpec:
    """Structured quad mesh with nx by ny elements on the unit square."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValueError("mesh needs at least 2 elements per side")

    @property
    def node_grid(self) -> UniformGrid2D:
        return UniformGrid2D(self.nx + 1, self.ny + 1)

    @property
    def n_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1)


@dataclass(frozen=True)
class BoundaryLoad:
    """Tractions on the right/top/bottom edges; the left edge is fixed in x
    and the bottom-left corner in y."""

    traction_right: tuple[float, float] = (1.5, 0.0)
    traction_top: tuple[float, float] = (0.0, 0.0)
    traction_bottom: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        for t in (self.traction_right, self.traction_top, self.traction_bottom):
            if not np.all(np.isfinite(t)):
                raise ValueError("traction values must be finite")


def _gauss_points_2x2() -> Array:
    g = 1.0 / np.sqrt(3.0)
    return np.array([[-g, -g], [g, -g], [g, g], [-g, g]])


def _shape_gradients(xi: float, eta: float) -> Array:
    """d(N1..N4)/d(xi,eta) on the reference square, shape (2, 4)."""
    return 0.25 * np.array(
        [
            [-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)],
            [-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)],
        ]
    )


def _element_matrices(mesh: MeshSpec, nu: float) -> list[Array]:
    """Per-Gauss-point unit-modulus stiffness blocks (8x8); k_e = sum E_gp * M_gp."""
    hx, hy = 1.0 / mesh.nx, 1.0 / mesh.ny
    det_j = hx * hy / 4.0
    d_unit = (1.0 / (1.0 - nu**2)) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )
    blocks = []
    for xi, eta in _gauss_points_2x2():
        dn = _shape_gradients(xi, eta)
        dndx = dn[0] * (2.0 / hx)
        dndy = dn[1] * (2.0 / hy)
        b = np.zeros((3, 8))
        b[0, 0::2] = dndx
        b[1, 1::2] = dndy
        b[2, 0::2] = dndy
        b[2, 1::2] = dndx
        blocks.append(b.T @ d_unit @ b * det_j)
    return blocks


def _element_nodes(mesh: MeshSpec) -> Array:
    """Node ids per element, shape (n_elem, 4), counter-clockwise."""
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    i, j = i.ravel(), j.ravel()
    n0 = j * (mesh.nx + 1) + i
    return np.column_stack([n0, n0 + 1, n0 + mesh.nx + 2, n0 + mesh.nx + 1])


def _gauss_point_coords(mesh: MeshSpec) -> Array:
    """Physical coordinates of all quadrature points, shape (n_elem, 4, 2)."""
    hx, hy = 1.0 / mesh.nx, 1.0 / mesh.ny
    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    centers = np.stack(
        [(i.ravel() + 0.5) * hx, (j.ravel() + 0.5) * hy], axis=-1
    )
    offsets = _gauss_points_2x2() * np.array([hx / 2.0, hy / 2.0])
    return centers[:, None, :] + offsets[None, :, :]


def assemble_stiffness(e_field, mesh: MeshSpec, nu: float) -> sp.csr_matrix:
    """Global stiffness matrix with E evaluated at the 2x2 quadrature points.

    e_field maps (n,2) points to modulus values (a FieldSample or any callable).
    """
    if not 0.0 < nu < 0.5:
        raise ValueError(f"Poisson ratio must be in (0, 0.5), got {nu}")
    gp = _gauss_point_coords(mesh)
    e_vals = np.asarray(e_field(gp.reshape(-1, 2)), dtype=np.float64).reshape(
        -1, 4
    )
    if np.any(e_vals <= 0):
        raise SolverError("modulus field must be positive on the domain")

    blocks = _element_matrices(mesh, nu)
    k_elems = sum(
        e_vals[:, g, None, None] * blocks[g][None, :, :] for g in range(4)
    )

    enodes = _element_nodes(mesh)
    edofs = np.empty((len(enodes), 8), dtype=np.int64)
    edofs[:, 0::2] = 2 * enodes
    edofs[:, 1::2] = 2 * enodes + 1
    rows = np.repeat(edofs, 8, axis=1).ravel()
    cols = np.tile(edofs, (1, 8)).ravel()
    k = sp.coo_matrix(
        (k_elems.ravel(), (rows, cols)), shape=(2 * mesh.n_nodes, 2 * mesh.n_nodes)
    )
    return k.tocsr()


def load_vector(mesh: MeshSpec, load: BoundaryLoad) -> Array:
    """Consistent nodal loads for the edge tractions."""
    f = np.zeros(2 * mesh.n_nodes)
    nxp = mesh.nx + 1

    def add_edge(node_ids: Array, edge_len: float, traction) -> None:
        w = np.full(len(node_ids), edge_len)
        w[0] = w[-1] = edge_len / 2.0
        f[2 * node_ids] += w * traction[0]
        f[2 * node_ids + 1] += w * traction[1]

    right = np.arange(mesh.ny + 1) * nxp + mesh.nx
    top = np.arange(nxp) + mesh.ny * nxp
    bottom = np.arange(nxp)
    add_edge(right, 1.0 / mesh.ny, load.traction_right)
    add_edge(top, 1.0 / mesh.nx, load.traction_top)
    add_edge(bottom, 1.0 / mesh.nx, load.traction_bottom)
    return f


def dirichlet_dofs(mesh: MeshSpec) -> Array:
    """Constrained dofs: u1 on the left edge, u2 at the bottom-left corner."""
    left_nodes = np.arange(mesh.ny + 1) * (mesh.nx + 1)
    return np.concatenate([2 * left_nodes, [1]])


def solve_plane_stress(e_field, mesh: MeshSpec, load: BoundaryLoad, nu: float) -> Array:
    """Solve equilibrium for one modulus field; returns nodal (u1, u2).

    Output shape is (n_nodes, 2) ordered like mesh.node_grid.points().
    """
    k = assemble_stiffness(e_field, mesh, nu)
    f = load_vector(mesh, load)
    fixed = dirichlet_dofs(mesh)

    k_bc = k.tolil()
    k_bc[fixed, :] = 0.0
    k_bc[:, fixed] = 0.0
    for d in fixed:
        k_bc[d, d] = 1.0
    f_bc = f.copy()
    f_bc[fixed] = 0.0

    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            u = spsolve(k_bc.tocsr(), f_bc)
        except (MatrixRankWarning, RuntimeError) as exc:
            raise SolverError(f"singular stiffness matrix: {exc}") from exc
    if not np.all(np.isfinite(u)):
        raise SolverError("singular stiffness matrix: solution is not finite")

    resid = np.linalg.norm(k_bc.tocsr() @ u - f_bc)
    scale = np.linalg.norm(f_bc)
    if resid > RESIDUAL_TOL * max(scale, 1.0):
        raise SolverError(
            f"linear solve residual {resid:.3e} exceeds tolerance "
            f"{RESIDUAL_TOL:.1e} (rhs norm {scale:.3e})"
        )
    return u.reshape(-1, 2)


def reaction_forces(u: Array, e_field, mesh: MeshSpec, load: BoundaryLoad, nu: float) -> Array:
    """Reactions K u - f at the constrained dofs (for equilibrium checks)."""
    k = assemble_stiffness(e_field, mesh, nu)
    f = load_vector(mesh, load)
    r = k @ u.ravel() - f
    return r[dirichlet_dofs(mesh)]


def element_center_stresses(u: Array, e_field, mesh: MeshSpec, nu: float) -> Array:
    """(sigma11, sigma22, sigma12) at element centers, shape (n_elem, 3)."""
    hx, hy = 1.0 / mesh.nx, 1.0 / mesh.ny
    dn = _shape_gradients(0.0, 0.0)
    dndx, dndy = dn[0] * (2.0 / hx), dn[1] * (2.0 / hy)
    b = np.zeros((3, 8))
    b[0, 0::2] = dndx
    b[1, 1::2] = dndy
    b[2, 0::2] = dndy
    b[2, 1::2] = dndx

    enodes = _element_nodes(mesh)
    u_elems = np.empty((len(enodes), 8))
    u_elems[:, 0::2] = u[enodes, 0]
    u_elems[:, 1::2] = u[enodes, 1]
    strains = u_elems @ b.T

    i, j = np.meshgrid(np.arange(mesh.nx), np.arange(mesh.ny))
    centers = np.stack([(i.ravel() + 0.5) * hx, (j.ravel() + 0.5) * hy], axis=-1)
    e_vals = np.asarray(e_field(centers), dtype=np.float64)
    d_unit = (1.0 / (1.0 - nu**2)) * np.array(
        [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1.0 - nu) / 2.0]]
    )
    return e_vals[:, None] * (strains @ d_unit.T)


def interpolate_displacements(u: Array, mesh: MeshSpec, points: Array) -> Array:
    """Bilinear interpolation of nodal displacements at points, shape (n, 2)."""
    vals = bilinear_interpolate(mesh.node_grid, u.T, points)
    return vals.T


def make_sensor_grid(n_per_side: int = 10) -> Array:
    """Equidistant boundary-inclusive n x n grid with the x1=0 column removed.

    Row-major (x fastest), so n=10 gives 90 points with x1 in {1/9, ..., 1}.
    """
    if n_per_side < 2:
        raise ValueError("n_per_side must be >= 2")
    pts = UniformGrid2D(n_per_side, n_per_side).points()
    return pts[pts[:, 0] > 0.0]


def _check_sensor_coords(coords: Array) -> None:
    if np.any(coords < 0.0) or np.any(coords > 1.0):
        raise ValueError("sensor coordinates must lie in the closed unit square")


@dataclass
class Snapshot:
    """One realization's displacement readings at all sensor locations."""

    sensor_coords: Array
    u_values: Array
    field_provenance: Array | None = None

    def __post_init__(self):
        if len(self.sensor_coords) != len(self.u_values):
            raise ValueError("sensor_coords and u_values must have equal length")
        _check_sensor_coords(self.sensor_coords)


@dataclass
class SnapshotDataset:
    """All displacement snapshots on a shared sensor grid plus provenance.

    displacements has shape (n_snapshots, n_sensors, 2); kl_coefficients, when
    kept, holds the generating field's KL coordinates per snapshot.
    """

    sensor_coords: Array
    displacements: Array
    kl_coefficients: Array | None = None
    fingerprint: str = ""
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.displacements.ndim != 3 or self.displacements.shape[2] != 2:
            raise ValueError("displacements must have shape (n_snapshots, n_sensors, 2)")
        if self.displacements.shape[1] != len(self.sensor_coords):
            raise ValueError("snapshot sensor count does not match sensor_coords")

    def __len__(self) -> int:
        return self.displacements.shape[0]

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_coords)

    def snapshot(self, i: int) -> Snapshot:
        prov = None if self.kl_coefficients is None else self.kl_coefficients[i]
        return Snapshot(self.sensor_coords, self.displacements[i], prov)

    def flattened(self) -> Array:
        """Snapshots as rows of length 2*n_sensors: (u1, u2) per sensor in order."""
        return self.displacements.reshape(len(self), -1)

    def save(self, path) -> None:
        meta = {
            "kind": "snapshot_dataset",
            "version": 1,
            "n_snapshots": len(self),
            "n_sensors": self.n_sensors,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "has_provenance": self.kl_coefficients is not None,
        }
        arrays = {
            "sensor_coords": self.sensor_coords,
            "displacements": self.displacements,
        }
        if self.kl_coefficients is not None:
            arrays["kl_coefficients"] = self.kl_coefficients
        write_container(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "SnapshotDataset":
        meta, arrays = read_container(path)
        if meta.get("kind") != "snapshot_dataset":
            raise ValueError(f"{path} is not a snapshot dataset file")
        return cls(
            sensor_coords=arrays["sensor_coords"],
            displacements=arrays["displacements"],
            kl_coefficients=arrays.get("kl_coefficients"),
            fingerprint=meta["fingerprint"],
            config=meta["config"],
        )

    def export_csv(self, path) -> None:
        """Plain-text export with columns snapshot_id, x1, x2, u1, u2."""
        with open(path, "w") as f:
            f.write("snapshot_id,x1,x2,u1,u2\n")
            for s in range(len(self)):
                for (x1, x2), (u1, u2) in zip(self.sensor_coords, self.displacements[s]):
                    f.write(f"{s},{x1:.17g},{x2:.17g},{u1:.17g},{u2:.17g}\n")


def _solve_snapshot(args) -> tuple[Array, Array]:
    model, mesh, load, sensors, nu, seed_seq, index = args
    rng = np.random.default_rng(seed_seq)
    xi = rng.standard_normal(model.n_terms)
    sample = FieldSample(model, xi)
    try:
        u = solve_plane_stress(sample, mesh, load, nu)
    except SolverError as exc:
        raise DatasetGenerationError(f"snapshot {index}: {exc}") from exc
    return interpolate_displacements(u, mesh, sensors), xi


def generate_dataset(
    model: RandomFieldModel,
    mesh: MeshSpec,
    load: BoundaryLoad,
    sensors: Array,
    n_snapshots: int,
    seed: int,
    nu: float = 0.3,
    n_workers: int = 1,
    store_provenance: bool = True,
    fingerprint: str = "",
    config: dict | None = None,
) -> SnapshotDataset:
    """Draw n_snapshots independent fields, solve each, read out at the sensors.

    Snapshot i always uses the i-th spawned seed, so results are bit-identical
    for any n_workers.
    """
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be >= 1")
    sensors = np.asarray(sensors, dtype=np.float64)
    seeds = np.random.SeedSequence(seed).spawn(n_snapshots)
    tasks = [
        (model, mesh, load, sensors, nu, seeds[i], i) for i in range(n_snapshots)
    ]
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_solve_snapshot, tasks, chunksize=8))
    else:
        results = [_solve_snapshot(t) for t in tasks]

    displacements = np.stack([r[0] for r in results])
    coeffs = np.stack([r[1] for r in results]) if store_provenance else None
    return SnapshotDataset(
        sensor_coords=sensors,
        displacements=displacements,
        kl_coefficients=coeffs,
        fingerprint=fingerprint,
        config=config or {},
    )
