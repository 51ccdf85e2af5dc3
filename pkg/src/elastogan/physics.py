"""Equilibrium residual and boundary discrepancies induced by the generators.

The displacement and modulus networks are composed with the plane-stress
operator at collocation points; the squared residuals and boundary-condition
discrepancies become penalty terms of the generator loss. Expressions are
written with plain arithmetic so they accept tape Vars (training) or floats
(oracles) alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape
from .fem import BoundaryLoad
from .grids import UniformGrid2D, parse_grid_spec
from .network import Jet2

Array = np.ndarray

BOUNDARY_NAMES = ("gamma1", "gamma2", "gamma3", "gamma4", "corner")


@dataclass(frozen=True)
class ElasticityConstants:
    nu: float = 0.3

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"Poisson ratio must be in (0, 0.5), got {self.nu}")


@dataclass(frozen=True)
class BoundaryCondition:
    """Collocation points of one boundary-condition term."""

    name: str
    points: Array
    normal: tuple[float, float] | None = None

    def __post_init__(self):
        if self.name not in BOUNDARY_NAMES:
            raise ValueError(f"unknown boundary tag {self.name!r}")


@dataclass(frozen=True)
class CollocationSet:
    """Interior and per-boundary collocation points; forcing is zero."""

    interior_points: Array
    boundary: tuple[BoundaryCondition, ...]

    @property
    def n_interior(self) -> int:
        return len(self.interior_points)


def make_collocation(
    interior: str | Array = "10x10", n_boundary: int = 10
) -> CollocationSet:
    """Standard collocation layout: an equidistant boundary-inclusive interior
    grid plus n_boundary equidistant points per boundary and the corner pin."""
    if isinstance(interior, str):
        nx, ny = parse_grid_spec(interior)
        pts = UniformGrid2D(nx, ny).points()
    else:
        pts = np.asarray(interior, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("interior points must be an (n, 2) array")
    if n_boundary < 2:
        raise ValueError("need at least 2 points per boundary")
    s = np.linspace(0.0, 1.0, n_boundary)
    zeros = np.zeros(n_boundary)
    ones = np.ones(n_boundary)
    boundary = (
        BoundaryCondition("gamma1", np.column_stack([zeros, s]), (-1.0, 0.0)),
        BoundaryCondition("gamma2", np.column_stack([ones, s]), (1.0, 0.0)),
        BoundaryCondition("gamma3", np.column_stack([s, ones]), (0.0, 1.0)),
        BoundaryCondition("gamma4", np.column_stack([s, zeros]), (0.0, -1.0)),
        BoundaryCondition("corner", np.array([[0.0, 0.0]])),
    )
    return CollocationSet(interior_points=pts, boundary=boundary)


def pde_residual(u_jets, e_jet: Jet2, c: ElasticityConstants):
    """Both components of the expanded equilibrium residual div(sigma) = 0.

    u_jets holds the (u1, u2) jets, e_jet the modulus jet, all at a shared
    input. Second derivatives of the modulus are not needed.
    """
    u1, u2 = u_jets
    nu = c.nu
    e, e_1, e_2 = e_jet.value, e_jet.d1[0], e_jet.d1[1]
    u1_1, u1_2 = u1.d1
    u2_1, u2_2 = u2.d1
    u1_11, u1_12, u1_22 = u1.d2
    u2_11, u2_12, u2_22 = u2.d2

    shear = 0.5 * (1.0 - nu)
    r1 = (
        shear * (e_2 * (u1_2 + u2_1) + e * (u1_22 + u2_12))
        + e_1 * (u1_1 + nu * u2_2)
        + e * (u1_11 + nu * u2_12)
    )
    r2 = (
        shear * (e_1 * (u1_2 + u2_1) + e * (u1_12 + u2_11))
        + e_2 * (nu * u1_1 + u2_2)
        + e * (nu * u1_12 + u2_22)
    )
    return r1, r2


def plane_stress_components(u_jets, e_jet: Jet2, c: ElasticityConstants):
    """(sigma11, sigma22, sigma12) from first-order jets."""
    u1, u2 = u_jets
    nu = c.nu
    e = e_jet.value
    axial = e * (1.0 / (1.0 - nu**2))
    s11 = axial * (u1.d1[0] + nu * u2.d1[1])
    s22 = axial * (nu * u1.d1[0] + u2.d1[1])
    s12 = e * (1.0 / (2.0 * (1.0 + nu))) * (u1.d1[1] + u2.d1[0])
    return s11, s22, s12


def bc_discrepancies(
    u_jets,
    e_jet: Jet2,
    which_boundary: str,
    c: ElasticityConstants,
    load: BoundaryLoad = BoundaryLoad(),
):
    """Discrepancy components of one boundary condition at a shared input.

    gamma1 returns (u1,), the corner (u2,); the traction boundaries return the
    relevant stress components minus the applied traction.
    """
    if which_boundary not in BOUNDARY_NAMES:
        raise ValueError(f"unknown boundary tag {which_boundary!r}")
    u1, u2 = u_jets
    if which_boundary == "gamma1":
        return (u1.value,)
    if which_boundary == "corner":
        return (u2.value,)
    s11, s22, s12 = plane_stress_components(u_jets, e_jet, c)
    if which_boundary == "gamma2":
        tx, ty = load.traction_right
        return (s11 - tx, s12 - ty)
    if which_boundary == "gamma3":
        tx, ty = load.traction_top
        return (s22 - ty, s12 - tx)
    # gamma4: outward normal (0, -1) flips the traction sign
    tx, ty = load.traction_bottom
    return (s22 + ty, s12 + tx)


def _paired_inputs(points: Array, noise: Array) -> Array:
    """(point, noise) product rows, noise-major: row = j * n_points + i."""
    n_pts = len(points)
    n_noise = len(noise)
    return np.concatenate(
        [np.tile(points, (n_noise, 1)), np.repeat(noise, n_pts, axis=0)], axis=1
    )


def loss_pde(gen_u, gen_e, colloc: CollocationSet, noise: Array,
             c: ElasticityConstants, forcing=None):
    """Mean squared equilibrium residual over (collocation point, noise) pairs.

    Each noise sample drives both generators at every interior point, so one
    sample is one coherent field pair. Returns a tape scalar.
    """
    noise = np.atleast_2d(noise)
    x = _paired_inputs(colloc.interior_points, noise)
    u_jets = gen_u.forward_jet_batch(x, order=2)
    e_jet = gen_e.forward_jet_batch(x, order=1)[0]
    r1, r2 = pde_residual(u_jets, e_jet, c)
    if forcing is not None:
        f = forcing(x[:, :2])
        r1 = r1 - f[:, 0]
        r2 = r2 - f[:, 1]
    return tape.vmean(r1 * r1 + r2 * r2)


def loss_bc(gen_u, gen_e, colloc: CollocationSet, noise: Array,
            c: ElasticityConstants, load: BoundaryLoad = BoundaryLoad()):
    """Sum over boundary conditions of the mean squared discrepancy.

    All boundary points are evaluated in one jet batch; per-condition rows are
    then sliced out, so the noise layout matches loss_pde.
    """
    noise = np.atleast_2d(noise)
    all_points = np.concatenate([bc.points for bc in colloc.boundary])
    n_all = len(all_points)
    n_noise = len(noise)
    x = _paired_inputs(all_points, noise)
    u_jets = gen_u.forward_jet_batch(x, order=1)
    e_jet = gen_e.forward_jet_batch(x, order=1)[0]

    def rows(lo: int, hi: int) -> Array:
        return (
            np.arange(n_noise)[:, None] * n_all + np.arange(lo, hi)[None, :]
        ).ravel()

    total = None
    offset = 0
    for bc in colloc.boundary:
        idx = rows(offset, offset + len(bc.points))
        offset += len(bc.points)
        sub_u = tuple(
            Jet2(j.value[idx], (j.d1[0][idx], j.d1[1][idx]), j.d2) for j in u_jets
        )
        sub_e = Jet2(e_jet.value[idx], (e_jet.d1[0][idx], e_jet.d1[1][idx]), e_jet.d2)
        comps = bc_discrepancies(sub_u, sub_e, bc.name, c, load)
        sq = comps[0] * comps[0]
        for comp in comps[1:]:
            sq = sq + comp * comp
        term = tape.vmean(sq)
        total = term if total is None else total + term
    return total
