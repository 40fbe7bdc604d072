"""Discrete spatial domain and the variable-coefficient elliptic operator.

Interior-node representation of homogeneous Dirichlet problems on intervals
and axis-aligned rectangles.  The stiffness matrix comes from piecewise
multilinear elements (hats in 1D, bilinear quads in 2D) with the coefficient
matrix frozen at each cell midpoint; the mass matrix is lumped to the diagonal
of cell-measure shares, which keeps nodal damping solves scalar.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

ELLIPTICITY_TOL = 1e-12

# Reference Q1 matrices on the unit square, node order
# (0,0), (1,0), (0,1), (1,1).  Sxx = int dxNi dxNj, Syy = int dyNi dyNj,
# SXY_SYM = int (dxNi dyNj + dyNi dxNj); physical scaling is (hy/hx), (hx/hy)
# and 1 respectively.
_SXX = np.array(
    [
        [2.0, -2.0, 1.0, -1.0],
        [-2.0, 2.0, -1.0, 1.0],
        [1.0, -1.0, 2.0, -2.0],
        [-1.0, 1.0, -2.0, 2.0],
    ]
) / 6.0
_SYY = np.array(
    [
        [2.0, 1.0, -2.0, -1.0],
        [1.0, 2.0, -1.0, -2.0],
        [-2.0, -1.0, 2.0, 1.0],
        [-1.0, -2.0, 1.0, 2.0],
    ]
) / 6.0
_A_XI = np.array([-0.5, 0.5, -0.5, 0.5])
_B_ETA = np.array([-0.5, -0.5, 0.5, 0.5])
_SXY = np.outer(_A_XI, _B_ETA)
_SXY_SYM = _SXY + _SXY.T


class EllipticityError(ValueError):
    """Coefficient matrix failed the uniform ellipticity check at a point."""


@dataclass(frozen=True)
class Grid:
    """Uniform interior-node grid on an interval or rectangle.

    Boundary nodes carry the homogeneous Dirichlet value and are never
    stored; ``spacing[k] * (interior_counts[k] + 1) == lengths[k]``.
    """

    dim: int
    lengths: tuple[float, ...]
    interior_counts: tuple[int, ...]
    spacing: tuple[float, ...]

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.interior_counts))

    @property
    def measure(self) -> float:
        """Measure of the full domain."""
        return float(np.prod(self.lengths))

    def node_coords(self) -> np.ndarray:
        """Interior node coordinates, shape (n_nodes,) in 1D, (n_nodes, 2) in 2D."""
        if self.dim == 1:
            (n,) = self.interior_counts
            (h,) = self.spacing
            return (np.arange(1, n + 1)) * h
        nx, ny = self.interior_counts
        hx, hy = self.spacing
        x = np.arange(1, nx + 1) * hx
        y = np.arange(1, ny + 1) * hy
        X, Y = np.meshgrid(x, y)  # shape (ny, nx); flat index j*nx + i
        return np.column_stack([X.ravel(), Y.ravel()])


def build_grid(dim: int, lengths, interior_counts) -> Grid:
    """Build a Dirichlet grid; lengths/counts may be scalars or per-axis sequences."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    lengths_t = tuple(float(v) for v in np.atleast_1d(lengths))
    counts_t = tuple(int(v) for v in np.atleast_1d(interior_counts))
    if len(lengths_t) != dim or len(counts_t) != dim:
        raise ValueError(
            f"need {dim} lengths and counts, got {len(lengths_t)} and {len(counts_t)}"
        )
    if any(L <= 0 for L in lengths_t):
        raise ValueError(f"lengths must be positive, got {lengths_t}")
    if any(n < 1 for n in counts_t):
        raise ValueError(f"interior counts must be >= 1, got {counts_t}")
    spacing = tuple(L / (n + 1) for L, n in zip(lengths_t, counts_t))
    return Grid(dim=dim, lengths=lengths_t, interior_counts=counts_t, spacing=spacing)


@dataclass(frozen=True)
class GridFunction:
    """Nodal field on the interior of a grid; values frozen after construction."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(
                f"values shape {vals.shape} does not match grid with "
                f"{self.grid.n_nodes} interior nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)


def sample_function(grid: Grid, fn) -> GridFunction:
    """Sample a callable at interior nodes: fn(x) in 1D, fn(x, y) in 2D."""
    coords = grid.node_coords()
    if grid.dim == 1:
        return GridFunction(grid, np.asarray(fn(coords), dtype=float))
    return GridFunction(grid, np.asarray(fn(coords[:, 0], coords[:, 1]), dtype=float))


class CoefficientField:
    """Symmetric coefficient matrix A(x) with a declared ellipticity floor.

    ``entries(points)`` receives cell midpoints of shape (ncells, dim) and
    returns either per-point scalars (isotropic, meaning a(x)*I) of shape
    (ncells,) or full symmetric matrices of shape (ncells, 2, 2).
    """

    def __init__(self, entries, ellipticity_lower: float):
        if ellipticity_lower <= 0:
            raise ValueError("ellipticity_lower must be positive")
        self.entries = entries
        self.ellipticity_lower = float(ellipticity_lower)

    @classmethod
    def identity(cls) -> "CoefficientField":
        return cls.constant(1.0)

    @classmethod
    def constant(cls, value) -> "CoefficientField":
        """Constant coefficient: scalar a (isotropic) or a symmetric 2x2 matrix."""
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 0:
            a = float(arr)
            return cls(lambda pts: np.full(len(pts), a), ellipticity_lower=a)
        if arr.shape != (2, 2):
            raise ValueError("constant coefficient must be scalar or 2x2")
        if abs(arr[0, 1] - arr[1, 0]) > ELLIPTICITY_TOL:
            raise ValueError("constant coefficient matrix must be symmetric")
        eigmin = float(np.linalg.eigvalsh(arr)[0])
        return cls(
            lambda pts: np.broadcast_to(arr, (len(pts), 2, 2)).copy(),
            ellipticity_lower=eigmin,
        )

    @classmethod
    def from_callable(cls, fn, ellipticity_lower: float) -> "CoefficientField":
        return cls(fn, ellipticity_lower)


@dataclass(frozen=True)
class DiscreteOperator:
    """Assembled stiffness (sparse symmetric) and lumped mass weights."""

    grid: Grid
    stiffness: sp.csr_matrix
    lumped_mass: np.ndarray
    ellipticity_lower: float
    boundary_mass: float = field(default=0.0)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Stiffness matvec K @ values."""
        return self.stiffness @ values


@functools.lru_cache(maxsize=32)
def _cell_topology(grid: Grid):
    """Corner interior-node indices per cell (-1 for boundary corners) and midpoints."""
    if grid.dim == 1:
        (n,) = grid.interior_counts
        (h,) = grid.spacing
        cells = np.arange(n + 1)
        corners = np.stack([cells - 1, cells], axis=1)  # interior indices, -1/-n invalid
        corners = np.where((corners >= 0) & (corners < n), corners, -1)
        mids = ((cells + 0.5) * h).reshape(-1, 1)
        return corners, mids
    nx, ny = grid.interior_counts
    hx, hy = grid.spacing
    cx, cy = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1))
    cx = cx.ravel()
    cy = cy.ravel()

    def node(ix, iy):
        valid = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        return np.where(valid, iy * nx + ix, -1)

    corners = np.stack(
        [node(cx - 1, cy - 1), node(cx, cy - 1), node(cx - 1, cy), node(cx, cy)],
        axis=1,
    )
    mids = np.column_stack([(cx + 0.5) * hx, (cy + 0.5) * hy])
    return corners, mids


def _coefficient_at_midpoints(grid: Grid, coeff: CoefficientField, mids: np.ndarray):
    """Evaluate and validate A at cell midpoints; returns (a11, a12, a22)."""
    vals = np.asarray(coeff.entries(mids), dtype=float)
    ncells = len(mids)
    omega = coeff.ellipticity_lower
    if vals.shape == (ncells,):
        bad = vals < omega - ELLIPTICITY_TOL
        if np.any(bad):
            k = int(np.argmax(bad))
            raise EllipticityError(
                f"coefficient {vals[k]:.6g} below ellipticity floor {omega:.6g} "
                f"at quadrature point {tuple(mids[k])}"
            )
        zeros = np.zeros(ncells)
        return vals, zeros, vals.copy()
    if vals.shape != (ncells, 2, 2):
        raise ValueError(
            f"coefficient entries returned shape {vals.shape}; expected "
            f"({ncells},) or ({ncells}, 2, 2)"
        )
    asym = np.abs(vals[:, 0, 1] - vals[:, 1, 0])
    if np.any(asym > ELLIPTICITY_TOL):
        k = int(np.argmax(asym))
        raise EllipticityError(
            f"coefficient matrix not symmetric at quadrature point {tuple(mids[k])}: "
            f"a12={vals[k, 0, 1]!r}, a21={vals[k, 1, 0]!r}"
        )
    a11, a12, a22 = vals[:, 0, 0], vals[:, 0, 1], vals[:, 1, 1]
    # Closed-form smallest eigenvalue of the symmetric 2x2.
    mean = 0.5 * (a11 + a22)
    rad = np.sqrt((0.5 * (a11 - a22)) ** 2 + a12**2)
    eigmin = mean - rad
    bad = eigmin < omega - ELLIPTICITY_TOL
    if np.any(bad):
        k = int(np.argmax(bad))
        raise EllipticityError(
            f"smallest eigenvalue {eigmin[k]:.6g} below ellipticity floor "
            f"{omega:.6g} at quadrature point {tuple(mids[k])}"
        )
    return a11, a12, a22


def assemble(grid: Grid, coefficient_field: CoefficientField) -> DiscreteOperator:
    """Assemble the Dirichlet stiffness matrix and lumped mass from cell quadrature.

    A(x) is sampled once per cell at the midpoint; the multilinear shape
    gradients are integrated exactly, which keeps the assembled matrix
    symmetric positive definite whenever A is elliptic at every midpoint.
    """
    corners, mids = _cell_topology(grid)
    n = grid.n_nodes
    if grid.dim == 1:
        (h,) = grid.spacing
        a = _coefficient_at_midpoints(grid, coefficient_field, mids)[0]
        local = (a / h)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
        share = h / 2.0
    else:
        hx, hy = grid.spacing
        a11, a12, a22 = _coefficient_at_midpoints(grid, coefficient_field, mids)
        local = (
            a11[:, None, None] * ((hy / hx) * _SXX)
            + a22[:, None, None] * ((hx / hy) * _SYY)
            + a12[:, None, None] * _SXY_SYM
        )
        share = hx * hy / 4.0

    k = corners.shape[1]
    rows = np.repeat(corners, k, axis=1).ravel()
    cols = np.tile(corners, (1, k)).ravel()
    data = local.reshape(len(corners), -1).ravel()
    keep = (rows >= 0) & (cols >= 0)
    stiffness = sp.coo_matrix(
        (data[keep], (rows[keep], cols[keep])), shape=(n, n)
    ).tocsr()

    lumped = np.zeros(n)
    valid = corners >= 0
    np.add.at(lumped, corners[valid], share)
    boundary_mass = grid.measure - float(lumped.sum())
    lumped.flags.writeable = False
    return DiscreteOperator(
        grid=grid,
        stiffness=stiffness,
        lumped_mass=lumped,
        ellipticity_lower=coefficient_field.ellipticity_lower,
        boundary_mass=boundary_mass,
    )


def _require_same_grid(op: DiscreteOperator, *fns: GridFunction):
    for f in fns:
        if f.grid != op.grid:
            raise ValueError("grid function does not live on the operator's grid")


def bilinear_form(op: DiscreteOperator, u: GridFunction, v: GridFunction) -> float:
    """Energy inner product u^T K v; symmetric in (u, v) by construction."""
    _require_same_grid(op, u, v)
    if u is v or u.values is v.values:
        return float(u.values @ op.apply(u.values))
    # Symmetrized evaluation makes bilinear_form(u, v) == bilinear_form(v, u)
    # bit-for-bit despite sparse matvec rounding.
    return 0.5 * (
        float(u.values @ op.apply(v.values)) + float(v.values @ op.apply(u.values))
    )


def lp_norm(op: DiscreteOperator, u: GridFunction, q: float) -> float:
    """Lumped-quadrature L^q norm (sum_i M_i |u_i|^q)^(1/q)."""
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    _require_same_grid(op, u)
    return float(np.sum(op.lumped_mass * np.abs(u.values) ** q) ** (1.0 / q))


def grad_norm(u: GridFunction) -> float:
    """Discrete H^1_0 seminorm: sqrt of the exact integral of |grad u_h|^2.

    Evaluated cell by cell on the multilinear interpolant, so it coincides
    with sqrt(u^T K u) for the identity coefficient.
    """
    grid = u.grid
    corners, _ = _cell_topology(grid)
    padded = np.concatenate([u.values, [0.0]])  # index -1 reads the Dirichlet zero
    w = padded[corners]
    if grid.dim == 1:
        (h,) = grid.spacing
        du = w[:, 1] - w[:, 0]
        return float(np.sqrt(np.sum(du * du) / h))
    hx, hy = grid.spacing
    exx = np.einsum("ci,ij,cj->c", w, _SXX, w)
    eyy = np.einsum("ci,ij,cj->c", w, _SYY, w)
    return float(np.sqrt((hy / hx) * exx.sum() + (hx / hy) * eyy.sum()))
