"""Truncated radial / full-line meshes with a self-adjoint discrete Laplacian.

The unknowns of every discrete state live on the *free* nodes of a grid.
Homogeneous Dirichlet nodes (``r = R_max`` in radial mode, both ends of the
interval on the full line) are kept in :attr:`Grid.nodes` so that arbitrary
functions can be integrated over the whole truncated domain, but they carry
no degree of freedom.

Radial mode uses a cell-centred (finite-volume) layout: node ``r_i = i h``
owns the shell ``[r_i - h/2, r_i + h/2]`` clipped to ``[0, R_max]``.  The
quadrature weight is the exact measure of that shell in R^N and the stiffness
form sums face fluxes weighted by the face area ``|S^{N-1}| r_f^{N-1}``.  The
face at ``r = 0`` has no flux, which is the discrete form of ``u'(0) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

import numpy as np
import scipy.sparse as sp

MIN_NODES = 8


class GridMode(str, Enum):
    RADIAL = "radial"
    FULL_LINE = "full_line"


@dataclass(frozen=True)
class GridSpec:
    dimension: int
    radius: float
    n_nodes: int
    mode: GridMode = GridMode.RADIAL

    def __post_init__(self):
        object.__setattr__(self, "mode", GridMode(self.mode))

    @property
    def spacing(self) -> float:
        return self.radius / self.n_nodes


def sphere_area(dimension: int) -> float:
    """Surface measure of the unit sphere in R^N (2 for N = 1)."""
    return 2.0 * math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0)


def critical_exponent(dimension: int) -> float:
    """Sobolev exponent 2N/(N-2), or +inf for N <= 2."""
    if dimension <= 2:
        return math.inf
    return 2.0 * dimension / (dimension - 2.0)


@dataclass(frozen=True, eq=False)
class Grid:
    spec: GridSpec
    nodes: np.ndarray
    weights: np.ndarray
    free: np.ndarray
    stiffness: sp.csr_matrix
    face_coeff: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        """Coordinates of the free nodes."""
        return self.nodes[self.free]

    @property
    def quad_weights(self) -> np.ndarray:
        """Quadrature weights on the free nodes."""
        return self.weights[self.free]

    @property
    def size(self) -> int:
        return int(self.free.size)

    @property
    def mass(self) -> sp.dia_matrix:
        return sp.diags(self.quad_weights)

    def sample(self, func) -> np.ndarray:
        """Evaluate ``func(r)`` on the free nodes."""
        return np.broadcast_to(np.asarray(func(self.x), dtype=float), self.x.shape).copy()

    def extend(self, v: np.ndarray) -> np.ndarray:
        """Pad a free-node vector with the Dirichlet zeros."""
        full = np.zeros(self.nodes.size)
        full[self.free] = v
        return full


def _check_spec(spec: GridSpec, min_nodes: int) -> None:
    if spec.dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {spec.dimension}")
    if not spec.radius > 0:
        raise ValueError(f"radius must be positive, got {spec.radius}")
    if spec.n_nodes < min_nodes:
        raise ValueError(f"n_nodes must be >= {min_nodes}, got {spec.n_nodes}")
    if spec.mode is GridMode.FULL_LINE and spec.dimension != 1:
        raise ValueError("full_line mode requires dimension 1")


def build_grid(spec: GridSpec, *, min_nodes: int = MIN_NODES) -> Grid:
    """Assemble nodes, quadrature weights and the Dirichlet stiffness form.

    ``min_nodes`` may be lowered for oracle-scale instances (a handful of
    unknowns) used by brute-force checks.
    """
    _check_spec(spec, min_nodes)
    n, R = spec.n_nodes, float(spec.radius)
    h = R / n
    if spec.mode is GridMode.RADIAL:
        N = spec.dimension
        area = sphere_area(N)
        nodes = h * np.arange(n + 1)
        lo = np.clip(nodes - h / 2, 0.0, R)
        hi = np.clip(nodes + h / 2, 0.0, R)
        weights = area / N * (hi**N - lo**N)
        faces = h * (np.arange(n) + 0.5)
        face_coeff = area * faces ** (N - 1) / h
        free = np.arange(n)
    else:
        nodes = -R + h * np.arange(2 * n + 1)
        weights = np.full(nodes.size, h)
        weights[[0, -1]] = h / 2
        face_coeff = np.full(2 * n, 1.0 / h)
        free = np.arange(1, 2 * n)

    stiffness = _assemble_stiffness(face_coeff, nodes.size, free)
    return Grid(spec, nodes, weights, free, stiffness, face_coeff)


def _assemble_stiffness(face_coeff: np.ndarray, n_full: int, free: np.ndarray) -> sp.csr_matrix:
    # face k joins full nodes k and k+1
    diag = np.zeros(n_full)
    diag[:-1] += face_coeff
    diag[1:] += face_coeff
    full = sp.diags([diag, -face_coeff, -face_coeff], [0, 1, -1], format="csr")
    return full[free][:, free].tocsr()


def weighted_integral(grid: Grid, f_nodal) -> float:
    """Quadrature sum of nodal values.

    Accepts either a vector over all nodes (Dirichlet nodes included) or over
    the free nodes only; in the latter case the function is taken to vanish
    on the Dirichlet nodes.
    """
    f = np.asarray(f_nodal, dtype=float)
    if f.shape == grid.weights.shape:
        return float(grid.weights @ f)
    if f.shape == (grid.size,):
        return float(grid.quad_weights @ f)
    raise ValueError(
        f"nodal vector of length {f.size} matches neither {grid.weights.size} nodes "
        f"nor {grid.size} free nodes"
    )


def refinement_specs(
    spec: GridSpec,
    n_nodes: Iterable[int] | None = None,
    radii: Iterable[float] | None = None,
) -> list[GridSpec]:
    """Grid specs for a mesh / truncation refinement study around ``spec``."""
    out = [replace(spec, n_nodes=int(k)) for k in (n_nodes or ())]
    out += [replace(spec, radius=float(r), n_nodes=max(MIN_NODES, round(spec.n_nodes * r / spec.radius)))
            for r in (radii or ())]
    return out or [spec]
