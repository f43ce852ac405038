"""Q1 finite elements for Poisson's equation on the unit square/cube.

Homogeneous Dirichlet boundary values are eliminated, so every system is
posed on the interior nodes in lexicographic order (x fastest). All element
integrals use the tensor-product 2-point Gauss rule.
"""
import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from mpgmg.precision import FP64
from mpgmg.sparse import EllMatrix, PVector, UsageError

__all__ = ['ProblemSpec', 'StructuredGrid', 'element_stiffness',
           'assemble_stiffness', 'assemble_rhs', 'assemble_transfer',
           'exact_solution', 'nodal_l2_error', 'DEFAULT_BASE_NODES']

# Base grid nodes per dimension used when a level count is not given.
DEFAULT_BASE_NODES = {2: 9, 3: 5}

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform grid with ``nodes_per_dim`` nodes (boundary included) per
    axis."""

    nodes_per_dim: int
    dim: int = 2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise UsageError(f"dim must be 2 or 3, got {self.dim}")
        if self.nodes_per_dim < 3:
            raise UsageError("a grid needs at least 3 nodes per dimension")

    @property
    def h(self):
        return 1.0 / (self.nodes_per_dim - 1)

    @property
    def n_interior(self):
        return self.nodes_per_dim - 2

    @property
    def n_unknowns(self):
        return self.n_interior ** self.dim

    def interior_axis(self):
        return np.arange(1, self.nodes_per_dim - 1) * self.h

    def coarsened(self):
        if (self.nodes_per_dim - 1) % 2:
            raise UsageError(f"{self.nodes_per_dim} nodes cannot be coarsened")
        return StructuredGrid((self.nodes_per_dim - 1) // 2 + 1, self.dim)


@dataclass(frozen=True)
class ProblemSpec:
    """Model problem and nested grid hierarchy.

    Either ``levels`` or ``base_nodes_per_dim`` determines the hierarchy;
    the other is derived from ``finest_nodes_per_dim``. With neither given
    the base grid defaults to :data:`DEFAULT_BASE_NODES`.
    """

    dim: int = 2
    k: int = 1
    finest_nodes_per_dim: int = 65
    levels: int = None
    base_nodes_per_dim: int = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise UsageError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.k) != self.k or self.k < 1:
            raise UsageError(f"k must be a positive integer, got {self.k}")
        cells = self.finest_nodes_per_dim - 1
        levels, base = self.levels, self.base_nodes_per_dim
        if levels is None:
            if base is None:
                base = DEFAULT_BASE_NODES[self.dim]
            ratio = cells / (base - 1)
            levels = int(round(np.log2(ratio))) + 1 if ratio >= 1 else 0
        if levels < 1 or cells % 2 ** (levels - 1):
            raise UsageError(f"{self.finest_nodes_per_dim} nodes per dim do "
                             f"not fit a hierarchy of {levels} levels")
        derived = cells // 2 ** (levels - 1) + 1
        if base is not None and base != derived:
            raise UsageError(f"{self.finest_nodes_per_dim} nodes with base "
                             f"{base} is not a nested hierarchy")
        if derived < 3:
            raise UsageError(f"base grid would have {derived} nodes per dim")
        object.__setattr__(self, 'levels', levels)
        object.__setattr__(self, 'base_nodes_per_dim', derived)

    def grid(self, level):
        """Grid of ``level`` (0 is the coarsest)."""
        n = (self.base_nodes_per_dim - 1) * 2 ** level + 1
        return StructuredGrid(n, self.dim)

    def grids(self):
        return [self.grid(lvl) for lvl in range(self.levels)]

    @property
    def finest(self):
        return self.grid(self.levels - 1)


def _local_nodes(dim):
    # Local node order of a reference element, x fastest.
    return [tuple(reversed(t)) for t in itertools.product((0, 1), repeat=dim)]


def element_stiffness(dim, h):
    """Q1 element matrix ``int grad(phi_a) . grad(phi_b)`` on a cube of side
    ``h``, by 2-point Gauss quadrature."""
    nodes = _local_nodes(dim)
    K = np.zeros((len(nodes), len(nodes)))
    for q in itertools.product(_GAUSS, repeat=dim):
        xi = (np.array(q) + 1.0) / 2.0
        grads = []
        for a in nodes:
            g = np.empty(dim)
            for d in range(dim):
                g[d] = np.prod([(xi[e] if a[e] else 1.0 - xi[e])
                                if e != d else (1.0 if a[e] else -1.0)
                                for e in range(dim)])
            grads.append(g / h)
        w = (h / 2.0) ** dim
        for i, j in itertools.product(range(len(nodes)), repeat=2):
            K[i, j] += w * grads[i] @ grads[j]
    return (K + K.T) / 2.0


def stencil(dim, h):
    """Assembled row of an interior node as ``{offset: value}``.

    Contributions of the ``2**dim`` elements around the node are summed in a
    fixed order; entries for opposite offsets are set equal so the matrix is
    exactly symmetric.
    """
    K = element_stiffness(dim, h)
    nodes = _local_nodes(dim)
    out = {}
    for corner in nodes:
        # Element whose local node `corner` is the centre node.
        i = nodes.index(corner)
        for j, other in enumerate(nodes):
            off = tuple(o - c for o, c in zip(other, corner))
            out[off] = out.get(off, 0.0) + K[i, j]
    for off in sorted(out):
        neg = tuple(-o for o in off)
        if off > neg:
            out[off] = out[neg]
    return out


def _interior_index(grid):
    n = grid.n_interior
    return np.arange(n ** grid.dim).reshape((n,) * grid.dim)


def assemble_stiffness(grid):
    """Stiffness matrix on the interior nodes, as binary64 ELLPACK.

    Row width is 9 (2D) or 27 (3D); rows next to the boundary are padded.
    """
    dim, n = grid.dim, grid.n_interior
    st = stencil(dim, grid.h)
    idx = _interior_index(grid)
    # idx is indexed [z][y][x]; offsets are (dx, dy[, dz]).
    offsets = sorted(st, key=lambda o: tuple(reversed(o)))
    N = grid.n_unknowns
    vals = np.zeros((N, len(offsets)))
    cols = np.repeat(np.arange(N)[:, None], len(offsets), axis=1)
    coords = np.indices((n,) * dim).reshape(dim, -1)[::-1]  # x, y[, z]
    slot = np.zeros(N, dtype=int)
    for off in offsets:
        tgt = coords + np.array(off)[:, None]
        ok = np.all((tgt >= 0) & (tgt < n), axis=0)
        rows = np.nonzero(ok)[0]
        j = idx[tuple(tgt[::-1, ok])]
        vals[rows, slot[rows]] = st[off]
        cols[rows, slot[rows]] = j
        slot[rows] += 1
    # Padding: diagonal column with value zero (already in place).
    return EllMatrix(vals, cols, N, FP64, label=f"A[{grid.nodes_per_dim}]")


def _load_1d(grid, k):
    # int sin(k pi x) phi_i(x) dx for interior nodes, 2-point Gauss per cell.
    h, cells = grid.h, grid.nodes_per_dim - 1
    x0 = np.arange(cells) * h
    g = np.zeros(grid.nodes_per_dim)
    for q in _GAUSS:
        t = (q + 1.0) / 2.0
        f = np.sin(k * np.pi * (x0 + t * h)) * (h / 2.0)
        g[:-1] += f * (1.0 - t)
        g[1:] += f * t
    return g[1:-1]


def assemble_rhs(grid, k):
    """Load vector for ``f = dim k^2 pi^2 prod_d sin(k pi x_d)``.

    ``f`` and the Q1 basis are tensor products and so is the Gauss rule,
    so the load vector is an outer product of 1D quadrature vectors.
    """
    g = _load_1d(grid, k)
    b = g
    for _ in range(grid.dim - 1):
        b = np.multiply.outer(g, b)
    return PVector(grid.dim * (k * np.pi) ** 2 * b.ravel(), FP64)


def exact_solution(grid, k):
    """Manufactured solution sampled at the interior nodes."""
    s = np.sin(k * np.pi * grid.interior_axis())
    u = s
    for _ in range(grid.dim - 1):
        u = np.multiply.outer(s, u)
    return PVector(u.ravel(), FP64)


def _prolongation_1d(fine, coarse):
    nf, nc = fine.n_interior, coarse.n_interior
    rows, cols, vals = [], [], []
    for i in range(1, fine.nodes_per_dim - 1):
        if i % 2 == 0:
            rows.append(i - 1), cols.append(i // 2 - 1), vals.append(1.0)
            continue
        for j in ((i - 1) // 2, (i + 1) // 2):
            if 1 <= j <= coarse.nodes_per_dim - 2:
                rows.append(i - 1), cols.append(j - 1), vals.append(0.5)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


def assemble_transfer(fine, coarse):
    """Interpolation ``P`` (coarse to fine) and restriction ``R = P^T``."""
    if fine.dim != coarse.dim or fine.nodes_per_dim != 2 * (
            coarse.nodes_per_dim - 1) + 1:
        raise UsageError("grids are not one uniform refinement apart")
    p1 = _prolongation_1d(fine, coarse)
    P = p1
    for _ in range(fine.dim - 1):
        P = sp.kron(p1, P, format='csr')
    tag = f"{coarse.nodes_per_dim}->{fine.nodes_per_dim}"
    return (EllMatrix.from_scipy(P, FP64, label=f"P[{tag}]"),
            EllMatrix.from_scipy(P.T.tocsr(), FP64, label=f"R[{tag}]"))


def nodal_l2_error(grid, u, k):
    """Discrete L2 norm ``sqrt(h^dim sum (u_i - u(x_i))^2)``."""
    e = u.data - exact_solution(grid, k).data
    return float(np.sqrt(grid.h ** grid.dim * (e @ e)))
