"""Divergence-form operator ``-div(sigma grad u)`` on a rectangle grid.

The operator is the bilinear (Q1) Galerkin matrix of
``a(u, v) = int sigma grad u . grad v`` with ``sigma`` constant on each cell.
Gradient products are integrated with the corner rule: at each cell corner
the x-derivative is taken along the adjacent horizontal edge and the
y-derivative along the adjacent vertical edge. For ``sigma = I`` this gives
exactly the 5-point Laplacian, and the form inherits the pointwise bounds
``m(k) |xi|^2 <= sigma xi . xi <= M(k) |xi|^2`` cell by cell.

Grid functions are arrays of interior values. The stored matrix is the
pointwise operator ``K / (hx hy)`` so that ``apply`` approximates
``-div(sigma grad u)`` and the L2 inner product is ``hx hy * sum(u v)``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .conductivity import BeltramiField, ConductivityTensor, sigma_entries, m_of_k, M_of_k
from .errors import ConfigError, SolverError
from .grid import Grid

DEFAULT_TOL = 1e-10

# Corner-rule difference vectors on the local nodes
# [(i, j), (i+1, j), (i, j+1), (i+1, j+1)], before division by hx or hy.
_GX = np.array([[-1, 1, 0, 0], [-1, 1, 0, 0], [0, 0, -1, 1], [0, 0, -1, 1]], dtype=float)
_GY = np.array([[-1, 0, 1, 0], [0, -1, 0, 1], [-1, 0, 1, 0], [0, -1, 0, 1]], dtype=float)
_BXX = 0.25 * np.einsum("cp,cq->pq", _GX, _GX)
_BYY = 0.25 * np.einsum("cp,cq->pq", _GY, _GY)
_BXY = 0.25 * (np.einsum("cp,cq->pq", _GX, _GY) + np.einsum("cp,cq->pq", _GY, _GX))


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Assembled SPD operator on interior nodes (or on the torus if periodic)."""

    matrix: sp.csr_matrix
    grid: Grid
    cell_sigma: ConductivityTensor
    periodic: bool = False
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.matrix.shape[0]

    @property
    def shape(self):
        g = self.grid
        return (g.nx, g.ny) if self.periodic else g.shape

    @property
    def m_k(self):
        return self.cell_sigma.m_k

    @property
    def M_k(self):
        return self.cell_sigma.M_k

    @property
    def weight(self):
        """L2 quadrature weight per node."""
        return self.grid.hx * self.grid.hy

    def apply(self, u):
        return apply(self, u)

    def inner(self, u, v):
        return inner(self, u, v)

    def factorized(self, shift=0.0):
        """Cached sparse LU solve for ``(shift I + A) x = b`` on flat vectors."""
        key = ("lu", float(shift))
        if key not in self._cache:
            mat = self.matrix
            if shift:
                mat = mat + shift * sp.identity(self.n, format="csr")
            self._cache[key] = spla.factorized(mat.tocsc())
        return self._cache[key]


def _flat(op, u):
    u = np.asarray(u, dtype=float)
    shp = op.shape
    if u.shape[-2:] != shp:
        raise ConfigError(f"grid function has shape {u.shape[-2:]}, operator expects {shp}")
    return u.reshape(u.shape[:-2] + (op.n,))


def cell_conductivity(mu):
    """Conductivity per cell from the corner-averaged Beltrami coefficient."""
    if not isinstance(mu, BeltramiField):
        mu = BeltramiField.from_values(mu)
    a11, a12, a22 = sigma_entries(mu.cell_average())
    k = mu.k_bound
    return ConductivityTensor(a11=a11, a12=a12, a22=a22, m_k=m_of_k(k), M_k=M_of_k(k))


def assemble(sigma, grid, periodic=False):
    """Assemble the operator for a conductivity on ``grid``.

    Parameters
    ----------
    sigma : ConductivityTensor
        Either cell values of shape ``(nx, ny)`` or nodal values of shape
        ``(nx+1, ny+1)``. Nodal entries are averaged over the four corners of
        each cell, which keeps the eigenvalue bounds but not ``det = 1``;
        :func:`operator_from_beltrami` averages ``mu`` instead.
    grid : Grid
    periodic : bool
        Treat the rectangle as a torus with ``nx * ny`` unknowns.
    """
    cells = (grid.nx, grid.ny)
    a11, a12, a22 = (np.asarray(x, dtype=float) for x in (sigma.a11, sigma.a12, sigma.a22))
    if a11.shape == grid.node_shape:
        avg = lambda v: 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])
        a11, a12, a22 = avg(a11), avg(a12), avg(a22)
        sigma = ConductivityTensor(a11, a12, a22, sigma.m_k, sigma.M_k)
    elif a11.shape != cells:
        raise ConfigError(f"conductivity shape {a11.shape} matches neither cells {cells} "
                          f"nor nodes {grid.node_shape}")
    if np.iscomplexobj(a11) or not (np.all(np.isfinite(a11)) and np.all(np.isfinite(a22))):
        raise ConfigError("conductivity must be real and finite")

    hx, hy = grid.hx, grid.hy
    # K_e = hx*hy/4 * sum_c G_c^T sigma G_c, divided by hx*hy for the pointwise operator
    ke = (a11[..., None, None] * _BXX / hx**2 + a22[..., None, None] * _BYY / hy**2
          + a12[..., None, None] * _BXY / (hx * hy))

    ci, cj = np.meshgrid(np.arange(grid.nx), np.arange(grid.ny), indexing="ij")
    local = [(ci, cj), (ci + 1, cj), (ci, cj + 1), (ci + 1, cj + 1)]
    if periodic:
        idx = [(i % grid.nx) * grid.ny + (j % grid.ny) for i, j in local]
        inside = [np.ones_like(ci, dtype=bool)] * 4
        n = grid.nx * grid.ny
    else:
        ny_int = grid.ny - 1
        idx = [(i - 1) * ny_int + (j - 1) for i, j in local]
        inside = [(i >= 1) & (i <= grid.nx - 1) & (j >= 1) & (j <= grid.ny - 1) for i, j in local]
        n = grid.size
    rows, cols, vals = [], [], []
    for p in range(4):
        for q in range(4):
            mask = inside[p] & inside[q]
            rows.append(idx[p][mask])
            cols.append(idx[q][mask])
            vals.append(ke[..., p, q][mask])
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat = ((mat + mat.T) * 0.5).tocsr()
    mat.eliminate_zeros()
    mat.sort_indices()
    return DiscreteOperator(matrix=mat, grid=grid, cell_sigma=sigma, periodic=periodic)


def operator_from_beltrami(mu, grid, periodic=False):
    if periodic:
        # torus: node (i, j) and (i+nx, j) coincide; mu is given on nx x ny nodes
        vals = np.asarray(mu.values if isinstance(mu, BeltramiField) else mu)
        wrapped = np.pad(vals, ((0, 1), (0, 1)), mode="wrap")
        mu = BeltramiField.from_values(wrapped)
    return assemble(cell_conductivity(mu), grid, periodic=periodic)


def laplacian(grid, periodic=False):
    """Assembled ``-Laplacian`` (``sigma = I``) on the same grid."""
    one = np.ones((grid.nx, grid.ny))
    return assemble(ConductivityTensor(one, 0 * one, one, 1.0, 1.0), grid, periodic=periodic)


def apply(op, u):
    """Exact sparse mat-vec; accepts a grid function or a stack of them."""
    flat = _flat(op, u)
    out = (op.matrix @ flat.reshape(-1, op.n).T).T
    return out.reshape(np.shape(u))


def inner(op, u, v):
    """L2 inner product over the trailing grid axes."""
    return op.weight * np.sum(np.asarray(u) * np.asarray(v), axis=(-2, -1))


def form(op, u, v):
    """``a(u, v) = <A u, v>``."""
    return inner(op, apply(op, u), v)


def solve(op, g, tol=DEFAULT_TOL, precondition=False, x0=None):
    """Solve ``A u = g`` by conjugate gradients to relative residual ``tol``.

    Raises :class:`SolverError` if CG does not converge within ``20 n``
    iterations. On the torus ``g`` is projected to zero mean and the
    zero-mean solution is returned.
    """
    if not tol > 0:
        raise ConfigError("tol must be positive")
    b = _flat(op, g).astype(float)
    if not np.all(np.isfinite(b)):
        raise ConfigError("right-hand side must be finite")
    if op.periodic:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(op.shape)
    M = None
    if precondition:
        M = sp.diags(1.0 / op.matrix.diagonal())
    start = None if x0 is None else _flat(op, x0)
    maxiter = 20 * op.n
    x, info = spla.cg(op.matrix, b, x0=start, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
    res = np.linalg.norm(op.matrix @ x - b) / bnorm
    # the recursive residual can drift below the true one; restart from x
    for _ in range(3):
        if info != 0 or res <= tol:
            break
        x, info = spla.cg(op.matrix, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        res = np.linalg.norm(op.matrix @ x - b) / bnorm
    if info != 0 or not res <= tol * 1.0000001:
        raise SolverError(f"CG stopped with relative residual {res:.3e} after cap {maxiter} "
                          f"(info={info}); operator may be ill-conditioned")
    if op.periodic:
        x = x - x.mean()
    return x.reshape(op.shape)


def solve_direct(op, g, shift=0.0):
    """Solve ``(shift I + A) u = g`` with the cached sparse factorization."""
    b = _flat(op, g)
    return op.factorized(shift)(b).reshape(op.shape)


def v_norm(op, u, r):
    """Norm of ``u`` in ``V^r``, ``r`` in 0..3, by operator composition."""
    return np.sqrt(np.maximum(v_norm_sq(op, u, r), 0.0))


def v_norm_sq(op, u, r):
    if r == 0:
        return inner(op, u, u)
    if r == 1:
        return inner(op, apply(op, u), u)
    if r == 2:
        au = apply(op, u)
        return inner(op, au, au)
    if r == 3:
        au = apply(op, u)
        return inner(op, apply(op, au), au)
    raise ConfigError(f"unsupported scale r={r!r}; expected 0, 1, 2 or 3")


def v_inner(op, u, v, r):
    """``<u, v>_{V^r}``; symmetric in its arguments."""
    if r == 0:
        return inner(op, u, v)
    if r == 1:
        return inner(op, apply(op, u), v)
    if r == 2:
        return inner(op, apply(op, u), apply(op, v))
    if r == 3:
        au = apply(op, u)
        return inner(op, apply(op, au), apply(op, v))
    raise ConfigError(f"unsupported scale r={r!r}; expected 0, 1, 2 or 3")


def smallest_eigenvalue(op, tol=1e-12, max_iter=5000, use_cg=False):
    """Smallest eigenvalue by inverse power iteration.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    Each step solves with the cached factorization, or with CG if
    ``use_cg``. Returns ``(lambda, eigenvector)``.
    """
    x = np.ones(op.n)
    if op.periodic:
        raise ConfigError("smallest_eigenvalue needs the Dirichlet operator")
    x /= np.linalg.norm(x)
    lam_old = None
    lu = None if use_cg else op.factorized()
    for _ in range(max_iter):
        if use_cg:
            y = solve(op, x.reshape(op.shape), tol=1e-13).ravel()
        else:
            y = lu(x)
        x = y / np.linalg.norm(y)
        lam = float(x @ (op.matrix @ x))
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            return lam, x.reshape(op.shape)
        lam_old = lam
    raise SolverError(f"inverse iteration did not converge in {max_iter} steps")


def laplacian_eigenvalue(grid, p=1, q=1):
    """Discrete Dirichlet eigenvalue of the 5-point ``-Laplacian`` for mode (p, q)."""
    hx, hy = grid.hx, grid.hy
    return (4 / hx**2) * np.sin(p * np.pi * hx / (2 * grid.Lx)) ** 2 + (4 / hy**2) * np.sin(
        q * np.pi * hy / (2 * grid.Ly)
    ) ** 2


def dirichlet_mode(grid, p=1, q=1):
    """``sin(p pi x / Lx) sin(q pi y / Ly)`` at the interior nodes."""
    X, Y = grid.coords()
    return np.sin(p * np.pi * X / grid.Lx) * np.sin(q * np.pi * Y / grid.Ly)


def coercivity_constant(op):
    """Lower bound ``m(k) * lambda_1^h(-Laplacian)`` for the first eigenvalue."""
    return op.m_k * laplacian_eigenvalue(op.grid)
