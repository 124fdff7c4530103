"""Uniform rectangle grids with homogeneous Dirichlet boundary."""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class Grid:
    """Uniform ``nx`` x ``ny`` cell grid on ``[0, Lx] x [0, Ly]``.

    Nodes are ``x_i = i*hx``, ``y_j = j*hy``. Grid functions live on the
    interior nodes ``1 <= i <= nx-1``, ``1 <= j <= ny-1`` and are stored as
    arrays of shape ``(nx-1, ny-1)`` indexed ``[i-1, j-1]``. Nodal coefficient
    fields (such as the Beltrami coefficient) cover all ``(nx+1, ny+1)`` nodes.
    """

    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise ConfigError("nx and ny must be integers")
        if self.nx < 2 or self.ny < 2:
            raise ConfigError(f"grid needs at least 2 cells per direction, got {self.nx}x{self.ny}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ConfigError("Lx and Ly must be positive")

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def cell_area(self):
        """L2 quadrature weight of one interior node."""
        return self.hx * self.hy

    @property
    def shape(self):
        return (self.nx - 1, self.ny - 1)

    @property
    def node_shape(self):
        return (self.nx + 1, self.ny + 1)

    @property
    def size(self):
        return (self.nx - 1) * (self.ny - 1)

    def coords(self):
        """Interior node coordinates as ``(X, Y)`` arrays of :attr:`shape`."""
        x = np.arange(1, self.nx) * self.hx
        y = np.arange(1, self.ny) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def node_coords(self):
        x = np.arange(self.nx + 1) * self.hx
        y = np.arange(self.ny + 1) * self.hy
        return np.meshgrid(x, y, indexing="ij")

    def pad(self, u):
        """Embed an interior grid function into the full node array (zero boundary)."""
        full = np.zeros(self.node_shape, dtype=np.result_type(u, float))
        full[1:-1, 1:-1] = u
        return full

    def check(self, u, name="u"):
        u = np.asarray(u)
        if u.shape != self.shape:
            raise ConfigError(f"{name} has shape {u.shape}, grid expects {self.shape}")
        return u

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "Lx": self.Lx, "Ly": self.Ly}
