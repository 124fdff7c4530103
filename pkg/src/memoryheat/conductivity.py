"""Conductivity tensors generated by a Beltrami coefficient.

A complex coefficient ``mu`` with ``|mu| <= k < 1`` determines the symmetric
conductivity

    sigma = 1/(1-|mu|^2) * [[|1-mu|^2, -2 Im mu], [-2 Im mu, |1+mu|^2]]

whose determinant is one and whose eigenvalues lie in ``[m(k), M(k)]`` with
``m(k) = (1-k)/(1+k)`` and ``M(k) = 1/m(k)``.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import Grid

# |mu| this close to 1 is treated as degenerate.
DEGENERACY_EPS = 1e-8


def m_of_k(k):
    return (1.0 - k) / (1.0 + k)


def M_of_k(k):
    return (1.0 + k) / (1.0 - k)


@dataclass(frozen=True, eq=False)
class BeltramiField:
    """Nodal Beltrami coefficient with a certified sup bound.

    Use :meth:`from_values` to construct; it scans every node and rejects
    fields that touch the unit circle.
    """

    values: np.ndarray
    k_bound: float
    grid: Grid = None

    @classmethod
    def from_values(cls, values, grid=None):
        values = np.array(values, dtype=complex)
        if grid is not None and values.shape != grid.node_shape:
            raise ConfigError(f"mu has shape {values.shape}, grid nodes are {grid.node_shape}")
        if not np.all(np.isfinite(values)):
            raise ConfigError("mu contains non-finite values")
        modulus = np.abs(values)
        worst = np.unravel_index(np.argmax(modulus), modulus.shape)
        k = float(modulus[worst])
        if k >= 1.0 - DEGENERACY_EPS:
            raise ConfigError(
                f"|mu| = {k!r} at node {tuple(int(i) for i in worst)} violates |mu| < 1 "
                f"(degeneracy margin {DEGENERACY_EPS})"
            )
        values.setflags(write=False)
        return cls(values=values, k_bound=k, grid=grid)

    def cell_average(self):
        """Average of the four corner values of each cell, shape ``(nx, ny)``."""
        v = self.values
        return 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])


@dataclass(frozen=True, eq=False)
class ConductivityTensor:
    a11: np.ndarray
    a12: np.ndarray
    a22: np.ndarray
    m_k: float
    M_k: float

    def matrix(self):
        """Stacked ``(..., 2, 2)`` matrices."""
        return np.stack(
            [np.stack([self.a11, self.a12], -1), np.stack([self.a12, self.a22], -1)], -2
        )

    def quadratic_form(self, xi1, xi2):
        return self.a11 * xi1 * xi1 + 2.0 * self.a12 * xi1 * xi2 + self.a22 * xi2 * xi2

    def eigenvalues(self):
        half_trace = 0.5 * (self.a11 + self.a22)
        radius = np.hypot(0.5 * (self.a11 - self.a22), self.a12)
        return half_trace - radius, half_trace + radius

    def determinant(self):
        return self.a11 * self.a22 - self.a12 * self.a12


def sigma_entries(mu):
    """Pointwise ``(a11, a12, a22)`` for an array of Beltrami values."""
    mu = np.asarray(mu, dtype=complex)
    denom = 1.0 - (mu.real**2 + mu.imag**2)
    a11 = ((1.0 - mu.real) ** 2 + mu.imag**2) / denom
    a22 = ((1.0 + mu.real) ** 2 + mu.imag**2) / denom
    a12 = -2.0 * mu.imag / denom
    return a11, a12, a22


def conductivity_from_beltrami(mu):
    """Conductivity tensor of a :class:`BeltramiField`, node by node."""
    if not isinstance(mu, BeltramiField):
        mu = BeltramiField.from_values(mu)
    a11, a12, a22 = sigma_entries(mu.values)
    k = mu.k_bound
    return ConductivityTensor(a11=a11, a12=a12, a22=a22, m_k=m_of_k(k), M_k=M_of_k(k))


def ellipticity_report(sigma):
    """Return ``(min_eig, max_eig, max_det_error)`` over all nodes."""
    lo, hi = sigma.eigenvalues()
    det_err = np.abs(sigma.determinant() - 1.0)
    return float(np.min(lo)), float(np.max(hi)), float(np.max(det_err))


# ---------------------------------------------------------------------------
# Coefficient fields from scenario specs.  The evaluators take coordinate
# arrays so the same specs serve the Dirichlet grid and the periodic torus.


def _constant(X, Y, Lx, Ly, value):
    re, im = value
    return np.full(X.shape, complex(re, im))


def _checkerboard(X, Y, Lx, Ly, k, tiles):
    ix = np.floor(tiles * X / Lx).astype(int)
    iy = np.floor(tiles * Y / Ly).astype(int)
    return np.where((ix + iy) % 2 == 0, k, -k).astype(complex)


def _radial(X, Y, Lx, Ly, k):
    z = (X - 0.5 * Lx) + 1j * (Y - 0.5 * Ly)
    out = np.zeros(X.shape, dtype=complex)
    nz = np.abs(z) > 0
    out[nz] = k * z[nz] / np.conj(z[nz])
    return out


def _phase(X, Y, Lx, Ly, k, wx=1, wy=1):
    return k * np.exp(2j * np.pi * (wx * X / Lx + wy * Y / Ly))


def _bump(X, Y, Lx, Ly, k, angle=0.0):
    # smooth, periodic, sup exactly k at the centre
    shape = np.sin(np.pi * X / Lx) ** 2 * np.sin(np.pi * Y / Ly) ** 2
    return k * np.exp(1j * angle) * shape


def mu_from_spec(spec, X, Y, Lx, Ly, base_dir=None):
    """Evaluate a coefficient spec on coordinate arrays.

    Accepted forms::

        {"constant": [re, im]}
        {"checkerboard": {"k": 0.5, "tiles": 4}}
        {"radial": {"k": 0.4}}
        {"phase": {"k": 0.3, "wx": 1, "wy": 1}}
        {"bump": {"k": 0.4, "angle": 0.0}}
        {"file": "mu.bin"}
    """
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("mu spec must be an object with exactly one key", "/mu")
    (kind, arg), = spec.items()
    try:
        if kind == "constant":
            if not (isinstance(arg, (list, tuple)) and len(arg) == 2):
                raise ConfigError("constant mu must be [re, im]", "/mu/constant")
            return _constant(X, Y, Lx, Ly, arg)
        if kind == "checkerboard":
            return _checkerboard(X, Y, Lx, Ly, float(arg["k"]), int(arg["tiles"]))
        if kind == "radial":
            return _radial(X, Y, Lx, Ly, float(arg["k"]))
        if kind == "phase":
            return _phase(X, Y, Lx, Ly, float(arg["k"]), int(arg.get("wx", 1)), int(arg.get("wy", 1)))
        if kind == "bump":
            return _bump(X, Y, Lx, Ly, float(arg["k"]), float(arg.get("angle", 0.0)))
        if kind == "file":
            return load_mu_file(arg, X.shape, base_dir=base_dir)
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", f"/mu/{kind}") from None
    raise ConfigError(f"unknown mu kind {kind!r}", "/mu")


def beltrami_on_grid(spec, grid, base_dir=None):
    X, Y = grid.node_coords()
    return BeltramiField.from_values(mu_from_spec(spec, X, Y, grid.Lx, grid.Ly, base_dir), grid)


def load_mu_file(path, shape, base_dir=None):
    """Read interleaved little-endian float64 (re, im) values in row-major order.

    A JSON sidecar ``<path>.json`` gives ``{"nx": .., "ny": ..}``: the node
    counts along x and y, which must match ``shape``.
    """
    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    sidecar = path.with_name(path.name + ".json")
    try:
        meta = json.loads(sidecar.read_text())
        raw = np.fromfile(path, dtype="<f8")
    except OSError as exc:
        raise ConfigError(f"cannot read mu file: {exc}", "/mu/file") from None
    nx, ny = int(meta["nx"]), int(meta["ny"])
    if (nx, ny) != tuple(shape):
        raise ConfigError(f"mu file is {nx}x{ny}, expected {shape[0]}x{shape[1]}", "/mu/file")
    if raw.size != 2 * nx * ny:
        raise ConfigError(f"mu file holds {raw.size} floats, expected {2 * nx * ny}", "/mu/file")
    pairs = raw.reshape(nx, ny, 2)
    return pairs[..., 0] + 1j * pairs[..., 1]


def save_mu_file(path, values):
    values = np.asarray(values, dtype=complex)
    path = Path(path)
    inter = np.empty(values.shape + (2,), dtype="<f8")
    inter[..., 0] = values.real
    inter[..., 1] = values.imag
    inter.tofile(path)
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"nx": values.shape[0], "ny": values.shape[1]}, sort_keys=True))
