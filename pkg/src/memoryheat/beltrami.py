"""Beurling transform, Beltrami resolvent and Beltrami solves on the torus.

Fields are complex samples on an ``nx x ny`` periodic grid over a square
torus of side ``L``; node ``(i, j)`` sits at ``(i L / nx, j L / ny)``.
Derivatives act by Fourier multipliers with

    d    = (d_x - i d_y) / 2,   symbol (i kx + ky) / 2,
    dbar = (d_x + i d_y) / 2,   symbol (i kx - ky) / 2,

so the Beurling transform ``S`` has multiplier ``conj(xi) / xi`` with
``xi = kx + i ky`` and satisfies ``S(dbar f) = d f``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import elliptic
from .errors import ConfigError, SolverError
from .grid import Grid

MEAN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex grid function on the torus."""

    values: np.ndarray
    L: float = 1.0
    zero_mean: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.ndim != 2:
            raise ConfigError("spectral fields are two-dimensional arrays")
        if not np.all(np.isfinite(v)):
            raise ConfigError("spectral field has non-finite values")
        if not self.L > 0:
            raise ConfigError("torus side must be positive")
        object.__setattr__(self, "values", v)
        if self.zero_mean and abs(self.mean()) > MEAN_TOL * max(1.0, self.max_abs()):
            raise ConfigError(f"field flagged zero-mean has mean {self.mean()!r}")

    @property
    def shape(self):
        return self.values.shape

    def mean(self):
        return complex(np.mean(self.values))

    def max_abs(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def l2_norm(self):
        return l2_norm(self.values, self.L)

    def lq_norm(self, q):
        return lq_norm(self.values, self.L, q)

    def with_values(self, values, zero_mean=False):
        return SpectralField(values, self.L, zero_mean)

    @classmethod
    def from_function(cls, func, n, L=1.0, zero_mean=False):
        X, Y = torus_coords(n, L)
        return cls(np.asarray(func(X, Y), dtype=complex), L, zero_mean)


def torus_coords(n, L=1.0):
    nx, ny = (n, n) if np.isscalar(n) else n
    x = np.arange(nx) * (L / nx)
    y = np.arange(ny) * (L / ny)
    return np.meshgrid(x, y, indexing="ij")


def wavenumbers(shape, L):
    nx, ny = shape
    kx = 2 * np.pi * np.fft.fftfreq(nx, d=L / nx)
    ky = 2 * np.pi * np.fft.fftfreq(ny, d=L / ny)
    return np.meshgrid(kx, ky, indexing="ij")


def _symbols(shape, L):
    KX, KY = wavenumbers(shape, L)
    d = 0.5 * (1j * KX + KY)
    dbar = 0.5 * (1j * KX - KY)
    xi = KX + 1j * KY
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(xi == 0, 0.0, np.conj(xi) / np.where(xi == 0, 1.0, xi))
    return d, dbar, s


def l2_norm(values, L):
    n = values.size
    return math.sqrt(float(np.sum(np.abs(values) ** 2)) * L * L / n)


def lq_norm(values, L, q):
    n = values.size
    return float((np.sum(np.abs(values) ** q) * L * L / n) ** (1.0 / q))


def d(field):
    """``(d_x - i d_y) f / 2``."""
    sym, _, _ = _symbols(field.shape, field.L)
    return field.with_values(np.fft.ifft2(sym * np.fft.fft2(field.values)), zero_mean=True)


def dbar(field):
    """``(d_x + i d_y) f / 2``."""
    _, sym, _ = _symbols(field.shape, field.L)
    return field.with_values(np.fft.ifft2(sym * np.fft.fft2(field.values)), zero_mean=True)


def _apply_s(values, s_sym):
    """``S`` after projecting out the mean."""
    return np.fft.ifft2(s_sym * np.fft.fft2(values))


def beurling(field):
    """Beurling transform of a zero-mean field."""
    if abs(field.mean()) > MEAN_TOL * max(1.0, field.max_abs()):
        raise ConfigError(f"the Beurling transform needs zero-mean input, mean is {field.mean()!r}")
    _, _, s = _symbols(field.shape, field.L)
    return field.with_values(_apply_s(field.values, s), zero_mean=True)


def multiplier_on_mode(p, q, L=1.0):
    """``conj(xi)/xi`` for the mode ``exp(2 pi i (p x + q y) / L)``."""
    xi = complex(2 * np.pi * p / L, 2 * np.pi * q / L)
    if xi == 0:
        return 0j
    return xi.conjugate() / xi


# ---------------------------------------------------------------------------
# resolvent


def q_star(k):
    """Critical exponent ``1 + 1/k``."""
    return math.inf if k == 0 else 1.0 + 1.0 / k


@dataclass(frozen=True)
class ResolventConfig:
    k: float
    max_iter: int = 500
    tol: float = 1e-12
    q_exponents: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not 0 <= self.k < 1:
            raise ConfigError(f"contraction bound k must lie in [0, 1), got {self.k!r}", "/k")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive", "/max_iter")
        if not self.tol > 0:
            raise ConfigError("tol must be positive", "/tol")
        for i, q in enumerate(self.q_exponents):
            if not 2 < q < q_star(self.k):
                raise ConfigError(f"q = {q!r} outside (2, {q_star(self.k)!r})",
                                  f"/q_exponents/{i}")

    @property
    def q_star(self):
        return q_star(self.k)


@dataclass
class ResolventResult:
    g: SpectralField
    iterations: int
    history: list
    residual: float
    contraction: float


def _mu_values(mu, shape, k):
    m = np.asarray(mu, dtype=complex)
    if m.ndim == 0:
        m = np.full(shape, complex(m))
    if m.shape != shape:
        raise ConfigError(f"mu has shape {m.shape}, field has {shape}", "/mu")
    sup = float(np.max(np.abs(m))) if m.size else 0.0
    if sup > k + 1e-14:
        raise ConfigError(f"|mu| reaches {sup!r} above the bound k = {k!r}", "/mu")
    return m


def observed_contraction(history, burn_in=5):
    """Geometric-mean ratio of successive update norms after a burn-in."""
    h = np.asarray(history, dtype=float)
    h = h[h > 0]
    if len(h) < 3:
        return 0.0
    start = min(burn_in, len(h) - 2)
    tail = h[start:]
    return float((tail[-1] / tail[0]) ** (1.0 / (len(tail) - 1)))


def neumann_resolvent(mu, Phi, cfg):
    """Solve ``(I - mu S) g = Phi`` by ``g <- Phi + mu S g``.

    ``history`` holds ``||g_{n+1} - g_n||_{L2}``; iteration stops when it
    falls below ``cfg.tol``. ``S`` is applied after removing the mean, which
    is the operator on zero-mean fields extended by ``S(1) = 0``.
    """
    if abs(Phi.mean()) > MEAN_TOL * max(1.0, Phi.max_abs()):
        raise ConfigError("resolvent data must have zero mean", "/Phi")
    m = _mu_values(mu, Phi.shape, cfg.k)
    _, _, s = _symbols(Phi.shape, Phi.L)
    g = Phi.values.copy()
    history = []
    for it in range(1, cfg.max_iter + 1):
        g_new = Phi.values + m * _apply_s(g, s)
        delta = l2_norm(g_new - g, Phi.L)
        history.append(delta)
        g = g_new
        if delta <= cfg.tol:
            break
    else:
        raise SolverError(f"Neumann iteration did not reach tol {cfg.tol!r} in {cfg.max_iter} "
                          f"steps; observed contraction {observed_contraction(history)!r}")
    residual = l2_norm(g - m * _apply_s(g, s) - Phi.values, Phi.L)
    bound = cfg.tol * (1 + cfg.k) / (1 - cfg.k)
    if residual > bound * (1 + 1e-6) + 1e-15 * max(1.0, Phi.l2_norm()):
        raise SolverError(f"resolvent residual {residual!r} above {bound!r}")
    return ResolventResult(Phi.with_values(g), it, history, residual,
                           observed_contraction(history))


# ---------------------------------------------------------------------------
# Beltrami equation


@dataclass
class BeltramiSolution:
    """``f = f_per + a conj(z) - conj(a) z`` with periodic ``f_per``.

    The affine part has zero real part, so ``Re f`` is periodic.
    """

    f: SpectralField
    a: complex
    residual: float
    iterations: int
    history: list

    @property
    def u(self):
        return self.f.values.real


def _fourier_divide(g_hat, d_sym):
    out = np.zeros_like(g_hat)
    nz = d_sym != 0
    out[nz] = g_hat[nz] / d_sym[nz]
    return out


def solve_beltrami(mu, phi_src, cfg, gauge=True):
    """Solve ``dbar f = mu d f + phi_src`` on the torus.

    With ``g = d f`` the equation becomes ``g = S(mu g + phi_src)`` on zero-mean
    parts. When ``mu g + phi_src`` has non-zero mean (variable ``mu``) and
    ``gauge`` is set, the affine term ``a conj(z) - conj(a) z`` absorbs it;
    otherwise the mean must vanish.
    """
    shape, L = phi_src.shape, phi_src.L
    m = _mu_values(mu, shape, cfg.k)
    d_sym, dbar_sym, s = _symbols(shape, L)
    phi = phi_src.values
    g = np.zeros(shape, dtype=complex)
    a = 0j
    history = []
    for it in range(1, cfg.max_iter + 1):
        w = m * (g - np.conj(a)) + phi
        a_new = complex(np.mean(w)) if gauge else 0j
        g_new = _apply_s(w, s)
        delta = l2_norm(g_new - g, L) + abs(a_new - a) * L
        history.append(delta)
        g, a = g_new, a_new
        if delta <= cfg.tol:
            break
    else:
        raise SolverError(f"Beltrami iteration did not reach tol {cfg.tol!r} in {cfg.max_iter} "
                          f"steps; observed contraction {observed_contraction(history)!r}")
    f_hat = _fourier_divide(np.fft.fft2(g), d_sym)
    f_per = np.fft.ifft2(f_hat)
    df = np.fft.ifft2(d_sym * f_hat) - np.conj(a)
    dbf = np.fft.ifft2(dbar_sym * f_hat) + a
    residual = l2_norm(dbf - m * df - phi, L)
    if not gauge and abs(np.mean(m * df + phi)) > 1e-10 * max(1.0, phi_src.max_abs()):
        raise ConfigError("mu d f + phi_src has non-zero mean; enable the affine gauge")
    return BeltramiSolution(phi_src.with_values(f_per, zero_mean=True), a, residual, it, history)


# ---------------------------------------------------------------------------
# cross-validation against the divergence-form solver


def divergence_source(F1, F2, mu):
    """``phi_src`` whose Beltrami solution has ``-div(sigma_mu grad Re f) = div F``."""
    F = np.asarray(F1, dtype=complex) + 1j * np.asarray(F2, dtype=complex)
    Fc = np.asarray(F1, dtype=complex) - 1j * np.asarray(F2, dtype=complex)
    return -0.5 * (F + np.asarray(mu) * Fc)


def spectral_divergence(F1, F2, L):
    KX, KY = wavenumbers(np.shape(F1), L)
    div = 1j * KX * np.fft.fft2(F1) + 1j * KY * np.fft.fft2(F2)
    return np.fft.ifft2(div).real


@dataclass
class CrossValidation:
    n: int
    u_fd: np.ndarray
    u_spectral: np.ndarray
    discrepancy: float
    beltrami_residual: float


def cross_validate_divform(mu, F1, F2, L=1.0, cfg=None, cg_tol=1e-10):
    """Solve ``-div(sigma_mu grad u) = div F`` by both routes on an ``n x n`` torus.

    Route (a) is the periodic conductivity assembly with CG; route (b) takes
    ``Re f`` from the Beltrami solve. The discrepancy is the relative L2
    distance of the zero-mean solutions.
    """
    m = np.asarray(mu, dtype=complex)
    F1 = np.asarray(F1, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    if m.ndim == 0:
        m = np.full(F1.shape, complex(m))
    if not (m.shape == F1.shape == F2.shape) or F1.shape[0] != F1.shape[1]:
        raise ConfigError("mu and F must share one square torus grid")
    n = F1.shape[0]
    k = float(np.max(np.abs(m)))
    if cfg is None:
        cfg = ResolventConfig(k=k, max_iter=2000, tol=1e-13)
    F1 = F1 - F1.mean()
    F2 = F2 - F2.mean()
    rhs = spectral_divergence(F1, F2, L)
    grid = Grid(n, n, L, L)
    op = elliptic.operator_from_beltrami(m, grid, periodic=True)
    u_fd = elliptic.solve(op, rhs, tol=cg_tol)
    src = SpectralField(divergence_source(F1, F2, m), L)
    sol = solve_beltrami(m, src, cfg)
    u_sp = sol.u - sol.u.mean()
    diff = l2_norm(u_fd - u_sp, L) / max(l2_norm(u_sp, L), 1e-300)
    return CrossValidation(n, u_fd, u_sp, diff, sol.residual)


# ---------------------------------------------------------------------------
# L^q window


def q_window_report(k, norms_by_n, q_values, tolerance=0.10):
    """Stability of ``||g||_{L^q}`` between consecutive grids.

    ``norms_by_n`` maps grid size to ``{q: norm}``. Exponents at or above
    ``q*(k)`` are flagged and not judged.
    """
    qs = q_star(k)
    sizes = sorted(norms_by_n)
    rows = []
    for q in q_values:
        inside = 2 < q < qs
        vals = [norms_by_n[n][q] for n in sizes]
        changes = [abs(b - a) / max(abs(a), 1e-300) for a, b in zip(vals, vals[1:])]
        row = {
            "q": q,
            "norms": dict(zip(sizes, vals)),
            "finite": bool(all(math.isfinite(v) for v in vals)),
            "max_relative_change": max(changes) if changes else 0.0,
        }
        if inside:
            row["window"] = "inside"
            row["stable"] = bool(row["finite"] and row["max_relative_change"] <= tolerance)
        else:
            row["window"] = "outside guaranteed window"
        rows.append(row)
    return {"k": k, "q_star": qs, "tolerance": tolerance, "rows": rows}
