"""Reaction terms ``phi`` with certified dissipativity and growth.

Every nonlinearity is scanned on ``r = 0`` and ``+-[1e-6, 1e6]`` (log-spaced,
plus the critical points of ``phi'`` for polynomials). The scan yields

* ``diss_margin = max(0, -min phi')``, the amount by which ``phi'`` dips
  below zero anywhere on the scan;
* ``liminf_margin``, the same quantity restricted to ``|r| >= 1e3``;
* growth constants ``C_j = max |phi^(1+j)(r)| / (1 + |r|^(m-j))``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import polynomial as P

from scipy.optimize import minimize_scalar

from .errors import ConfigError

SCAN_MIN, SCAN_MAX, SCAN_N = 1e-6, 1e6, 2001
R_THRESHOLD = 1e3
SHIFT_EPS = 1e-6


def scan_points(extra=()):
    pos = np.geomspace(SCAN_MIN, SCAN_MAX, SCAN_N)
    extra = np.asarray(extra, dtype=float)
    extra = extra[np.isfinite(extra) & (np.abs(extra) <= SCAN_MAX)]
    pts = np.concatenate([-pos[::-1], [0.0], pos, extra])
    return np.unique(pts)


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Scalar nonlinearity with derivatives and scan certificates.

    ``coeffs[i]`` multiplies ``u**i`` when the nonlinearity is a polynomial;
    ``coeffs`` is ``None`` for user callables, which keep the scan results
    but lose the analytic growth certificate.
    """

    name: str
    eval: object
    d1: object
    d2: object
    d3: object
    growth_m: int
    coeffs: tuple = None
    diss_margin: float = 0.0
    liminf_margin: float = 0.0
    growth_C: tuple = (0.0, 0.0, 0.0)
    bounded_below: bool = True
    report: dict = field(default_factory=dict, repr=False)

    def __call__(self, u):
        return self.eval(u)

    @property
    def is_zero(self):
        return self.coeffs is not None and not any(self.coeffs)

    def describe(self):
        out = {
            "name": self.name,
            "growth_m": self.growth_m,
            "diss_margin": self.diss_margin,
            "liminf_margin": self.liminf_margin,
            "growth_C": list(self.growth_C),
        }
        if self.coeffs is not None:
            out["coeffs"] = [float(c) for c in self.coeffs]
        return out


def _refine_max(fn, r, values):
    """Polish the scan maximum of ``fn`` between the neighbouring scan points."""
    i = int(np.argmax(values))
    best = float(values[i])
    lo, hi = r[max(i - 1, 0)], r[min(i + 1, len(r) - 1)]
    if hi > lo:
        res = minimize_scalar(lambda x: -fn(x), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12 * max(1.0, abs(r[i]))})
        best = max(best, -float(res.fun))
    return best


def _certify(phi, extra=()):
    r = scan_points(extra)
    with np.errstate(over="ignore", invalid="ignore"):
        derivs = [phi.d1(r), phi.d2(r), phi.d3(r)]
    d1 = derivs[0]
    if abs(float(phi.eval(np.array(0.0)))) > 0:
        raise ConfigError(f"nonlinearity {phi.name} has phi(0) != 0")
    if not np.all(np.isfinite(d1)):
        raise ConfigError(f"nonlinearity {phi.name} is not finite on the scan range")
    m = phi.growth_m
    absr = np.abs(r)
    C = []
    for j, v in enumerate(derivs):
        with np.errstate(divide="ignore"):
            bound = 1.0 + absr ** (m - j)
        ratio = np.abs(v) / bound
        C.append(_refine_max(lambda x, f=(phi.d1, phi.d2, phi.d3)[j], e=m - j:
                             abs(float(f(x))) / (1.0 + abs(x) ** e), r, ratio))
    diss = max(0.0, -float(np.min(d1)))
    far = absr >= R_THRESHOLD
    liminf = max(0.0, -float(np.min(d1[far])))
    # phi' unbounded below shows up as a minimum at the scan edge that is
    # still falling
    edge = absr >= SCAN_MAX / 10
    inner_min = float(np.min(d1[~edge]))
    bounded = not (float(np.min(d1[edge])) < min(inner_min, 0.0) * 2 - 1.0)
    report = {
        "scan": [float(r[0]), float(r[-1]), int(len(r))],
        "r_threshold": R_THRESHOLD,
        "min_d1": float(np.min(d1)),
    }
    return replace(phi, diss_margin=diss, liminf_margin=liminf, growth_C=tuple(C),
                   bounded_below=bounded, report=report)


def polynomial(coeffs, name=None):
    """``phi(u) = sum_i c_i u**i`` from ``coeffs = [c1, c2, ...]`` (``c0 = 0``)."""
    c = [0.0] + [float(x) for x in coeffs]
    if not all(np.isfinite(c)):
        raise ConfigError("poly coefficients must be finite", "/phi/poly")
    while len(c) > 1 and c[-1] == 0.0:
        c.pop()
    c = np.array(c)
    d1, d2, d3 = P.polyder(c, 1), P.polyder(c, 2), P.polyder(c, 3)
    degree = len(c) - 1
    crit = P.polyroots(d2) if len(d2) > 1 else np.array([])
    crit = crit[np.abs(crit.imag) < 1e-12].real if len(crit) else crit
    phi = Nonlinearity(
        name=name or "poly",
        eval=lambda u, c=c: P.polyval(u, c),
        d1=lambda u, c=d1: P.polyval(u, c),
        d2=lambda u, c=d2: P.polyval(u, c),
        d3=lambda u, c=d3: P.polyval(u, c),
        growth_m=max(1, degree - 1),
        coeffs=tuple(float(x) for x in c),
    )
    phi = _certify(phi, crit)
    # polynomial phi' is bounded below iff it is constant or has even degree
    # and positive leading coefficient
    lead = d1[-1] if len(d1) else 0.0
    bounded = len(d1) <= 1 or ((len(d1) - 1) % 2 == 0 and lead > 0)
    return replace(phi, bounded_below=bool(bounded))


def zero():
    return polynomial([], name="zero")


def cubic(beta):
    """``phi(u) = u**3 - beta u`` for ``beta >= 0``."""
    if beta < 0:
        raise ConfigError("cubic beta must be non-negative", "/phi/cubic/beta")
    return polynomial([-float(beta), 0.0, 1.0], name=f"cubic({beta!r})")


def from_callables(eval, d1, d2, d3, growth_m, name="custom"):
    """Wrap user functions; the scan still runs but proves nothing between points."""
    phi = Nonlinearity(name=name, eval=eval, d1=d1, d2=d2, d3=d3, growth_m=int(growth_m))
    return _certify(phi)


def monotone_shift(phi):
    """Return ``(phi0, ell)`` with ``phi0(r) = phi(r) + ell r`` monotone on the scan.

    ``ell = diss_margin + 1e-6``.
    """
    if not phi.bounded_below:
        raise ConfigError(f"{phi.name}: phi' has no lower bound on the scan range")
    ell = phi.diss_margin + SHIFT_EPS
    if phi.coeffs is not None:
        c = list(phi.coeffs[1:]) or [0.0]
        c[0] += ell
        phi0 = polynomial(c, name=f"{phi.name}+{ell!r}*u")
    else:
        phi0 = from_callables(
            lambda u: phi.eval(u) + ell * u,
            lambda u: phi.d1(u) + ell,
            phi.d2,
            phi.d3,
            phi.growth_m,
            name=f"{phi.name}+{ell!r}*u",
        )
    return phi0, ell


def phi_from_spec(spec):
    if spec == "zero" or spec == {"zero": None} or spec == {"zero": {}}:
        return zero()
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("phi must be \"zero\", {\"cubic\": ...} or {\"poly\": [...]}", "/phi")
    (kind, arg), = spec.items()
    if kind == "cubic":
        if not isinstance(arg, dict) or "beta" not in arg:
            raise ConfigError("cubic needs beta", "/phi/cubic")
        return cubic(float(arg["beta"]))
    if kind == "poly":
        if not isinstance(arg, list):
            raise ConfigError("poly needs a coefficient list", "/phi/poly")
        return polynomial(arg)
    if kind == "zero":
        return zero()
    raise ConfigError(f"unknown phi kind {kind!r}", "/phi")


def interior_sigma(sigma, grid):
    """Conductivity entries at the interior nodes.

    Nodal tensors are restricted; cell tensors are averaged over the four
    cells around each interior node.
    """
    out = []
    for a in (sigma.a11, sigma.a12, sigma.a22):
        a = np.asarray(a)
        if a.shape == grid.node_shape:
            out.append(a[1:-1, 1:-1])
        elif a.shape == (grid.nx, grid.ny):
            out.append(0.25 * (a[:-1, :-1] + a[1:, :-1] + a[:-1, 1:] + a[1:, 1:]))
        else:
            raise ConfigError(f"conductivity shape {a.shape} does not fit the grid")
    return out


def centered_gradient(u, grid):
    full = grid.pad(u)
    ux = (full[2:, 1:-1] - full[:-2, 1:-1]) / (2 * grid.hx)
    uy = (full[1:-1, 2:] - full[1:-1, :-2]) / (2 * grid.hy)
    return ux, uy


def apply_chain_rule(A, sigma, u, phi):
    """``phi'(u) A u - phi''(u) (sigma grad u) . grad u`` at the interior nodes."""
    grid = A.grid
    u = grid.check(u)
    a11, a12, a22 = interior_sigma(sigma, grid)
    ux, uy = centered_gradient(u, grid)
    flux_dot = a11 * ux * ux + 2 * a12 * ux * uy + a22 * uy * uy
    return phi.d1(u) * A.apply(u) - phi.d2(u) * flux_dot
