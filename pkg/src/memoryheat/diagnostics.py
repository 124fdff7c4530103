"""Energy functionals, dissipation residuals and long-time measurements.

Phase-space norms pair a temperature scale with a history scale:

* ``H0``: ``||u||_{V^0}`` with ``||eta||_{M^1}``
* ``H1``: ``||u||_{V^1}`` with ``||eta||_{M^2}``
* ``V``:  ``||u||_{V^2}`` with ``||eta||_{M^2}``

The energy ``E_{r,nu} = ||u||^2_{V^r} + ||eta||^2_{M^{r+1}} + 2 nu U_{r+1}``
lies between ``||(u, eta)||^2_{H^r}`` and ``(1 + 2 nu Theta)`` times it.
"""

import math
from dataclasses import dataclass

import warnings

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from . import elliptic
from .errors import ConfigError
from .history import m_norm, tail_terms

SPACES = {"H0": (0, 1), "H1": (1, 2), "V": (2, 2)}


def default_nu(kernel):
    return min(0.25, 1.0 / (4.0 * kernel.Theta))


def phase_norm_sq(u, eta, A, space):
    if space not in SPACES:
        raise ConfigError(f"unknown phase space {space!r}; expected one of {sorted(SPACES)}")
    ru, re = SPACES[space]
    return float(elliptic.v_norm_sq(A, u, ru)) + m_norm(eta, A, re).m_norm ** 2


def phase_norm(u, eta, A, space):
    return math.sqrt(max(phase_norm_sq(u, eta, A, space), 0.0))


@dataclass(frozen=True)
class EnergyReport:
    r: int
    nu: float
    E: float
    u_norms: dict
    eta_norms: dict
    tail_U: float
    t: float
    phase_norm_sq: float

    @property
    def band_ratio(self):
        return self.E / self.phase_norm_sq if self.phase_norm_sq > 0 else 1.0


def energy(state, A, r, nu, check=True):
    """``E_{r,nu}`` of a state whose history can be tabulated.

    With ``check`` the equivalence band is asserted.
    """
    if r not in (0, 1):
        raise ConfigError(f"energy is defined for r in (0, 1), got {r!r}")
    u = state.u
    u_norms = {j: float(elliptic.v_norm(A, u, j)) for j in range(4)}
    reps = {j: m_norm(state.eta, A, j) for j in (1, 2)}
    eta_norms = {j: reps[j].m_norm for j in (1, 2)}
    U = reps[r + 1].tail_U
    base = u_norms[r] ** 2 + eta_norms[r + 1] ** 2
    E = base + 2 * nu * U
    theta = state.eta.kernel.Theta
    if check and not (base * (1 - 1e-12) - 1e-300 <= E <= (1 + 2 * nu * theta) * base * (1 + 1e-12) + 1e-300):
        raise AssertionError(f"energy {E!r} outside the equivalence band of {base!r}")
    return EnergyReport(r=r, nu=nu, E=E, u_norms=u_norms, eta_norms=eta_norms, tail_U=U,
                        t=state.t, phase_norm_sq=base)


# ---------------------------------------------------------------------------
# dissipation residuals along trajectories


def _energy_terms(traj, A, r, nu):
    """Per-sample arrays used by the residuals."""
    if not traj.g or len(traj.g) != len(traj.u):
        raise ConfigError("trajectory has no forcing records; simulate with keep_history=True")
    if len(traj.eta) != len(traj.u):
        raise ConfigError("trajectory has no tabulated histories")
    rows = []
    for u, g, eta in zip(traj.u, traj.g, traj.eta):
        U, nsq, cross = tail_terms(u, eta, A, r + 1)
        hp = eta.weights * eta.kernel.h_prime(eta.s_nodes + eta.shift)
        hprime_term = float(hp @ elliptic.v_norm_sq(A, eta.values, r + 1))
        rows.append((
            float(elliptic.v_norm_sq(A, u, r)),
            nsq,
            U,
            float(elliptic.v_norm_sq(A, u, r + 1)),
            float(elliptic.v_inner(A, g, u, r)),
            cross,
            hprime_term,
        ))
    cols = np.array(rows).T
    names = ("u_sq", "eta_sq", "U", "u_next_sq", "gu", "cross", "hprime")
    out = dict(zip(names, cols))
    out["E"] = out["u_sq"] + out["eta_sq"] + 2 * nu * out["U"]
    return out


def _uniform_dt(times):
    t = np.asarray(times, dtype=float)
    if len(t) < 2:
        raise ConfigError("trajectory needs at least two samples")
    dts = np.diff(t)
    if np.max(np.abs(dts - dts[0])) > 1e-9 * max(1.0, dts[0]):
        raise ConfigError("trajectory samples must be uniformly spaced")
    return float(dts[0])


def _mid(x):
    return 0.5 * (x[1:] + x[:-1])


def energy_inequality_residual(traj, A, r, nu):
    """Residual of ``dE/dt + (1-nu)||u||^2_{V^{r+1}} + nu^2 E <= 2 <g, u>_{V^r}``.

    Differences over each sampling interval with the other terms averaged
    over its ends; a positive entry is a violation of the inequality.
    """
    dt = _uniform_dt(traj.times)
    T = _energy_terms(traj, A, r, nu)
    E = T["E"]
    return (np.diff(E) / dt + (1 - nu) * _mid(T["u_next_sq"]) + nu**2 * _mid(E)
            - 2 * _mid(T["gu"]))


def energy_identity_residual(traj, A, r, nu):
    """Defect of the exact energy balance

        dE/dt = -2||u||^2_{V^{r+1}} + int h' ||eta||^2 - nu ||eta||^2
                + 2 nu int kappa <u, eta> + 2 <g, u>,

    with histories and norms at scale ``r+1``. It vanishes for the
    continuous system, so along a discrete trajectory it measures the
    time-discretisation error.
    """
    dt = _uniform_dt(traj.times)
    T = _energy_terms(traj, A, r, nu)
    rhs = (-2 * T["u_next_sq"] + T["hprime"] - nu * T["eta_sq"] + 2 * nu * T["cross"]
           + 2 * T["gu"])
    return np.diff(T["E"]) / dt - _mid(rhs)


def energy_series(traj, A, r, nu):
    return _energy_terms(traj, A, r, nu)["E"]


# ---------------------------------------------------------------------------
# fits and measurements


@dataclass(frozen=True)
class FitResult:
    I: float
    c: float
    C: float
    rms_residual: float
    reliable: bool = True
    model: str = "I*exp(-c*t) + C"

    def predict(self, t):
        return self.I * np.exp(-self.c * np.asarray(t, dtype=float)) + self.C


def fit_absorbing(t, values, C=None):
    """Fit ``values ~ I exp(-c t) + C``.

    ``C`` defaults to the mean of the last 10% of the series; ``I`` and ``c``
    start from a log-linear least-squares fit of the positive part of
    ``values - C`` and are then polished by nonlinear least squares with
    ``C`` held fixed; a free ``C`` is poorly determined when the decay has
    several rates. The fit is flagged unreliable if more than half of the
    excess values are non-positive.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(t) < 10 or len(t) != len(v):
        raise ConfigError("fit needs at least 10 samples of matching length")
    if np.any(np.diff(t) <= 0):
        raise ConfigError("fit needs increasing times")
    if C is None:
        tail = max(1, int(math.ceil(0.1 * len(v))))
        C = float(np.mean(v[-tail:]))
    excess = v - C
    scale = max(np.max(np.abs(v)), 1e-300)
    pos = excess > 1e-12 * scale
    reliable = bool(np.count_nonzero(~pos) <= 0.5 * len(v))
    if np.count_nonzero(pos) < 2:
        return FitResult(I=0.0, c=0.0, C=C, rms_residual=float(np.sqrt(np.mean(excess**2))),
                         reliable=False)
    slope, intercept = np.polyfit(t[pos], np.log(excess[pos]), 1)
    I, c = float(np.exp(intercept)), float(-slope)
    rms = _rms(v, t, I, c, C)
    # polish I and c by nonlinear least squares on the full series
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", OptimizeWarning)
            popt, _ = curve_fit(lambda x, I_, c_: I_ * np.exp(-c_ * x) + C, t - t[0], v,
                                p0=[I * math.exp(-c * t[0]), c], maxfev=2000)
        c2 = float(popt[1])
        I2 = float(popt[0]) * math.exp(c2 * t[0])
        rms2 = _rms(v, t, I2, c2, C)
        if np.isfinite(rms2) and rms2 < rms:
            I, c, rms = I2, c2, rms2
    except (RuntimeError, ValueError, OverflowError):
        pass
    return FitResult(I=I, c=c, C=C, rms_residual=rms, reliable=reliable)


def _rms(v, t, I, c, C):
    with np.errstate(over="ignore", invalid="ignore"):
        resid = v - (I * np.exp(-c * t) + C)
    return float(np.sqrt(np.mean(resid**2)))


def geometric_sample_steps(dt, T=1.0, per_decade=8):
    """Step indices ``n >= 1`` with ``n dt`` geometric from ``dt`` to ``T``."""
    n_max = int(math.floor(T / dt + 1e-9))
    if n_max < 1:
        return np.array([], dtype=int)
    k = max(2, int(math.ceil(per_decade * math.log10(max(n_max, 2)))) + 1)
    steps = np.unique(np.round(np.geomspace(1, n_max, k)).astype(int))
    return steps


def smoothing_profile(model, state, dt, T=1.0, per_decade=8):
    """Series ``(t, sqrt(t) ||S(t) z||_V)`` on geometric times in ``(0, T]``.

    ``state`` must carry a ring-buffer history; it is advanced in place.
    """
    from .dynamics import step

    steps = geometric_sample_steps(dt, T, per_decade)
    out = []
    A = model.A
    for target in steps:
        while state.n < target:
            step(state, model, dt)
        t = state.t
        out.append((t, math.sqrt(t) * phase_norm(state.u, state.eta, A, "V")))
    return np.array(out).reshape(-1, 2)


def linfty_time_average(times, sup_norms, r_exp, window=1.0):
    """Windowed left Riemann sums of ``||u||_inf^r_exp`` over ``[t, t + window)``.

    ``times`` must be uniformly spaced; one value per window start ``t`` with
    ``t + window`` inside the run.
    """
    t = np.asarray(times, dtype=float)
    s = np.asarray(sup_norms, dtype=float) ** r_exp
    dt = _uniform_dt(t)
    if window < dt:
        raise ConfigError("window must not be shorter than the sample spacing")
    width = int(round(window / dt))
    csum = np.concatenate([[0.0], np.cumsum(s)])
    starts = np.arange(0, len(s) - width + 1)
    vals = dt * (csum[starts + width] - csum[starts])
    return np.column_stack([t[starts], vals])


def state_distance(a, b, A, space):
    """``||a - b||`` in a phase space; ``a`` and ``b`` are ``(u, eta)`` pairs.

    Both histories are tabulated and must share their s-nodes and shift.
    """
    if space not in SPACES:
        raise ConfigError(f"unknown phase space {space!r}")
    ua, ea = a[0], a[1].materialize()
    ub, eb = b[0], b[1].materialize()
    if ea.values.shape != eb.values.shape or not np.array_equal(ea.s_nodes, eb.s_nodes) \
            or ea.shift != eb.shift:
        raise ConfigError("histories live on different s-grids; compare states at equal times")
    ru, re = SPACES[space]
    du = ua - ub
    dv = ea.values - eb.values
    hw = ea.h_weights()
    sq = float(elliptic.v_norm_sq(A, du, ru)) + float(hw @ elliptic.v_norm_sq(A, dv, re))
    return math.sqrt(max(sq, 0.0))


def attraction_distance(ensemble, targets, A, space="H0"):
    """One-sided Hausdorff distance ``max_a min_b ||a - b||``."""
    if not ensemble or not targets:
        raise ConfigError("attraction distance needs non-empty sets")
    return max(min(state_distance(a, b, A, space) for b in targets) for a in ensemble)
