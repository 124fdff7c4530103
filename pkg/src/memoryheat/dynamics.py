"""Time stepping of the heat equation with memory in history-variable form.

The system is

    u_t + A u + int_0^inf h(s) A eta(s) ds + phi(u) = f,
    eta_t = T eta + u,

advanced by a first-order IMEX step: implicit in ``A``, explicit in ``phi``
and in the memory term, followed by the history update with the new ``u``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import elliptic
from .errors import ConfigError, NumericalError
from .history import ModeBank, RingBuffer, SeparablePast, ZERO_PAST, init_history


@dataclass
class SystemState:
    """Phase-space point ``(u, eta)`` at time ``t = n * dt``."""

    u: np.ndarray
    eta: object
    t: float = 0.0
    n: int = 0

    def copy(self):
        return SystemState(self.u.copy(), self.eta.copy(), self.t, self.n)


@dataclass(eq=False)
class Model:
    """Operator, kernel, nonlinearity and time-independent forcing."""

    A: elliptic.DiscreteOperator
    kernel: object
    phi: object
    f: np.ndarray = None
    memory_method: str = "kappa"
    solver: str = "direct"

    def __post_init__(self):
        if self.f is None:
            self.f = np.zeros(self.A.shape)
        self.f = self.A.grid.check(np.asarray(self.f, dtype=float), "f")

    @property
    def grid(self):
        return self.A.grid

    def forcing(self, u):
        """``g = f - phi(u)``."""
        return self.f - self.phi(u)


def dissipativity_gate(phi, A):
    """Compare ``phi``'s dip below zero with the coercivity lower bound.

    Returns a dict; ``ok`` requires ``diss_margin < m(k) lambda_1^h(-Laplacian)``.
    """
    lam_lower = float(elliptic.coercivity_constant(A))
    return {
        "diss_margin": phi.diss_margin,
        "liminf_margin": phi.liminf_margin,
        "lambda_lower": lam_lower,
        "ok": bool(phi.diss_margin < lam_lower),
    }


def require_gate(phi, A):
    gate = dissipativity_gate(phi, A)
    if not gate["ok"]:
        raise ConfigError(
            f"dissipativity gate failed: phi' dips to -{gate['diss_margin']!r}, "
            f"coercivity bound is {gate['lambda_lower']!r}", "/phi"
        )
    return gate


def _memory(eta, A, method):
    if isinstance(eta, RingBuffer):
        return eta.memory_term(A, method=method)
    return eta.memory_term(A)


def _implicit_solve(A, rhs, dt, solver, guess=None):
    if solver == "direct":
        return A.factorized(1.0 / dt)(rhs.ravel()).reshape(rhs.shape)
    if solver == "cg":
        import scipy.sparse as sp
        import scipy.sparse.linalg as spla

        key = ("shifted", dt)
        if key not in A._cache:
            A._cache[key] = (A.matrix + sp.identity(A.n, format="csr") / dt).tocsr()
        mat = A._cache[key]
        x0 = None if guess is None else guess.ravel()
        x, info = spla.cg(mat, rhs.ravel(), x0=x0, rtol=1e-13, atol=0.0, maxiter=20 * A.n)
        if info != 0:
            from .errors import SolverError

            raise SolverError(f"CG failed in the implicit step (info={info})")
        return x.reshape(rhs.shape)
    raise ConfigError(f"unknown solver {solver!r}")


def step(state, model, dt):
    """One IMEX step; the history is updated in place and ``state`` returned."""
    A = model.A
    mem = _memory(state.eta, A, model.memory_method)
    rhs = state.u / dt + model.forcing(state.u) - mem
    u_new = _implicit_solve(A, rhs, dt, model.solver, guess=state.u)
    if not np.all(np.isfinite(u_new)):
        raise NumericalError("non-finite temperature", step=state.n + 1)
    state.eta.evolve(u_new, dt)
    state.u = u_new
    state.n += 1
    state.t = state.n * dt
    return state


def initial_state(model, u0, past=ZERO_PAST, dt=None, representation="ring"):
    u0 = model.grid.check(np.asarray(u0, dtype=float), "u0")
    eta = init_history(past, model.kernel, model.grid, dt=dt, u0=u0, representation=representation)
    return SystemState(u=u0.copy(), eta=eta, t=0.0, n=0)


def steady_state(A, f, kernel, dt=None, representation="ring"):
    """``u_f = A^{-1} f / 2`` with history ``eta_f(s) = s u_f``.

    With the mode representation ``zeta_j = u_f / a_j``.
    """
    f = A.grid.check(np.asarray(f, dtype=float), "f")
    u_f = 0.5 * elliptic.solve_direct(A, f) if np.any(f) else np.zeros(A.shape)
    past = SeparablePast("constant", u_f)
    eta = init_history(past, kernel, A.grid, dt=dt, u0=u_f, representation=representation)
    return SystemState(u=u_f.copy(), eta=eta)


def n_steps_for(T_final, dt):
    """Number of whole steps in ``[0, T_final]``; zero when ``T_final < dt``."""
    if T_final < dt:
        return 0
    return int(math.floor(T_final / dt + 1e-9))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    u: list = field(default_factory=list)
    g: list = field(default_factory=list)
    eta: list = field(default_factory=list)
    records: list = field(default_factory=list)
    failure: str = None

    def column(self, key):
        return np.array([r[key] for r in self.records])


def simulate(model, state, T_final, dt, sample_every=1, observe=None, keep_states=False,
             keep_history=False):
    """Advance ``state`` to ``T_final`` (absolute time), sampling every few steps.

    ``observe(state, model)`` may return a dict recorded at each sample.
    ``keep_states`` stores ``u`` and ``g = f - phi(u)``; ``keep_history``
    additionally stores tabulated histories (ring buffer only).
    Numerical failures are re-raised after the partial trajectory is marked;
    the partial trajectory is attached to the exception as ``trajectory``.
    """
    if not dt > 0:
        raise ConfigError("dt must be positive", "/dt")
    if sample_every < 1:
        raise ConfigError("sample_every must be a positive integer", "/sample_every")
    traj = Trajectory()
    total = n_steps_for(T_final, dt)

    def record():
        traj.times.append(state.t)
        if keep_states or keep_history:
            traj.u.append(state.u.copy())
            traj.g.append(model.forcing(state.u))
        if keep_history:
            traj.eta.append(state.eta.materialize())
        if observe is not None:
            rec = {"t": state.t}
            rec.update(observe(state, model))
            traj.records.append(rec)

    try:
        if state.n % sample_every == 0:
            record()
        while state.n < total:
            step(state, model, dt)
            if state.n % sample_every == 0:
                record()
    except NumericalError as exc:
        traj.failure = str(exc)
        exc.trajectory = traj
        raise
    return traj


# ---------------------------------------------------------------------------
# decomposition into a decaying part and a compact part


@dataclass
class DecompositionResult:
    times: np.ndarray
    sum_error: np.ndarray
    v_norm_H0: np.ndarray
    w_norm_H1: np.ndarray
    u_norm_H0: np.ndarray
    ell: float
    checks: dict


def decomposition_run(model, u0, past, T, dt, sample_every=1, representation="ring", tol=1e-6):
    """Evolve ``u = v + w`` with the split

        v_t + A v + M(xi)   = phi0(w) - phi0(u),   (v, xi)(0) = (u0, eta0)
        w_t + A w + M(zeta) = f - phi0(w) + ell u,  (w, zeta)(0) = 0

    alongside the full solution, with ``phi0 = phi + ell id`` monotone.
    Norms need the ring-buffer representation.
    """
    from .diagnostics import fit_absorbing, phase_norm
    from .nonlinearity import monotone_shift

    phi0, ell = monotone_shift(model.phi)
    A, kernel = model.A, model.kernel
    full = initial_state(model, u0, past, dt, representation)
    v = initial_state(model, u0, past, dt, representation)
    w = SystemState(u=np.zeros(A.shape), eta=init_history(ZERO_PAST, kernel, A.grid, dt=dt,
                                                           u0=np.zeros(A.shape),
                                                           representation=representation))
    total = n_steps_for(T, dt)
    times, err, vn, wn, un = [], [], [], [], []
    norms = representation == "ring"

    def sample():
        times.append(full.t)
        diff = v.u + w.u - full.u
        err.append(float(np.sqrt(A.inner(diff, diff))))
        if norms:
            vn.append(phase_norm(v.u, v.eta, A, "H0"))
            wn.append(phase_norm(w.u, w.eta, A, "H1"))
            un.append(phase_norm(full.u, full.eta, A, "H0"))

    sample()
    for n in range(1, total + 1):
        mem_u = _memory(full.eta, A, model.memory_method)
        mem_v = _memory(v.eta, A, model.memory_method)
        mem_w = _memory(w.eta, A, model.memory_method)
        p0u, p0w = phi0(full.u), phi0(w.u)
        rhs_u = full.u / dt + model.forcing(full.u) - mem_u
        rhs_v = v.u / dt + (p0w - p0u) - mem_v
        rhs_w = w.u / dt + (model.f - p0w + ell * full.u) - mem_w
        new = [_implicit_solve(A, r, dt, model.solver) for r in (rhs_u, rhs_v, rhs_w)]
        for st, un_ in zip((full, v, w), new):
            if not np.all(np.isfinite(un_)):
                raise NumericalError("non-finite value in decomposition run", step=n)
            st.eta.evolve(un_, dt)
            st.u = un_
            st.n = n
            st.t = n * dt
        if n % sample_every == 0:
            sample()

    times = np.array(times)
    err = np.array(err)
    checks = {"sum_max_error": float(err.max()), "sum_ok": bool(err.max() <= tol)}
    if norms:
        fit = fit_absorbing(times, np.array(vn), C=0.0)
        checks.update({
            "v_decay_rate": fit.c,
            "v_fit_rms": fit.rms_residual,
            "v_decays": bool(fit.c > 0),
            "w_sup_H1": float(np.max(wn)),
            "w_sup_finite": bool(np.isfinite(np.max(wn))),
        })
    return DecompositionResult(times, err, np.array(vn), np.array(wn), np.array(un), ell, checks)
