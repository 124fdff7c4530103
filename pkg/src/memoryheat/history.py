"""Integrated past history ``eta^t(s) = int_0^s u(t - y) dy`` and its evolution.

Three representations share one interface (``evolve``, ``memory_term``,
``translate``):

* :class:`RingBuffer` stores the recent ``u`` snapshots together with their
  running time integral and reconstructs ``eta`` from the two-branch formula
  ``eta^t(s) = int_0^s u(t-y) dy`` for ``s <= t`` and
  ``eta_0(s-t) + int_0^t u`` for ``s > t``, treating ``u`` as piecewise
  linear in time.
* :class:`ModeBank` keeps one moment ``zeta_j = int a_j exp(-a_j s) eta(s) ds``
  per exponential mode; the memory term ``sum b_j a_j A zeta_j`` is exact in
  ``s``.
* :class:`SampledHistory` is ``eta`` tabulated on an ``s``-grid, possibly
  right-translated. Norms are computed on this form.

Quadrature in ``s`` uses geometric nodes and the trapezoid rule in ``log s``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import elliptic
from .errors import ConfigError
from .kernel import MemoryKernel

PER_DECADE = 64
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)


# ---------------------------------------------------------------------------
# s-quadrature


def history_nodes(kernel, dt, per_decade=PER_DECADE):
    """Geometric nodes ``s_i = s_max * rho**(N-i)`` with ``s_1 = min(dt, s_max/10)``."""
    s_max = kernel.s_max
    s1 = min(dt, s_max / 10)
    n = max(2, int(math.ceil(per_decade * math.log10(s_max / s1))) + 1)
    nodes = np.geomspace(s1, s_max, n)
    nodes[-1] = s_max
    return nodes


def log_trapezoid_weights(nodes):
    """Weights of the trapezoid rule in ``x = log s`` on ``(0, s_N]``.

    The piece ``(0, s_1]`` assumes an integrand vanishing at ``s = 0``, which
    holds for every history quantity since ``eta(0) = 0``.
    """
    s = np.asarray(nodes, dtype=float)
    x = np.log(s)
    w = np.zeros_like(s)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    w *= s
    w[0] += 0.5 * s[0]
    return w


# ---------------------------------------------------------------------------
# past histories


class PastHistory:
    """Prescribed ``u(x, -y)`` for ``y > 0``."""

    def eta0(self, s):
        raise NotImplementedError

    def memory_tail(self, kernel, t):
        """``int_0^inf kappa(t + y) u(-y) dy``, the part of the memory from before time 0."""
        raise NotImplementedError

    def mode_init(self, kernel):
        """Mode moments ``int a_j exp(-a_j s) eta_0(s) ds``."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class SeparablePast(PastHistory):
    """``u(x, -y) = psi(y) g(x)`` with ``psi = 0``, ``1`` or ``exp(-rate y)``."""

    kind: str
    g: np.ndarray = None
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "exp"):
            raise ConfigError(f"unknown past kind {self.kind!r}", "/past")
        if self.kind == "exp" and not self.rate > 0:
            raise ConfigError("exp_past rate must be positive", "/past/exp_past/rate")

    def profile(self, s):
        """``Psi(s) = int_0^s psi``."""
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "constant":
            return s.copy()
        return -np.expm1(-self.rate * s) / self.rate

    def psi(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "constant":
            return np.ones_like(y)
        return np.exp(-self.rate * y)

    def eta0(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero" or self.g is None:
            return np.zeros(s.shape + (np.shape(self.g) if self.g is not None else (1, 1)))
        return self.profile(s)[..., None, None] * self.g

    def tail_factor(self, kernel, t):
        """Scalar ``int_0^inf kappa(t + y) psi(y) dy``."""
        if self.kind == "zero":
            return 0.0
        if t >= kernel.s_max:
            return 0.0
        if self.kind == "constant":
            return float(kernel.kappa_integral(kernel.s_max) - kernel.kappa_integral(t))
        if kernel.kind == "exp_sum":
            return float(np.sum(kernel.b * kernel.a * np.exp(-kernel.a * t) / (kernel.a + self.rate)))
        val, _ = integrate.quad(lambda y: float(kernel.kappa(t + y)) * math.exp(-self.rate * y),
                                0.0, kernel.s_max - t, limit=200, epsabs=1e-14, epsrel=1e-12)
        return val

    def memory_tail(self, kernel, t):
        if self.kind == "zero" or self.g is None:
            return 0.0
        return self.tail_factor(kernel, t) * self.g

    def mode_init(self, kernel):
        _require_modes(kernel)
        if self.kind == "zero" or self.g is None:
            return [None] * kernel.n_modes
        rho = 0.0 if self.kind == "constant" else self.rate
        return [self.g / (a + rho) for a in kernel.a]


@dataclass(frozen=True, eq=False)
class SampledPast(PastHistory):
    """Initial history tabulated at ``s``-nodes (linear in between, zero at 0)."""

    s_nodes: np.ndarray
    values: np.ndarray

    @classmethod
    def from_function(cls, past_u, s_nodes):
        """Tabulate ``eta_0(s) = int_0^s past_u(y) dy`` on the nodes.

        ``past_u(y)`` returns the grid function ``u(., -y)``. Each interval is
        integrated by Simpson's rule in ``log s`` (in ``s`` on ``[0, s_1]``).
        """
        s = np.asarray(s_nodes, dtype=float)
        mids = np.concatenate([[0.5 * s[0]], np.sqrt(s[:-1] * s[1:])])
        ys = np.concatenate([[0.0], s, mids])
        try:
            samples = np.stack([np.asarray(past_u(float(y)), dtype=float) for y in ys])
        except Exception as exc:  # noqa: BLE001 - user callable
            raise ConfigError(f"past history is not evaluable: {exc}", "/past") from None
        if not np.all(np.isfinite(samples)):
            raise ConfigError("past history produced non-finite values", "/past")
        n = len(s)
        at0, at_nodes, at_mids = samples[0], samples[1:n + 1], samples[n + 1:]
        inc = np.empty_like(at_nodes)
        inc[0] = s[0] / 6 * (at0 + 4 * at_mids[0] + at_nodes[0])
        dx = np.diff(np.log(s))[:, None, None]
        sw = s[:, None, None]
        mw = mids[1:, None, None]
        inc[1:] = dx / 6 * (at_nodes[:-1] * sw[:-1] + 4 * at_mids[1:] * mw + at_nodes[1:] * sw[1:])
        return cls(s_nodes=s, values=np.cumsum(inc, axis=0))

    def eta0(self, s):
        s = np.asarray(s, dtype=float)
        nodes = np.concatenate([[0.0], self.s_nodes])
        vals = np.concatenate([np.zeros((1,) + self.values.shape[1:]), self.values])
        flat = vals.reshape(len(nodes), -1)
        out = np.stack([np.interp(s.ravel(), nodes, flat[:, j]) for j in range(flat.shape[1])], -1)
        return out.reshape(s.shape + self.values.shape[1:])

    def memory_tail(self, kernel, t):
        # int kappa(t+y) eta0'(y) dy = int h(t+y) eta0(y) dy since eta0(0) = 0
        w = log_trapezoid_weights(self.s_nodes) * kernel.h(t + self.s_nodes)
        return np.tensordot(w, self.values, axes=1)

    def mode_init(self, kernel):
        _require_modes(kernel)
        w = log_trapezoid_weights(self.s_nodes)
        return [np.tensordot(w * a * np.exp(-a * self.s_nodes), self.values, axes=1)
                for a in kernel.a]


def _require_modes(kernel):
    if kernel.kind != "exp_sum":
        raise ConfigError("the mode representation needs an exponential-sum kernel")


ZERO_PAST = SeparablePast("zero")


# ---------------------------------------------------------------------------
# history states


@dataclass(eq=False)
class SampledHistory:
    """``eta`` tabulated at ``s_nodes`` and right-translated by ``shift``.

    ``eta(s) = 0`` for ``s <= shift`` and the tabulated (piecewise linear)
    profile at ``s - shift`` otherwise. Norms substitute ``s -> s + shift``,
    so translation is exact and the contraction property holds term by term.
    """

    s_nodes: np.ndarray
    values: np.ndarray
    kernel: MemoryKernel
    weights: np.ndarray = None
    shift: float = 0.0

    def __post_init__(self):
        self.s_nodes = np.asarray(self.s_nodes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.weights is None:
            self.weights = log_trapezoid_weights(self.s_nodes)
        if self.values.shape[0] != len(self.s_nodes):
            raise ConfigError("history values do not match the s-nodes")

    def copy(self):
        return SampledHistory(self.s_nodes, self.values.copy(), self.kernel, self.weights, self.shift)

    def translate(self, t):
        if t < 0:
            raise ValueError("translation time must be non-negative")
        return SampledHistory(self.s_nodes, self.values, self.kernel, self.weights, self.shift + t)

    def evaluate(self, s):
        """``eta(s)`` at arbitrary ``s`` (stack over the leading axis)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        sig = s - self.shift
        nodes = np.concatenate([[0.0], self.s_nodes])
        vals = np.concatenate([np.zeros((1,) + self.values.shape[1:]), self.values])
        idx = np.clip(np.searchsorted(nodes, sig, side="right") - 1, 0, len(nodes) - 2)
        lam = (sig - nodes[idx]) / (nodes[idx + 1] - nodes[idx])
        lam = lam[:, None, None]
        out = (1 - lam) * vals[idx] + lam * vals[idx + 1]
        out[sig <= 0] = 0.0
        out[sig > nodes[-1]] = vals[-1]
        return out

    def h_weights(self):
        return self.weights * self.kernel.h(self.s_nodes + self.shift)

    def kappa_weights(self):
        return self.weights * self.kernel.kappa(self.s_nodes + self.shift)

    def memory_term(self, A):
        return A.apply(np.tensordot(self.h_weights(), self.values, axes=1))

    def materialize(self):
        return self


class RingBuffer:
    """Exact reconstruction of ``eta^t`` from stored snapshots of ``u``.

    ``u`` is taken piecewise linear between snapshots, so ``eta^t`` is the
    integrated history of that interpolant. Storage grows with the number of
    steps up to ``ceil(s_max/dt) + 2`` snapshots; older ones fall outside the
    kernel horizon and are overwritten.
    """

    def __init__(self, kernel, grid, dt, u0=None, past=ZERO_PAST, s_nodes=None):
        if not dt > 0:
            raise ConfigError("dt must be positive")
        self.kernel = kernel
        self.grid = grid
        self.dt = float(dt)
        self.past = past
        self.cap_max = int(math.ceil(kernel.s_max / self.dt)) + 2
        self.s_nodes = history_nodes(kernel, self.dt) if s_nodes is None else np.asarray(s_nodes)
        cap = min(self.cap_max, 256)
        self._u = np.zeros((cap,) + grid.shape)
        self._F = np.zeros((cap,) + grid.shape)
        self.n = 0
        self._u[0] = 0.0 if u0 is None else grid.check(u0)
        self._L = np.zeros(0)
        self._R = np.zeros(0)

    # -- storage ----------------------------------------------------------

    @property
    def t(self):
        return self.n * self.dt

    @property
    def capacity(self):
        return self._u.shape[0]

    def _grow(self):
        cap = self.capacity
        new = min(2 * cap, self.cap_max)
        if new == cap:
            return
        u = np.zeros((new,) + self.grid.shape)
        F = np.zeros((new,) + self.grid.shape)
        for k in range(max(0, self.n - cap + 1), self.n + 1):
            u[k % new] = self._u[k % cap]
            F[k % new] = self._F[k % cap]
        self._u, self._F = u, F

    def evolve(self, u_new, dt=None):
        if dt is not None and abs(dt - self.dt) > 1e-12 * self.dt:
            raise ConfigError(f"ring buffer step is {self.dt!r}, got dt={dt!r}")
        u_new = self.grid.check(u_new)
        if self.n + 1 >= self.capacity:
            self._grow()
        cap = self.capacity
        k, k1 = self.n % cap, (self.n + 1) % cap
        self._F[k1] = self._F[k] + 0.5 * self.dt * (self._u[k] + u_new)
        self._u[k1] = u_new
        self.n += 1
        return self

    def latest(self):
        return self._u[self.n % self.capacity].copy()

    def copy(self):
        other = RingBuffer.__new__(RingBuffer)
        other.__dict__.update(self.__dict__)
        other._u = self._u.copy()
        other._F = self._F.copy()
        return other

    # -- reconstruction ---------------------------------------------------

    def _oldest(self):
        return max(0, self.n - self.capacity + 1)

    def eta(self, s):
        """``eta^t(s)`` for an array of ``s`` in ``[0, s_max]``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        cap = self.capacity
        t = self.t
        out = np.empty(s.shape + self.grid.shape)
        recent = s <= t
        Ft = self._F[self.n % cap]
        if np.any(recent):
            tau = (t - s[recent]) / self.dt
            k = np.clip(np.floor(tau).astype(int), self._oldest(), self.n)
            k = np.minimum(k, self.n - 1) if self.n > 0 else k
            th = (tau - k)[:, None, None]
            uk = self._u[k % cap]
            uk1 = self._u[(k + 1) % cap]
            Fs = self._F[k % cap] + self.dt * (th * uk + 0.5 * th * th * (uk1 - uk))
            out[recent] = Ft - Fs
        if np.any(~recent):
            out[~recent] = self.past.eta0(s[~recent] - t) + Ft
        return out

    def materialize(self, s_nodes=None):
        """Tabulate ``eta^t`` on the s-grid, adding a node at ``s = t``."""
        nodes = self.s_nodes if s_nodes is None else np.asarray(s_nodes, dtype=float)
        t = self.t
        if 0 < t < nodes[-1] and not np.any(np.isclose(nodes, t, rtol=1e-12, atol=0)):
            nodes = np.sort(np.append(nodes, t))
        return SampledHistory(nodes, self.eta(nodes), self.kernel)

    def translate(self, t):
        return self.materialize().translate(t)

    # -- memory -----------------------------------------------------------

    def _hat_weights(self, m_max):
        """Left/right half-hat integrals of kappa on the step grid."""
        if len(self._R) > m_max:
            return
        size = max(m_max + 1, 2 * len(self._R), 64)
        size = min(size, self.cap_max + 1)
        j = np.arange(size)[:, None]
        x = 0.5 * (_GL_X + 1.0)
        s = (j + x) * self.dt
        kap = self.kernel.kappa(s)
        I0 = 0.5 * self.dt * kap @ _GL_W
        I1 = 0.5 * self.dt * (kap * x) @ _GL_W
        self._R = I0 - I1  # int over [m dt, (m+1) dt] of kappa * (1 - (s - m dt)/dt)
        self._L = np.concatenate([[0.0], I1[:-1]])  # int over [(m-1) dt, m dt] of kappa * (s/dt - m + 1)

    def memory_term(self, A, method="kappa"):
        """``int_0^inf h(s) A eta(s) ds``.

        ``method="kappa"`` uses the equivalent form ``A int kappa(s) u(t-s) ds``,
        integrated exactly against the piecewise-linear ``u``.
        ``method="quadrature"`` applies the s-quadrature to the tabulated ``eta``.
        """
        if method == "quadrature":
            return self.materialize().memory_term(A)
        if method != "kappa":
            raise ConfigError(f"unknown memory method {method!r}")
        n = self.n
        m_max = min(n, self.cap_max - 2)
        self._hat_weights(m_max + 1)
        c = self._R[: m_max + 1] + self._L[: m_max + 1]
        if n <= self.cap_max - 2:
            # the oldest snapshot sits at s = t and only carries its left half-hat
            c[m_max] = self._L[m_max]
        idx = (n - np.arange(m_max + 1)) % self.capacity
        acc = np.tensordot(c, self._u[idx], axes=1)
        acc = acc + self.past.memory_tail(self.kernel, self.t)
        return A.apply(acc)


class ModeBank:
    """Moments ``zeta_j`` of ``eta`` against ``a_j exp(-a_j s)``.

    Evolution freezes ``u`` at the new value over each step and integrates
    ``zeta_j' = -a_j zeta_j + u`` exactly.
    """

    def __init__(self, kernel, grid, past=ZERO_PAST):
        _require_modes(kernel)
        self.kernel = kernel
        self.grid = grid
        init = past.mode_init(kernel)
        self.zeta = [np.zeros(grid.shape) if z is None else np.array(z, dtype=float) for z in init]
        self.t = 0.0

    def copy(self):
        other = ModeBank.__new__(ModeBank)
        other.kernel, other.grid, other.t = self.kernel, self.grid, self.t
        other.zeta = [z.copy() for z in self.zeta]
        return other

    def evolve(self, u_new, dt):
        if not dt > 0:
            raise ConfigError("dt must be positive")
        u_new = self.grid.check(u_new)
        for j, a in enumerate(self.kernel.a):
            decay = math.exp(-a * dt)
            self.zeta[j] = self.zeta[j] * decay + u_new * (-math.expm1(-a * dt) / a)
        self.t += dt
        return self

    def translate(self, t):
        if t < 0:
            raise ValueError("translation time must be non-negative")
        other = self.copy()
        other.zeta = [z * math.exp(-a * t) for z, a in zip(self.zeta, self.kernel.a)]
        return other

    def memory_term(self, A):
        acc = np.zeros(self.grid.shape)
        for z, b, a in zip(self.zeta, self.kernel.b, self.kernel.a):
            acc = acc + (b * a) * z
        return A.apply(acc)

    def materialize(self):
        raise ConfigError("mode moments do not determine eta(s); use a ring buffer for norms")


def init_history(past, kernel, grid, dt=None, u0=None, representation="ring"):
    """Build the initial history state.

    ``past`` is a :class:`PastHistory`, ``None`` (zero past) or a callable
    ``y -> u(., -y)`` sampled on the s-grid.
    """
    if past is None:
        past = ZERO_PAST
    elif callable(past) and not isinstance(past, PastHistory):
        if dt is None:
            raise ConfigError("a sampled past needs dt to build the s-grid")
        past = SampledPast.from_function(past, history_nodes(kernel, dt))
    if representation == "ring":
        if dt is None:
            raise ConfigError("the ring buffer needs dt")
        return RingBuffer(kernel, grid, dt, u0=u0, past=past)
    if representation == "modes":
        return ModeBank(kernel, grid, past)
    raise ConfigError(f"unknown history representation {representation!r}", "/history")


def translate(eta, t):
    return eta.translate(t)


def evolve(eta, u_new, dt):
    return eta.evolve(u_new, dt)


def memory_term(eta, A, **kw):
    return eta.memory_term(A, **kw)


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class MemoryNormReport:
    r: int
    m_norm: float
    tail_U: float


def _stack_norms(A, values, r):
    return elliptic.v_norm_sq(A, values, r)


def m_norm(eta, A, r, kernel=None):
    """``||eta||_{M^r}`` and the tail functional at the same scale.

    ``||eta||^2 = sum_i w_i h(s_i) ||eta(s_i)||^2_{V^r}`` and
    ``U = 1/2 sum_i w_i kappa(s_i) ||eta(s_i)||^2_{V^r}``.
    """
    if r not in (1, 2):
        raise ConfigError(f"memory norms are defined for r in (1, 2), got {r!r}")
    sh = eta.materialize()
    sq = _stack_norms(A, sh.values, r)
    nsq = float(np.dot(sh.h_weights(), sq))
    U = 0.5 * float(np.dot(sh.kappa_weights(), sq))
    theta = sh.kernel.Theta
    if U > 0.5 * theta * nsq * (1 + 1e-12) + 1e-12:
        raise AssertionError(f"tail bound violated: U={U!r} > Theta/2 * {nsq!r}")
    return MemoryNormReport(r=r, m_norm=math.sqrt(max(nsq, 0.0)), tail_U=U)


def tail_terms(u, eta, A, r):
    """``(U, ||eta||^2, sum w kappa <u, eta>)`` at scale ``V^r``."""
    sh = eta.materialize()
    sq = _stack_norms(A, sh.values, r)
    cross = elliptic.v_inner(A, sh.values, np.broadcast_to(u, sh.values.shape), r)
    hw, kw = sh.h_weights(), sh.kappa_weights()
    return 0.5 * float(kw @ sq), float(hw @ sq), float(kw @ cross)


def tail_identity_series(trajectory, A, r, dt):
    """Per-step residual of ``dU/dt + 1/2 ||eta||^2 = int kappa <u, eta>`` at scale ``r+1``.

    ``trajectory`` is a sequence of ``(u, eta)`` at uniform spacing ``dt``;
    the right-hand terms are averaged over both ends of each step.
    """
    if len(trajectory) < 3:
        raise ConfigError("tail identity needs at least 3 samples")
    terms = np.array([tail_terms(u, eta, A, r + 1) for u, eta in trajectory])
    U, nsq, cross = terms.T
    rhs = 0.5 * (nsq[1:] + nsq[:-1]) * 0.5 - 0.5 * (cross[1:] + cross[:-1])
    return np.diff(U) / dt + rhs


def tail_identity_residual(trajectory, A, r, dt):
    return float(np.max(np.abs(tail_identity_series(trajectory, A, r, dt))))
