import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from memoryheat import history as hist
from memoryheat.elliptic import dirichlet_mode
from memoryheat.errors import ConfigError
from memoryheat.kernel import kernel_from_exponential_sum


def test_log_trapezoid_normalisation(two_modes):
    s = hist.history_nodes(two_modes, 1e-3)
    w = hist.log_trapezoid_weights(s)
    assert w @ (s * two_modes.h(s)) == pytest.approx(1.0, abs=1e-5)
    # the rule assumes the integrand vanishes at s = 0
    exact = 1.0 - np.sum(two_modes.b * two_modes.a / (two_modes.a + 1.0))
    assert w @ (-np.expm1(-s) * two_modes.kappa(s)) == pytest.approx(exact, abs=1e-5)


def test_history_nodes(single_mode):
    s = hist.history_nodes(single_mode, 1e-3)
    assert s[0] == pytest.approx(1e-3) and s[-1] == single_mode.s_max
    assert np.all(np.diff(np.log(s)) > 0)


def test_sampled_past_matches_closed_form(single_mode, grid16):
    g = dirichlet_mode(grid16)
    s = hist.history_nodes(single_mode, 1e-2)
    for kind, rate in (("constant", 0.0), ("exp", 0.7)):
        exact = hist.SeparablePast(kind, g, rate)
        sampled = hist.SampledPast.from_function(lambda y: exact.psi(y) * g, s)
        np.testing.assert_allclose(sampled.values, exact.eta0(s), atol=1e-8)
        assert np.max(np.abs(sampled.memory_tail(single_mode, 0.3)
                             - exact.memory_tail(single_mode, 0.3))) < 1e-4
        for a, b in zip(sampled.mode_init(single_mode), exact.mode_init(single_mode)):
            np.testing.assert_allclose(a, b, atol=1e-4)


def test_past_errors(single_mode):
    with pytest.raises(ConfigError):
        hist.SeparablePast("linear")
    with pytest.raises(ConfigError):
        hist.SeparablePast("exp", rate=0.0)
    with pytest.raises(ConfigError):
        hist.SampledPast.from_function(lambda y: 1 / 0, np.array([0.1, 1.0]))


def test_ring_buffer_reconstructs_linear_u(single_mode, grid16):
    g = dirichlet_mode(grid16)
    dt = 0.01
    rb = hist.RingBuffer(single_mode, grid16, dt, u0=0 * g)
    for n in range(1, 51):
        rb.evolve(n * dt * g)
    t = rb.t
    s = np.array([0.0, 0.013, 0.25, t, t + 0.5])
    # u(t - y) = (t - y) g for y <= t, zero past beyond
    expect = np.where(s <= t, t * s - 0.5 * s**2, 0.5 * t**2)
    np.testing.assert_allclose(rb.eta(s), expect[:, None, None] * g, atol=1e-13)


def test_ring_buffer_wraps_beyond_horizon(grid16):
    kern = kernel_from_exponential_sum([(1.0, 10.0)])
    g = dirichlet_mode(grid16)
    dt = 0.01
    rb = hist.RingBuffer(kern, grid16, dt, u0=g)
    for _ in range(1000):
        rb.evolve(g)
    assert rb.capacity == rb.cap_max
    s = np.array([0.5, 2.0, kern.s_max])
    np.testing.assert_allclose(rb.eta(s), s[:, None, None] * g, atol=1e-12)
    with pytest.raises(ConfigError):
        rb.evolve(g, dt=0.02)


@pytest.mark.parametrize("representation", ["ring", "modes"])
def test_constant_state_memory_term(two_modes, grid16, lap16, representation):
    g = dirichlet_mode(grid16)
    past = hist.SeparablePast("constant", g)
    eta = hist.init_history(past, two_modes, grid16, dt=1e-2, u0=g, representation=representation)
    for _ in range(20):
        eta.evolve(g, 1e-2)
    np.testing.assert_allclose(eta.memory_term(lap16), lap16.apply(g), rtol=1e-10, atol=1e-8)


def test_memory_methods_agree(two_modes, grid16, lap16):
    g = dirichlet_mode(grid16)
    dt = 1e-2
    rb = hist.RingBuffer(two_modes, grid16, dt, u0=g, past=hist.SeparablePast("exp", g, 1.0))
    for n in range(1, 60):
        rb.evolve(math.cos(n * dt) * g)
    a = rb.memory_term(lap16, method="kappa")
    b = rb.memory_term(lap16, method="quadrature")
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-3
    with pytest.raises(ConfigError):
        rb.memory_term(lap16, method="simpson")


def test_mode_bank_single_step_exact(single_mode, grid16, lap16):
    g = dirichlet_mode(grid16)
    mb = hist.ModeBank(single_mode, grid16)
    mb.evolve(g, 0.5)
    # zeta' = -zeta + g from zero gives (1 - e^{-t}) g
    np.testing.assert_allclose(mb.zeta[0], -math.expm1(-0.5) * g, rtol=1e-14)
    tr = mb.translate(0.3)
    np.testing.assert_allclose(tr.zeta[0], math.exp(-0.3) * mb.zeta[0])
    with pytest.raises(ConfigError):
        mb.materialize()


def test_single_mode_translation_factor(single_mode, grid16, lap16, rng):
    s = hist.history_nodes(single_mode, 1e-2)
    vals = np.cumsum(rng.standard_normal((len(s),) + grid16.shape), axis=0) * 0.01
    eta = hist.SampledHistory(s, vals, single_mode)
    base = hist.m_norm(eta, lap16, 1).m_norm
    for t in (0.1, 1.0, 3.0):
        moved = hist.m_norm(eta.translate(t), lap16, 1).m_norm
        assert moved**2 == pytest.approx(math.exp(-t) * base**2, rel=1e-12)


def test_translate_evaluate(single_mode, grid16):
    s = np.array([0.1, 0.2, 0.4])
    vals = np.stack([k * np.ones(grid16.shape) for k in (1.0, 2.0, 4.0)])
    eta = hist.SampledHistory(s, vals, single_mode).translate(0.1)
    out = eta.evaluate(np.array([0.05, 0.2, 0.4, 1.0]))
    np.testing.assert_allclose(out[:, 0, 0], [0.0, 1.0, 3.0, 4.0])
    with pytest.raises(ValueError):
        eta.translate(-1.0)


def test_tail_identity_along_exact_history(single_mode, grid16, lap16):
    g = dirichlet_mode(grid16)
    errs = []
    for dt in (0.02, 0.01):
        rb = hist.RingBuffer(single_mode, grid16, dt, u0=g, past=hist.SeparablePast("constant", g))
        traj = []
        for n in range(int(round(0.4 / dt)) + 1):
            if n:
                rb.evolve(math.cos(n * dt) * g)
            traj.append((rb.latest(), rb.materialize(hist.history_nodes(single_mode, 0.01))))
        errs.append(hist.tail_identity_residual(traj, lap16, 0, dt))
    scale = hist.m_norm(traj[-1][1], lap16, 1).m_norm ** 2
    assert max(errs) < 1e-2 * scale


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0),
       st.lists(st.tuples(st.floats(0.1, 1), st.floats(0.2, 8)), min_size=1, max_size=3))
def test_translation_contracts(seed, t, modes):
    from memoryheat.elliptic import laplacian
    from memoryheat.grid import Grid

    grid = Grid(6, 6)
    A = laplacian(grid)
    kern = kernel_from_exponential_sum(modes, rescale=True)
    s = hist.history_nodes(kern, 0.05, per_decade=16)
    vals = np.random.default_rng(seed).standard_normal((len(s),) + grid.shape)
    eta = hist.SampledHistory(s, vals, kern)
    for r in (1, 2):
        before = hist.m_norm(eta, A, r)
        after = hist.m_norm(eta.translate(t), A, r)
        assert after.m_norm <= before.m_norm * (1 + 1e-12)
        assert after.tail_U <= 0.5 * kern.Theta * after.m_norm**2 * (1 + 1e-12) + 1e-300
