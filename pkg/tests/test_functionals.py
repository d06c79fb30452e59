import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_nls.errors import NotPositiveDefinite
from coupled_nls.functionals import (FunctionalContext, State, dual_residual, energy_E, functional_J, functional_P,
                                     psi, sobolev_gradient)
from coupled_nls.grid import sphere_area
from coupled_nls.model import ProblemSpec, benchmark_problem
from coupled_nls.pencil import sign_normalize


def _energy_by_hand(ctx, x):
    # face-by-face sum rebuilt from node coordinates
    g = ctx.grid
    N = g.spec.dimension
    total = 0.0
    for u, b in ((x[: ctx.n], ctx.potentials.b1), (x[ctx.n:], ctx.potentials.b2)):
        full = g.extend(u)
        for k in range(g.nodes.size - 1):
            rf = 0.5 * (g.nodes[k] + g.nodes[k + 1])
            h = g.nodes[k + 1] - g.nodes[k]
            total += 0.5 * sphere_area(N) * rf ** (N - 1) * (full[k + 1] - full[k]) ** 2 / h
        total += 0.5 * np.sum(g.quad_weights * b * u * u)
    return total


def test_energy_matches_hand_sum(small_ctx, rng):
    x = rng.standard_normal(2 * small_ctx.n)
    assert energy_E(small_ctx, x) == pytest.approx(_energy_by_hand(small_ctx, x), rel=1e-12)


def test_coupling_and_potential_by_hand(small_ctx, rng):
    x = rng.standard_normal(2 * small_ctx.n)
    u1, u2 = x[: small_ctx.n], x[small_ctx.n:]
    w = small_ctx.w
    assert functional_J(small_ctx, x) == pytest.approx(0.5 * np.sum(w * (u1 + u2) ** 2), rel=1e-12)
    assert functional_P(small_ctx, State(u1, u2)) == pytest.approx(np.sum(w * (u1**2 + u2**2) ** 2) / 4, rel=1e-12)


def test_psi_composition(small_ctx, rng):
    x = rng.standard_normal(2 * small_ctx.n)
    lam = 0.37
    expected = energy_E(small_ctx, x) - lam * functional_J(small_ctx, x) - functional_P(small_ctx, x)
    assert psi(small_ctx, x, lam) == pytest.approx(expected, rel=1e-12)


def test_zero_state(small_ctx):
    z = State.zeros(small_ctx.n)
    assert psi(small_ctx, z, 1.0) == 0.0
    assert np.all(dual_residual(small_ctx, z, 1.0).flat == 0)


def test_sobolev_gradient_solves_energy_system(small_ctx, rng):
    x = rng.standard_normal(2 * small_ctx.n)
    g = sobolev_gradient(small_ctx, x, 0.5).flat
    r = dual_residual(small_ctx, x, 0.5).flat
    assert np.allclose(small_ctx.A @ g, r, rtol=1e-10, atol=1e-10 * np.abs(r).max())


def test_jacobian_is_residual_derivative(small_ctx, rng):
    x = rng.standard_normal(2 * small_ctx.n)
    v = rng.standard_normal(2 * small_ctx.n)
    h = 1e-6
    fd = (small_ctx.residual(x + h * v, 0.3) - small_ctx.residual(x - h * v, 0.3)) / (2 * h)
    assert np.allclose(small_ctx.jacobian(x, 0.3) @ v, fd, rtol=1e-6, atol=1e-6 * np.abs(fd).max())


def test_state_arithmetic():
    a = State(np.ones(3), np.zeros(3))
    b = State.from_flat(np.arange(6.0))
    assert np.allclose((a + b).flat, [1, 2, 3, 3, 4, 5])
    assert np.allclose((2 * a - b).flat, [2, 1, 0, -3, -4, -5])
    assert np.allclose((-a).u1, -1)
    with pytest.raises(ValueError):
        State(np.ones(2), np.ones(3))


def test_wrong_length_rejected(small_ctx):
    with pytest.raises(ValueError):
        energy_E(small_ctx, np.ones(3))


def test_indefinite_stiffness_rejected(small_grid):
    K = -sp.identity(small_grid.size, format="csr") * 1e3
    with pytest.raises(NotPositiveDefinite):
        FunctionalContext.from_problem(benchmark_problem(small_grid), stiffness=K)


def test_wide_stencil_rejected(small_grid):
    K = small_grid.stiffness.tolil()
    K[0, 2] = K[2, 0] = -1e-3
    with pytest.raises(NotPositiveDefinite):
        FunctionalContext.from_problem(benchmark_problem(small_grid), stiffness=K.tocsr())


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), lam=st.floats(-5, 5))
def test_sign_flip_invariance(small_grid, seed, lam):
    rng = np.random.default_rng(seed)
    prob = benchmark_problem(small_grid, lam=lam)
    flipped = ProblemSpec(small_grid, prob.potentials.negated(), prob.nonlinearity, -lam)
    if lam < 0:
        assert sign_normalize(prob).lam == -lam
    a = FunctionalContext.from_problem(prob)
    b = FunctionalContext.from_problem(flipped)
    x = rng.standard_normal(2 * a.n)
    pa, pb = a.psi(x, prob.lam), b.psi(x, flipped.lam)
    assert abs(pa - pb) <= 1e-12 * (1 + abs(pa))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(0.1, 3.0))
def test_energy_is_quadratic_and_positive(small_ctx, seed, c):
    x = np.random.default_rng(seed).standard_normal(2 * small_ctx.n)
    e = small_ctx.energy(x)
    assert e > 0
    assert small_ctx.energy(c * x) == pytest.approx(c * c * e, rel=1e-12)
