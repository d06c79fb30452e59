import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coupled_nls.grid import (GridMode, GridSpec, build_grid, critical_exponent, refinement_specs, sphere_area,
                              weighted_integral)


def test_sphere_area_known_values():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


def test_critical_exponent():
    assert critical_exponent(3) == 6.0
    assert math.isinf(critical_exponent(2))


@pytest.mark.parametrize("N", [1, 2, 3, 4])
def test_radial_weights_sum_to_ball_volume(N):
    g = build_grid(GridSpec(N, 5.0, 50))
    ball = sphere_area(N) / N * 5.0**N
    assert g.weights.sum() == pytest.approx(ball, rel=1e-13)


def test_radial_quadrature_second_order():
    # integral of exp(-r^2) over R^3 = pi^{3/2}
    errs = []
    for n in (100, 200, 400):
        g = build_grid(GridSpec(3, 8.0, n))
        errs.append(abs(weighted_integral(g, np.exp(-g.nodes**2)) - math.pi**1.5))
    assert errs[1] < errs[0] / 3.5 and errs[2] < errs[1] / 3.5


def test_full_line_trapezoid():
    g = build_grid(GridSpec(1, 6.0, 300, GridMode.FULL_LINE))
    assert weighted_integral(g, np.exp(-g.nodes**2)) == pytest.approx(math.sqrt(math.pi), rel=1e-10)
    assert g.size == 599 and g.x[0] == pytest.approx(-6.0 + 0.02)


def test_weighted_integral_rejects_bad_length():
    g = build_grid(GridSpec(3, 1.0, 10))
    with pytest.raises(ValueError):
        weighted_integral(g, np.ones(3))


def test_stiffness_energy_of_linear_function():
    # u = R - r on the radial grid in 1D: energy = integral of u'^2 over [-R, R] = 2R
    g = build_grid(GridSpec(1, 2.0, 40))
    u = 2.0 - g.x
    assert u @ (g.stiffness @ u) == pytest.approx(4.0, rel=1e-12)


@pytest.mark.parametrize("bad", [dict(dimension=0), dict(radius=-1.0), dict(n_nodes=4)])
def test_invalid_specs(bad):
    kw = dict(dimension=3, radius=1.0, n_nodes=10, **{})
    kw.update(bad)
    with pytest.raises(ValueError):
        build_grid(GridSpec(**kw))


def test_full_line_requires_dimension_one():
    with pytest.raises(ValueError):
        build_grid(GridSpec(2, 1.0, 10, GridMode.FULL_LINE))


def test_min_nodes_override():
    g = build_grid(GridSpec(1, 1.0, 3, GridMode.FULL_LINE), min_nodes=2)
    assert g.size == 5


def test_refinement_specs():
    base = GridSpec(3, 12.0, 400)
    specs = refinement_specs(base, n_nodes=[200, 400], radii=[16.0])
    assert [s.n_nodes for s in specs] == [200, 400, 533]
    assert specs[-1].radius == 16.0
    assert refinement_specs(base) == [base]


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 4), R=st.floats(0.5, 30.0), n=st.integers(8, 120),
       mode=st.sampled_from(list(GridMode)))
def test_grid_invariants(N, R, n, mode):
    if mode is GridMode.FULL_LINE:
        N = 1
    g = build_grid(GridSpec(N, R, n, mode))
    assert np.all(g.quad_weights > 0)
    K = g.stiffness.toarray()
    assert np.allclose(K, K.T)
    ev = np.linalg.eigvalsh(K)
    assert ev.min() > 0  # Dirichlet data makes the form definite
    assert np.count_nonzero(np.triu(K, 2)) == 0
