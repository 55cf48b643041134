from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefanlab.elliptic import (
    MaskedRegion,
    acf_phi,
    band_region,
    build_initial_data,
    flux_product_check,
    growth_exponents,
    harmonic_pair,
    laplacian_bound,
    loglog_slope,
    planar_initial_data,
    solve_dirichlet,
)
from stefanlab.geometry import Grid, ProbeSet, ScalarField, build_probes, build_star_domain, field_from_function


def circle_level(radius):
    return lambda P: np.hypot(P[..., 0], P[..., 1]) - radius


def radial_annulus(r):
    """Harmonic in 0.5 < |x| < 1 with 1 inside and 0 outside."""
    return np.log(r) / np.log(0.5)


@pytest.fixture(scope="module")
def circle_u0():
    dom = build_star_domain(7, 0.0, 0.5)
    grid = Grid.covering_box(4.0, 1.0 / 64)
    return build_initial_data(dom, 4.0, grid), dom


def test_annulus_matches_the_radial_closed_form():
    h = 1.0 / 64
    grid = Grid.covering_box(1.25, h)
    reg = band_region(grid, circle_level(0.5), 1.0, circle_level(1.0), 0.0)
    sol = solve_dirichlet(reg)
    assert sol.residual < 1e-8
    assert radial_annulus(0.9) == pytest.approx(0.15200, abs=5e-6)
    assert float(sol.field.sample([0.9, 0.0])) == pytest.approx(0.15200, abs=2 * h)
    X, Y = grid.coords()
    r = np.hypot(X, Y)
    err = np.abs(sol.field.values - radial_annulus(np.clip(r, 0.5, 1.0)))[reg.inside]
    assert err.max() < 2 * h


def test_constant_data_gives_constant_field():
    grid = Grid.covering_box(1.25, 1.0 / 32)
    reg = band_region(grid, circle_level(0.3), 2.5, circle_level(1.0), 2.5)
    sol = solve_dirichlet(reg)
    assert np.allclose(sol.field.values[reg.inside], 2.5, atol=1e-9)


def test_linear_data_is_reproduced_exactly_on_a_box():
    grid = Grid.covering_box(1.0, 1.0 / 16)
    X, Y = grid.coords()
    inside = np.zeros(grid.shape, dtype=bool)
    inside[1:-1, 1:-1] = True
    lin = 0.3 * X - 1.2 * Y + 0.7
    sol = solve_dirichlet(MaskedRegion(grid, inside, lin))
    assert np.max(np.abs(sol.field.values - lin)) < 1e-9


def test_callable_data_on_cut_points():
    # harmonic x*y on an annulus: cut-point data makes the scheme second order
    grid = Grid.covering_box(1.25, 1.0 / 64)
    xy = lambda P: P[..., 0] * P[..., 1]  # noqa: E731
    reg = band_region(grid, circle_level(0.4), xy, circle_level(1.0), xy)
    sol = solve_dirichlet(reg)
    X, Y = grid.coords()
    assert np.max(np.abs(sol.field.values - X * Y)[reg.inside]) < 1e-3


def test_region_touching_the_edge_is_rejected():
    grid = Grid.covering_box(1.0, 0.25)
    inside = np.ones(grid.shape, dtype=bool)
    with pytest.raises(ValueError, match="edge"):
        MaskedRegion(grid, inside, np.zeros(grid.shape))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_discrete_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    grid = Grid.covering_box(1.0, 1.0 / 16)
    inside = np.zeros(grid.shape, dtype=bool)
    inside[1:-1, 1:-1] = rng.random((grid.ny - 2, grid.nx - 2)) < 0.9
    bv = rng.uniform(-3, 5, grid.shape)
    sol = solve_dirichlet(MaskedRegion(grid, inside, bv))
    v = sol.field.values[inside]
    lo, hi = bv[~inside].min(), bv[~inside].max()
    assert v.min() >= lo - 1e-9 and v.max() <= hi + 1e-9


def test_initial_data_on_a_circle(circle_u0):
    u0, dom = circle_u0
    h = u0.grid.h
    assert float(u0.sample([0.9, 0.0])) == pytest.approx(0.15200, abs=2 * h)
    assert float(u0.sample([0.0, 0.5 + 0.4])) == pytest.approx(0.15200, abs=2 * h)
    # outside: -ln(|x|)/ln(4) on [1, 4]
    assert float(u0.sample([1.1, 0.0])) == pytest.approx(-math.log(1.1) / math.log(4.0), abs=2 * h)
    X, Y = u0.grid.coords()
    assert np.all(u0.values[np.hypot(X, Y) >= 4.0] == -1.0)
    assert np.all(u0.values[np.hypot(X, Y) <= 0.5] == 1.0)


def test_initial_data_is_radial(circle_u0):
    u0, _ = circle_u0
    th = np.linspace(0, 2 * np.pi, 13)
    for r in (0.7, 0.95, 1.5, 3.0):
        vals = u0.sample(np.stack([r * np.cos(th), r * np.sin(th)], axis=-1))
        assert np.ptp(vals) < 2 * u0.grid.h


def test_initial_data_rejects_thin_collar():
    dom = build_star_domain(7, 0.0, 0.5)
    with pytest.raises(ValueError, match="collar"):
        build_initial_data(dom, 4.0, Grid.covering_box(4.0, 1.0 / 8), collar=0.1)


def test_laplacian_vanishes_away_from_the_data_rings(circle_u0):
    u0, _ = circle_u0
    X, Y = u0.grid.coords()
    r = np.hypot(X, Y)
    h = u0.grid.h
    rings = (np.abs(r - 0.5) < 2 * h) | (np.abs(r - 1.0) < 2 * h) | (r > 4.0 - 2 * h)
    assert laplacian_bound(u0, exclude=rings) < 1e-6


def test_growth_exponents_on_a_circle(circle_u0):
    u0, dom = circle_u0
    probes = build_probes(dom, 8, np.geomspace(1.0 / 16, 0.1, 5))
    fit = growth_exponents(u0, dom, probes)
    assert 0.95 <= fit.beta_hat <= fit.alpha_hat <= 1.05


def test_growth_exponent_of_an_exact_power_law():
    grid = Grid.covering_box(1.0, 1.0 / 128)
    f = field_from_function(grid, lambda X, Y: np.maximum(-X, 0.0) ** 1.1)
    probes = ProbeSet(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]), np.geomspace(0.05, 0.5, 6))
    fit = growth_exponents(f, None, probes, collar=0.5)
    assert fit.alpha_hat == pytest.approx(1.1, abs=0.01)


def test_growth_exponents_on_a_perturbed_domain():
    dom = build_star_domain(7, 0.2, 0.5)
    grid = Grid.covering_box(4.0, 1.0 / 64)
    u0 = build_initial_data(dom, 4.0, grid)
    probes = build_probes(dom, 16, np.geomspace(1.0 / 16, 0.1, 5))
    fit = growth_exponents(u0, dom, probes)
    assert fit.alpha_hat <= 7 / 6 + 0.05
    assert fit.beta_hat >= 5 / 6 - 0.05


def test_growth_fit_validates_scales(circle_u0):
    u0, dom = circle_u0
    with pytest.raises(ValueError, match="collar"):
        growth_exponents(u0, dom, build_probes(dom, 4, [0.05, 0.1, 0.3]))
    with pytest.raises(ValueError, match="3 scales"):
        growth_exponents(u0, dom, build_probes(dom, 4, [0.05, 0.1]))


def test_loglog_slope_of_a_line():
    x = np.geomspace(0.01, 1, 9)
    slope, res = loglog_slope(x, 3 * x**0.75)
    assert slope == pytest.approx(0.75, abs=1e-12)
    assert res < 1e-12


def planar_pair(h, half=1.0):
    grid = Grid.covering_box(half, h)
    X, _ = grid.coords()
    return ScalarField(grid, np.maximum(X, 0.0)), ScalarField(grid, np.maximum(-X, 0.0))


def test_acf_of_planar_pair_is_pi_squared_over_four():
    h = 1.0 / 256
    hp, hm = planar_pair(h)
    radii = [0.25, 0.4, 0.6]
    series = acf_phi(hp, hm, (0.0, 0.0), radii)
    assert np.all(np.abs(series.phi / (math.pi**2 / 4) - 1) < 0.03)


def test_acf_with_empty_phase_is_zero():
    hp, _ = planar_pair(1.0 / 64)
    zero = hp.with_values(np.zeros(hp.grid.shape))
    series = acf_phi(hp, zero, (0.0, 0.0), [0.1, 0.2, 0.4])
    assert np.all(series.phi == 0.0)


def test_acf_is_monotone_on_a_harmonic_pair(tmp_path):
    dom = build_star_domain(7, 0.2, 0.5)
    h = 1.0 / 128
    pair = harmonic_pair(dom, 0.5, 2.0, Grid.covering_box(2.0, h))
    x0 = dom.boundary_point(0.3)
    radii = np.geomspace(8 * h, 0.3, 10)
    series = acf_phi(pair.hplus, pair.hminus, x0, radii)
    assert series.monotonicity_defect(h) <= 0.0
    series.to_csv(tmp_path / "acf.csv")
    lines = (tmp_path / "acf.csv").read_text().splitlines()
    assert lines[0] == "r,phi" and len(lines) == 11


def test_acf_rejects_overlapping_phases():
    grid = Grid.covering_box(1.0, 1.0 / 32)
    one = ScalarField(grid, np.ones(grid.shape))
    with pytest.raises(ValueError, match="overlap"):
        acf_phi(one, one, (0.0, 0.0), [0.2, 0.4])


def test_flux_product_on_symmetric_planar_data():
    grid = Grid.covering_box(1.0, 1.0 / 32)
    u = planar_initial_data(grid)
    hp = u.with_values(np.maximum(u.values, 0))
    hm = u.with_values(np.maximum(-u.values, 0))
    left, right = flux_product_check(hp, hm, (0.0, 0.0), 0.2, (1.0, 0.0))
    assert left == pytest.approx(1.0, abs=1e-12)
    assert right == pytest.approx(1.0, abs=1e-12)
    assert flux_product_check(hp, hm.with_values(np.zeros(grid.shape)), (0.0, 0.0), 0.2, (1.0, 0.0))[1] == 0.0


def test_flux_product_on_the_circle(circle_u0):
    u0, _ = circle_u0
    hp = u0.with_values(np.maximum(u0.values, 0))
    hm = u0.with_values(np.maximum(-u0.values, 0))
    left, right = flux_product_check(hp, hm, (1.0, 0.0), 0.1, collar=0.1)
    exact = (math.log(0.9) / math.log(0.5) / 0.1) * (math.log(1.1) / math.log(4.0) / 0.1)
    assert left * right == pytest.approx(exact, rel=0.05)
    assert left * right <= 10
    with pytest.raises(ValueError, match="collar"):
        flux_product_check(hp, hm, (1.0, 0.0), 0.2, collar=0.1)
