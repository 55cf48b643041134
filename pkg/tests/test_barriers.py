from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stefanlab.barriers import (
    BarrierTrajectory,
    annulus_omega,
    attach_negative_part,
    certify_ordering,
    certify_report,
    dilation_depth,
    inf_convolution_supersolution,
    one_phase_supersolution,
    radial_cap_barrier,
    radial_cap_closed_form,
    stencil_radius,
    sup_convolution_subsolution,
    supersolution_audit,
)
from stefanlab.geometry import Grid, ScalarField, bilinear_sample, build_star_domain
from stefanlab.stefan import SolverConfig, initial_state, run

GRID = Grid.covering_box(1.0, 1.0 / 64)


def field(fn, grid=GRID, t=0.0):
    X, Y = grid.coords()
    return ScalarField(grid, np.asarray(fn(X, Y), dtype=float) * np.ones(grid.shape), t)


def test_constant_omega_gives_constant_phi():
    phi = inf_convolution_supersolution(field(lambda X, Y: 0.3), 0.2, horizon=0.01)
    for f in phi.fields:
        assert np.all(f.values == 0.3)
    assert phi.kind == "supersolution"


def test_cone_omega_is_eroded_by_the_stencil_radius():
    r, b = 0.3, 1.25
    omega = field(lambda X, Y: np.hypot(X, Y))
    phi = inf_convolution_supersolution(omega, r, b, times=[0.0, 0.01])
    X, Y = GRID.coords()
    inner = np.hypot(X, Y) < 0.7
    for f in phi.fields:
        rho = stencil_radius(f.t, r, b, 0.0)
        exact = np.maximum(np.hypot(X, Y) - rho, 0.0)
        # the node disk reaches within one cell of the exact disk
        assert np.max(np.abs(f.values - exact)[inner]) <= GRID.h


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), r=st.floats(0.07, 0.5))
def test_inf_convolution_lies_below_omega_and_rises_in_time(seed, r):
    rng = np.random.default_rng(seed)
    g = Grid.covering_box(0.5, 1.0 / 32)
    omega = ScalarField(g, rng.random(g.shape))
    phi = inf_convolution_supersolution(omega, r, times=[0.0, 0.002, 0.02])
    prev = None
    for f in phi.fields:
        assert np.all(f.values <= omega.values)
        if prev is not None:
            assert np.all(f.values >= prev)
        prev = f.values


def test_stencil_radius_recedes_linearly_then_stops():
    r, b = 0.2, 1.25
    assert stencil_radius(0.0, r, b, 0.0) == pytest.approx(r**b)
    speed = 0.5 * r ** (b - 2)
    assert stencil_radius(0.001, r, b, 0.0) == pytest.approx(r**b - speed * 0.001)
    assert stencil_radius(1.0, r, b, 0.0) == 0.0


def test_inf_convolution_rejects_bad_parameters():
    om = field(lambda X, Y: 1.0)
    with pytest.raises(ValueError, match="b must"):
        inf_convolution_supersolution(om, 0.2, 1.3, horizon=0.01)
    with pytest.raises(ValueError, match="r must"):
        inf_convolution_supersolution(om, 1.2, horizon=0.01)
    with pytest.raises(ValueError, match="nonnegative"):
        inf_convolution_supersolution(field(lambda X, Y: -1.0), 0.2, horizon=0.01)
    with pytest.raises(ValueError, match="too small"):
        inf_convolution_supersolution(om, 0.01, horizon=0.01)
    with pytest.raises(ValueError, match="horizon or times"):
        inf_convolution_supersolution(om, 0.2)


def test_annulus_omega_on_a_circle_matches_the_radial_solution():
    dom = build_star_domain(7, 0.0, 0.5, mean_radius=1.0)
    g = Grid.covering_box(1.5, 1.0 / 128)
    r, b = 0.1, 1.25
    w = annulus_omega(dom, r, g, b=b)
    s = 1.0 + 4.0 * r**b
    X, Y = g.coords()
    rho = np.hypot(X, Y)
    band = (rho > 1.0) & (rho < s)
    exact = r ** (13 / 24) * np.log(s / np.maximum(rho, g.h)) / math.log(s)
    assert np.max(np.abs(w.values - exact)[band]) <= 1e-3 * r ** (13 / 24)
    assert np.all(w.values[rho < 1.0 - g.h] == 0.0)
    assert np.all(w.values[rho > s + g.h] == 0.0)


def test_audit_compares_recession_speed_with_edge_gradient():
    phi = inf_convolution_supersolution(field(lambda X, Y: np.maximum(0.5 - np.hypot(X, Y), 0.0)), 0.2, times=[0.0])
    audit = supersolution_audit(phi)
    assert audit["speed"] == pytest.approx(0.5 * 0.2 ** (1.25 - 2))
    # a unit-slope cone: one cell difference is at most h, so the gradient is at most 1
    assert 0.0 < audit["gradient"] <= 1.0 + 1e-12
    assert audit["margin"] == pytest.approx(audit["speed"] - audit["gradient"])


def plus_trajectory(fn, times, grid=GRID):
    return BarrierTrajectory([field(fn, grid, t) for t in times], "supersolution")


def test_sup_convolution_of_zero_is_zero():
    U1 = plus_trajectory(lambda X, Y: 0.0, [0.0, 0.1])
    X, Y = GRID.coords()
    reg = np.hypot(X, Y) < 0.5
    U2 = sup_convolution_subsolution(U1, 0.25, length=0.2, region=reg)
    for f in U2.fields:
        assert np.all(f.values[reg] == 0.0)
    assert U2.kind == "subsolution"


def test_small_eps_leaves_a_linear_field_nearly_unchanged():
    U1 = plus_trajectory(lambda X, Y: 2.0 + X, [0.0, 0.3])
    X, Y = GRID.coords()
    reg = np.hypot(X, Y) < 0.8
    U2 = sup_convolution_subsolution(U1, 1e-4, length=1.0, region=reg)
    for a, b in zip(U1.fields, U2.fields):
        assert np.max(np.abs(a.values - b.values)[reg]) <= 2 * GRID.h * 1.0
        assert np.all(np.isnan(b.values[~reg]))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), eps=st.floats(0.01, 0.5), cx=st.floats(-0.2, 0.2))
def test_sup_convolution_dominates_the_scaled_dilation(seed, eps, cx):
    rng = np.random.default_rng(seed)
    g = Grid.covering_box(0.5, 1.0 / 32)
    U1 = BarrierTrajectory([ScalarField(g, rng.random(g.shape) - 0.3, 0.0)], "supersolution")
    X, Y = g.coords()
    reg = np.hypot(X - cx, Y) < 0.1
    U2 = sup_convolution_subsolution(U1, eps, center=(cx, 0.0), length=0.1, region=reg)
    se = math.sqrt(eps)
    P = np.stack([cx + (1 + se) * (X[reg] - cx), (1 + se) * Y[reg]], axis=-1)
    dil = bilinear_sample(g, np.maximum(U1.fields[0].values, 0.0), P)
    assert np.all(U2.fields[0].values[reg] >= (1 - eps) * dil - 1e-15)


def test_sup_convolution_moving_center_matches_a_fixed_one_at_each_time():
    U1 = plus_trajectory(lambda X, Y: np.maximum(-X, 0.0), [0.0, 0.05])
    X, Y = GRID.coords()
    reg = np.hypot(X, Y) < 0.2
    moving = sup_convolution_subsolution(U1, 0.1, center=lambda c: (-0.1 * (1 + c), 0.0), length=0.1, region=reg)
    for f, m in zip(U1.fields, moving.fields):
        c = f.t**0.8
        single = BarrierTrajectory([f], "supersolution")
        fixed = sup_convolution_subsolution(single, 0.1, center=(-0.1 * (1 + c), 0.0), length=0.1, region=reg)
        np.testing.assert_array_equal(m.values, fixed.fields[0].values)


def test_sup_convolution_errors():
    U1 = plus_trajectory(lambda X, Y: 1.0, [0.0, 2.0])
    with pytest.raises(ValueError, match="eps"):
        sup_convolution_subsolution(U1, 1.0)
    X, Y = GRID.coords()
    with pytest.raises(ValueError, match="exceeds 1"):
        sup_convolution_subsolution(U1, 0.1, region=np.hypot(X, Y) < 0.2)
    with pytest.raises(ValueError, match="exits the grid"):
        sup_convolution_subsolution(plus_trajectory(lambda X, Y: 1.0, [0.0]), 0.25, center=(-0.9, 0.0))


def test_dilation_depth_is_the_midpoint_of_the_admissible_interval():
    for eps in (0.01, 0.1, 0.3):
        se = math.sqrt(eps)
        for c in (0.0, 0.5, 1.0):
            lo = 1 + (1 + se) * (1 - c)
            hi = (1 + se) * (2 - c)
            assert dilation_depth(c, eps) == pytest.approx(0.5 * (lo + hi))
            assert lo < dilation_depth(c, eps) < hi


def two_phase_run(h=1.0 / 32):
    g = Grid.covering_box(1.0, h)
    X, Y = g.coords()
    u0 = ScalarField(g, 0.5 - np.hypot(X, Y) + 0.2 * np.cos(3 * np.arctan2(Y, X)) * np.exp(-4 * (X**2 + Y**2)))
    times = [0.0, 0.01, 0.02, 0.04]
    return u0, run(initial_state(u0, None, pin_rim=True), SolverConfig(), 0.04, times)


def test_one_phase_run_dominates_the_two_phase_run():
    u0, traj = two_phase_run()
    U1 = one_phase_supersolution(u0, SolverConfig(), list(traj.times))
    assert np.all(U1.fields[0].values >= 0)
    assert certify_ordering(traj, U1, np.ones(u0.grid.shape, dtype=bool)) == 0.0


def test_attached_negative_part_recovers_a_planar_profile():
    g = Grid.covering_box(1.0, 1.0 / 128)
    plus = plus_trajectory(lambda X, Y: np.maximum(-X, 0.0), [0.0], g)
    U = attach_negative_part(plus, (0.0, 0.0), 0.5, lambda P, t: np.maximum(P[..., 0], 0.0))
    X, Y = g.coords()
    inb = np.hypot(X, Y) < 0.5
    # harmonic in the half disk with 0 on the diameter and x on the arc: -x itself
    assert np.max(np.abs(U.fields[0].values[inb] + X[inb])) <= 1e-3
    assert np.all(np.isnan(U.fields[0].values[~inb]))


def test_radial_cap_matches_its_closed_form():
    g = Grid.covering_box(0.5, 1.0 / 256)
    r, C2, C3 = 0.2, 1.0, 0.1
    times = [0.0, 0.05, 0.1]
    cap = radial_cap_barrier((0.0, 0.0), r, C2, C3, 0.0, g, times)
    X, Y = g.coords()
    P = np.stack([X, Y], axis=-1)
    top = 2 * C2 * r**1.25
    for f in cap.fields:
        exact = radial_cap_closed_form(P, (0.0, 0.0), r, C2, C3, 0.0, f.t)
        assert np.max(np.abs(f.values - exact)) <= 0.01 * top
    rin = 0.5 * r**1.25 - C3 * 0.1
    assert cap.params["inner_gradient"] == pytest.approx(top / (rin * math.log(2 * r**1.25 / rin)))


def test_static_cap_does_not_change_in_time():
    g = Grid.covering_box(0.5, 1.0 / 128)
    cap = radial_cap_barrier((0.0, 0.0), 0.2, 1.0, 0.0, 0.0, g, [0.0, 0.1])
    np.testing.assert_array_equal(cap.fields[0].values, cap.fields[1].values)


def test_cap_rejects_degenerate_annuli():
    g = Grid.covering_box(0.5, 1.0 / 64)
    with pytest.raises(ValueError, match="within 2h"):
        radial_cap_barrier((0.0, 0.0), 0.2, 1.0, 1.0, 0.0, g, [0.1])
    with pytest.raises(ValueError, match="cover"):
        radial_cap_barrier((0.45, 0.0), 0.2, 1.0, 0.0, 0.0, g, [0.0])


def test_certificates_of_trivial_barriers_are_zero():
    u0, traj = two_phase_run()
    everywhere = lambda P: np.ones(P.shape[:-1], dtype=bool)  # noqa: E731
    big = BarrierTrajectory([ScalarField(u0.grid, np.full(u0.grid.shape, 10.0), t) for t in traj.times], "supersolution")
    assert certify_ordering(traj, big, everywhere) == 0.0
    same = BarrierTrajectory([s.u for s in traj.states], "supersolution")
    assert certify_ordering(traj, same, everywhere) == 0.0
    assert certify_ordering(traj, same.retagged("subsolution"), everywhere) == 0.0
    low = BarrierTrajectory([ScalarField(u0.grid, np.full(u0.grid.shape, 2.0), t) for t in traj.times], "subsolution")
    rep = certify_report(traj, low, everywhere)
    assert rep.max_violation == pytest.approx(2.0 - float(np.min(traj.states[-1].u.values)), rel=0.5)
    assert all(row.max_violation > 0 for row in rep.rows)


def test_certificate_errors():
    u0, traj = two_phase_run()
    b = BarrierTrajectory([ScalarField(u0.grid, np.zeros(u0.grid.shape), 0.5)], "supersolution")
    with pytest.raises(ValueError, match="mismatched"):
        certify_report(traj, b, np.ones(u0.grid.shape, dtype=bool))
    with pytest.raises(ValueError, match="must match"):
        certify_report(traj, b, np.ones((3, 3), dtype=bool))
    nan = BarrierTrajectory([ScalarField(u0.grid, np.full(u0.grid.shape, np.nan), 0.0)], "supersolution")
    with pytest.raises(ValueError, match="undefined"):
        certify_report(traj, nan, np.ones(u0.grid.shape, dtype=bool))


def test_report_csv(tmp_path):
    u0, traj = two_phase_run()
    same = BarrierTrajectory([s.u for s in traj.states], "supersolution")
    rep = certify_report(traj, same, np.ones(u0.grid.shape, dtype=bool))
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "t,max_violation,argmax_x,argmax_y"
    assert len(lines) == 1 + len(traj)


def test_barrier_manifest_roundtrip(tmp_path):
    phi = inf_convolution_supersolution(field(lambda X, Y: np.hypot(X, Y)), 0.3, times=[0.0, 0.01])
    man = phi.save(tmp_path / "phi")
    back = BarrierTrajectory.load(man)
    assert back.kind == phi.kind and back.params == phi.params
    for a, b in zip(phi.fields, back.fields):
        assert a.t == b.t
        np.testing.assert_array_equal(a.values, b.values)


def test_barrier_manifest_errors(tmp_path):
    phi = inf_convolution_supersolution(field(lambda X, Y: 1.0), 0.3, times=[0.0])
    man = phi.save(tmp_path / "phi")
    text = man.read_text()
    man.write_text(text.replace("kind supersolution\n", ""))
    with pytest.raises(ValueError, match="missing kind"):
        BarrierTrajectory.load(man)
    man.write_text(text + "garbage line\n")
    with pytest.raises(ValueError, match="malformed"):
        BarrierTrajectory.load(man)
    with pytest.raises(ValueError, match="kind must"):
        BarrierTrajectory(phi.fields, "other")
    with pytest.raises(ValueError, match="at least one"):
        BarrierTrajectory([], "supersolution")
    with pytest.raises(ValueError, match="nondecreasing"):
        BarrierTrajectory([field(lambda X, Y: 0.0, t=1.0), field(lambda X, Y: 0.0, t=0.0)], "supersolution")


def test_shifted_barrier_translates_values():
    B = plus_trajectory(lambda X, Y: X + 2 * Y, [0.0])
    S = B.shifted((0.25, -0.125))
    X, Y = GRID.coords()
    ok = ~np.isnan(S.fields[0].values)
    np.testing.assert_allclose(S.fields[0].values[ok], (X - 0.25 + 2 * (Y + 0.125))[ok], atol=1e-12)
    assert np.isnan(S.fields[0].values[0, 0])
