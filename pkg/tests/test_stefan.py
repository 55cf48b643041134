from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from stefanlab.elliptic import harmonic_pair, planar_initial_data
from stefanlab.geometry import Grid, ScalarField, build_star_domain
from stefanlab.stefan import (
    SolverConfig,
    SolverError,
    StefanState,
    Stepper,
    Trajectory,
    beta,
    enthalpy_balance,
    enthalpy_from_temperature,
    extract_front,
    front_distance,
    gradient_one_sided,
    initial_state,
    neumann_lambda,
    neumann_profile,
    neumann_residual,
    neumann_slab,
    run,
    slab_front,
    step,
)


@settings(max_examples=200, deadline=None)
@given(E=st.floats(-10, 10))
def test_beta_branches(E):
    u = float(beta(np.array(E)))
    if E <= 0:
        assert u == E
    elif E >= 1:
        assert u == pytest.approx(E - 1)
    else:
        assert u == 0.0


@settings(max_examples=200, deadline=None)
@given(u=st.floats(-10, 10))
def test_enthalpy_inverts_beta(u):
    assert float(beta(enthalpy_from_temperature(np.array(u)))) == pytest.approx(u, abs=1e-14)


def test_subcooled_constant_state_is_a_fixed_point():
    g = Grid.covering_box(1.0, 1.0 / 16)
    state = initial_state(ScalarField(g, -np.ones(g.shape)))
    traj = run(state, SolverConfig(), 0.01)
    assert np.array_equal(traj.states[-1].E.values, state.E.values)


def test_zero_horizon_keeps_only_the_initial_state():
    g = Grid.covering_box(1.0, 1.0 / 16)
    u0 = planar_initial_data(g)
    traj = run(u0, SolverConfig(), 0.0, [0.0, 0.1])
    assert len(traj) == 1
    assert np.array_equal(traj.states[0].u.values, u0.values)


def test_cfl_limits_are_enforced():
    with pytest.raises(ValueError):
        SolverConfig(cfl=0.95)
    with pytest.raises(ValueError, match="CFL"):
        SolverConfig(dt=1.0).time_step(0.1)
    assert SolverConfig().time_step(0.1) == pytest.approx(0.9 * 0.01 / 4)


def test_nonfinite_values_abort_with_the_cell():
    g = Grid.covering_box(1.0, 1.0 / 8)
    E = np.zeros(g.shape)
    E[3, 4] = np.nan
    with pytest.raises(SolverError, match=r"\(3, 4\)|cell"):
        step(StefanState(ScalarField(g, E), np.zeros(g.shape, dtype=bool)), SolverConfig())
    with pytest.raises(SolverError):
        Stepper(StefanState(ScalarField(g, E), None), SolverConfig()).advance(1)


def test_compiled_and_reference_steps_agree():
    rng = np.random.default_rng(3)
    g = Grid.covering_box(1.0, 1.0 / 16)
    state = initial_state(ScalarField(g, rng.uniform(-1, 1, g.shape)))
    ref = state
    for _ in range(7):
        ref = step(ref, SolverConfig())
    st_ = Stepper(state, SolverConfig())
    st_.advance(7)
    assert np.array_equal(st_.state().E.values, ref.E.values)


def test_neumann_lambda_solves_the_front_condition():
    for sh, sc in ((1.0, 0.0), (0.5, 0.5), (2.0, 1.0)):
        lam = neumann_lambda(sh, sc)
        assert abs(neumann_residual(lam, sh, sc)) <= 1e-10
        # independent root finder
        ref = brentq(lambda x: neumann_residual(x, sh, sc), 1e-9, 5.0, xtol=1e-15)
        assert lam == pytest.approx(ref, abs=1e-12)
    with pytest.raises(ValueError):
        neumann_lambda(0.0, 1.0)


def test_one_phase_neumann_lambda_matches_the_classical_value():
    # lam * exp(lam^2) * erf(lam) = St / sqrt(pi) with St = 1
    lam = neumann_lambda(1.0, 0.0)
    assert lam * math.exp(lam * lam) * math.erf(lam) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
    assert lam == pytest.approx(0.6201, abs=1e-4)


def test_neumann_profile_is_continuous_at_the_front():
    lam = neumann_lambda(1.0, 0.5)
    t = 0.3
    s = 2 * lam * math.sqrt(t)
    vals = neumann_profile(np.array([s - 1e-9, s + 1e-9]), t, 1.0, 0.5, lam)
    assert np.all(np.abs(vals) < 1e-6)


def slab_front_at(h, t, superheat=1.0, subcool=0.5):
    state = neumann_slab(h, 3.0, superheat, subcool)
    traj = run(state, SolverConfig(), t)
    return slab_front(traj.states[-1])


def test_slab_front_follows_the_similarity_solution():
    lam = neumann_lambda(1.0, 0.5)
    t = 0.2
    s = slab_front_at(1.0 / 256, t)
    assert abs(s - 2 * lam * math.sqrt(t)) / (2 * lam * math.sqrt(t)) < 0.02


def test_slab_front_self_converges():
    h = 1.0 / 128
    a = slab_front_at(h, 0.1)
    b = slab_front_at(h / 2, 0.1)
    assert abs(a - b) <= 2 * h


def test_slab_front_is_a_single_vertical_line():
    h = 1.0 / 64
    lam = neumann_lambda(1.0, 0.5)
    traj = run(neumann_slab(h, 2.0, 1.0, 0.5, rows=4), SolverConfig(), 0.1)
    front = extract_front(traj.states[-1])
    assert len(front.curves) == 1
    xs = front.points[:, 0]
    assert np.ptp(xs) < 1e-12
    assert abs(xs[0] - 2 * lam * math.sqrt(0.1)) <= 2 * h


def balance_state(seed, h=1.0 / 16):
    rng = np.random.default_rng(seed)
    g = Grid.covering_box(1.0, h)
    u = rng.uniform(-1.0, 1.0, g.shape)
    return initial_state(ScalarField(g, u), R=0.9)


def test_interior_enthalpy_changes_only_through_the_boundary():
    state = balance_state(0)
    cfg = SolverConfig()
    for _ in range(20):
        nxt = step(state, cfg)
        dE, flux = enthalpy_balance(state, nxt)
        total = float(np.sum(np.abs(state.E.values[~state.fixed])))
        assert abs(dE - flux) <= 1e-12 * total
        state = nxt


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), steps=st.integers(1, 40))
def test_ordered_enthalpies_stay_ordered(seed, steps):
    rng = np.random.default_rng(seed)
    g = Grid.covering_box(1.0, 1.0 / 16)
    E1 = rng.uniform(-2.0, 3.0, g.shape)
    E2 = E1 + rng.uniform(0.0, 0.5, g.shape) * (rng.random(g.shape) < 0.5)
    pin = np.zeros(g.shape, dtype=bool)
    pin[0, :] = pin[-1, :] = pin[:, 0] = pin[:, -1] = True
    s1 = Stepper(StefanState(ScalarField(g, E1), pin), SolverConfig())
    s2 = Stepper(StefanState(ScalarField(g, E2), pin), SolverConfig())
    s1.advance(steps)
    s2.advance(steps)
    assert np.all(s1.E <= s2.E)


def test_symmetric_planar_front_stays_put():
    h = 1.0 / 64
    g = Grid.covering_box(1.0, h)
    traj = run(initial_state(planar_initial_data(g), None), SolverConfig(), 0.1, np.linspace(0, 0.1, 11))
    for t in traj.times:
        assert abs(front_distance((0.0, 0.0), (1.0, 0.0), traj, float(t))) <= 2 * h


def test_front_distance_vanishes_at_time_zero():
    g = Grid.covering_box(1.0, 1.0 / 32)
    traj = run(initial_state(planar_initial_data(g, offset=0.1), None), SolverConfig(), 0.01)
    assert front_distance((0.1, 0.0), (1.0, 0.0), traj, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_cold_circle_shrinks_monotonically():
    # weak heat inside: |Du+| = 0.1/ln 2 < |Du-| = 1/ln 4 on the unit circle
    dom = build_star_domain(0, 0.0, 0.5)
    g = Grid.covering_box(4.0, 1.0 / 64)
    u0 = harmonic_pair(dom, 0.5, 4.0, g, inner_value=0.1).signed
    traj = run(initial_state(u0, 4.0), SolverConfig(), 0.1, np.linspace(0, 0.1, 11), crop=(-1.5, 1.5, -1.5, 1.5))
    d = np.array([front_distance((1.0, 0.0), (1.0, 0.0), traj, float(t)) for t in traj.times])
    assert np.all(np.diff(d) <= 1e-12)
    assert d[-1] < -2 * g.h


def test_circle_front_is_closed_and_round():
    h = 1.0 / 64
    g = Grid.covering_box(1.0, h)
    X, Y = g.coords()
    front = extract_front(ScalarField(g, np.hypot(X, Y) - 0.5))
    assert len(front.curves) == 1 and front.closed() == [True]
    r = np.hypot(*front.points.T)
    assert np.max(np.abs(r - 0.5)) <= h / 2


def test_front_of_a_single_phase_is_empty():
    g = Grid.covering_box(1.0, 1.0 / 16)
    assert extract_front(ScalarField(g, np.ones(g.shape))).is_empty


def test_one_sided_gradient_of_linear_data():
    g = Grid.covering_box(1.0, 1.0 / 32)
    u = planar_initial_data(g)
    gp = gradient_one_sided(u, (-0.3, 0.0), 1, (1.0, 0.0))
    gm = gradient_one_sided(u, (0.3, 0.0), -1, (1.0, 0.0))
    assert gp == 1.0 or gp == pytest.approx(1.0, abs=1e-12)
    assert abs(gp - gm) <= 4 * np.finfo(float).eps
    with pytest.raises(ValueError):
        gradient_one_sided(u, (0.0, 0.0), 0, (1.0, 0.0))


def test_trajectory_roundtrip(tmp_path):
    g = Grid.covering_box(1.0, 1.0 / 16)
    traj = run(planar_initial_data(g), SolverConfig(), 0.01, [0.005])
    manifest = traj.save(tmp_path / "traj")
    back = Trajectory.load(manifest)
    assert np.array_equal(back.times, traj.times)
    for a, b in zip(back.states, traj.states):
        assert np.array_equal(a.E.values, b.E.values)
    # a second save is byte-identical
    traj.save(tmp_path / "again")
    assert (tmp_path / "traj" / "snap_0001.txt").read_bytes() == (tmp_path / "again" / "snap_0001.txt").read_bytes()


def test_trajectory_load_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        Trajectory.load(tmp_path / "missing.txt")
    bad = tmp_path / "manifest.txt"
    bad.write_text("t 0.0 file snap_0000.txt\n")
    with pytest.raises(FileNotFoundError, match="missing"):
        Trajectory.load(bad)
    bad.write_text("garbage line\n")
    with pytest.raises(ValueError, match="malformed"):
        Trajectory.load(bad)


def test_trajectory_sampling_interpolates_in_time():
    g = Grid.covering_box(1.0, 1.0 / 16)
    traj = run(planar_initial_data(g, offset=0.3), SolverConfig(), 0.02, [0.01])
    t0, t1 = traj.times[1], traj.times[2]
    p = np.array([[0.2, 0.1]])
    mid = traj.sample(p, 0.5 * (t0 + t1))
    assert mid[0] == pytest.approx(0.5 * (traj.sample(p, t0)[0] + traj.sample(p, t1)[0]))
    with pytest.raises(ValueError):
        traj.sample(p, 1.0)
