"""Measurements on initial data and trajectories near the free boundary.

Conventions: a probe sits at a boundary point ``x0`` with outward axis
``e_n``; ``u+`` is read at ``x0 - d e_n`` and ``u-`` at ``x0 + d e_n``, by
bilinear interpolation of the initial temperature. The waiting time
``t(x0, d)`` is the smaller of ``d^2/u+`` and ``d^2/u-``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .elliptic import GrowthFit, loglog_slope
from .geometry import PlanarDomain, ScalarField, StarDomain
from .stefan import FrontCurve, Trajectory, extract_front, front_distance

log = logging.getLogger(__name__)

ONE_PHASE_EPS = 1e-12
DENOM_FLOOR = 10.0 * np.finfo(float).eps
DEFAULT_M = 10.0
K1_SWEEP = (1.0, 2.0, 4.0, 8.0)


# ---------------------------------------------------------------------------
# Probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeRecord:
    x0: tuple[float, float]
    e_n: tuple[float, float]
    d: float
    u_plus_val: float
    u_minus_val: float

    @property
    def t_wait(self) -> float:
        return waiting_time(self)

    @property
    def anchor_plus(self) -> np.ndarray:
        return np.asarray(self.x0) - self.d * np.asarray(self.e_n)

    @property
    def anchor_minus(self) -> np.ndarray:
        return np.asarray(self.x0) + self.d * np.asarray(self.e_n)


def make_probe(u0: ScalarField, x0: Sequence[float], e_n: Sequence[float], d: float, *, collar: float | None = None) -> ProbeRecord:
    """Read the one-sided values of ``u0`` at distance ``d`` along ``e_n``."""
    if not d > 0:
        raise ValueError("probe distance must be positive")
    if collar is not None and d > collar * (1 + 1e-12):
        raise ValueError(f"probe ray leaves collar: d={d} > collar={collar}")
    x0 = np.asarray(x0, dtype=float)
    en = np.asarray(e_n, dtype=float)
    try:
        vp = float(u0.sample(x0 - d * en))
        vm = float(u0.sample(x0 + d * en))
    except ValueError as exc:
        raise ValueError(f"probe ray leaves collar: {tuple(x0)} at d={d} is off the grid") from exc
    return ProbeRecord((float(x0[0]), float(x0[1])), (float(en[0]), float(en[1])), float(d), max(vp, 0.0), max(-vm, 0.0))


def waiting_time(probe: ProbeRecord) -> float:
    """``min(d^2/u+, d^2/u-)`` over the positive one-sided values."""
    d2 = probe.d * probe.d
    cands = [d2 / v for v in (probe.u_plus_val, probe.u_minus_val) if v > 0]
    if not cands:
        raise ValueError("both one-sided values vanish: no waiting time")
    return min(cands)


def time_band(d: float) -> tuple[float, float]:
    """``[d^(7/6), d^(5/6)]`` (for ``d < 1``)."""
    return d ** (7.0 / 6.0), d ** (5.0 / 6.0)


def in_time_band(probe: ProbeRecord) -> bool:
    lo, hi = time_band(probe.d)
    t = waiting_time(probe)
    ok = lo <= t <= hi
    if not ok:
        log.warning("waiting time %.4g at %s, d=%g outside [%.4g, %.4g]", t, probe.x0, probe.d, lo, hi)
    return ok


@dataclass(frozen=True)
class FluxRatios:
    R_plus: float
    R_minus: float
    one_phase: bool


def flux_ratios(probe: ProbeRecord) -> FluxRatios:
    """``R+ = u+/u-`` and ``R- = 1/R+``; one-phase flag if either value is below 1e-12."""
    a, b = probe.u_plus_val, probe.u_minus_val
    if a < ONE_PHASE_EPS or b < ONE_PHASE_EPS:
        rp = math.inf if a >= ONE_PHASE_EPS else 0.0
        return FluxRatios(rp, 0.0 if rp == math.inf else math.inf, True)
    rp = a / b
    return FluxRatios(rp, 1.0 / rp, False)


def probe_C0(probe: ProbeRecord) -> float:
    return max(probe.u_plus_val, probe.u_minus_val) / probe.d


# ---------------------------------------------------------------------------
# Decomposition into bad balls and the good region
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BadBall:
    x: tuple[float, float]
    r_x: float
    t_x: float
    side: int  # +1: u+ dominant, -1: u- dominant


@dataclass(eq=False)
class DecompositionReport:
    x0: tuple[float, float]
    r: float
    M: float
    C0: float
    t_end: float
    bad_plus: list[BadBall]
    bad_minus: list[BadBall]
    boundary_points: np.ndarray
    s_ladder: np.ndarray
    reciprocal_constant: float
    good_region_max: float
    K_measured: float = math.nan

    @property
    def bad(self) -> list[BadBall]:
        return self.bad_plus + self.bad_minus

    def in_sigma(self, points: np.ndarray, t: float, inflate: float = 0.0) -> np.ndarray:
        """Membership in ``B_r(x0) x [0, t_end]`` minus the (inflated) bad boxes."""
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        ok = np.hypot(p[:, 0] - self.x0[0], p[:, 1] - self.x0[1]) < self.r
        ok &= 0.0 <= t <= self.t_end * (1 + 1e-12)
        for q in self.bad:
            if t <= q.t_x:
                ok &= np.hypot(p[:, 0] - q.x[0], p[:, 1] - q.x[1]) >= q.r_x + inflate
        return ok

    def sigma_mask(self, grid, times: Sequence[float]) -> np.ndarray:
        X, Y = grid.coords()
        P = np.stack([X.ravel(), Y.ravel()], axis=-1)
        return np.stack([self.in_sigma(P, t).reshape(grid.shape) for t in times])


def _ratio_profile(u0: ScalarField, x: np.ndarray, en: np.ndarray, s: np.ndarray, side: int) -> np.ndarray:
    pts = x[:, None, :] - side * s[None, :, None] * en[:, None, :]
    v = u0.sample(pts.reshape(-1, 2)).reshape(pts.shape[:2])
    return np.maximum(side * v, 0.0) / s[None, :]


def _last_crossing(s: np.ndarray, q: np.ndarray, level: float) -> float:
    """``sup{s : q_lin(s) >= level}`` for the piecewise-linear interpolant (NaN if empty)."""
    idx = np.nonzero(q >= level)[0]
    if idx.size == 0:
        return math.nan
    k = int(idx[-1])
    if k == s.size - 1:
        return float(s[-1])
    a, b = q[k], q[k + 1]
    # bisection on the linear piece (a >= level > b)
    lo, hi = s[k], s[k + 1]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        val = a + (b - a) * (mid - s[k]) / (s[k + 1] - s[k])
        if val >= level:
            lo = mid
        else:
            hi = mid
    return float(lo)


def s_band(r: float, n: int = 48) -> np.ndarray:
    """Geometric ladder over ``[r^(5/4), r]``."""
    return np.geomspace(r**1.25, r, n)


def decompose(
    u0: ScalarField,
    dom: StarDomain | PlanarDomain,
    x0: Sequence[float],
    r: float,
    M: float = DEFAULT_M,
    *,
    spacing: float | None = None,
    n_s: int = 48,
) -> DecompositionReport:
    """Bad boundary points near ``x0`` and the good region at scale ``r``.

    A boundary point ``x`` in ``B_2r(x0)`` is bad on the ``+`` side when
    ``u+(x - s e_n)/s >= M C0`` for some ``s`` on the ladder over
    ``[r^(5/4), r]``; ``r_x`` is the last crossing of the level ``M C0`` by
    the interpolated ratio profile, and ``Q_x = B_{r_x}(x) x [0, r_x/(M C0)]``.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    if not (0 < r < 1):
        raise ValueError("r must lie in (0, 1)")
    x0 = np.asarray(x0, dtype=float)
    h = u0.grid.h
    e0 = dom.normal(x0[None, :])[0]
    a_plus = max(float(u0.sample(x0 - r * e0)), 0.0)
    a_minus = max(-float(u0.sample(x0 + r * e0)), 0.0)
    C0 = max(a_plus, a_minus) / r
    if not C0 > 0:
        raise ValueError("C0 vanishes: both one-sided values are zero")
    probe = ProbeRecord((x0[0], x0[1]), (e0[0], e0[1]), r, a_plus, a_minus)
    t_end = waiting_time(probe)
    sp = h if spacing is None else spacing
    pts = dom.boundary_points(sp, near=x0, radius=2.0 * r)
    if pts.shape[0] == 0:
        raise ValueError("no boundary points near x0")
    en = dom.normal(pts)
    s = s_band(r, n_s)
    level = M * C0
    out: dict[int, list[BadBall]] = {1: [], -1: []}
    qs = {}
    for side in (1, -1):
        q = _ratio_profile(u0, pts, en, s, side)
        qs[side] = q
        for i in range(pts.shape[0]):
            rx = _last_crossing(s, q[i], level)
            if math.isnan(rx):
                continue
            out[side].append(BadBall((float(pts[i, 0]), float(pts[i, 1])), rx, rx / level, side))
    # Reciprocal bound: where one side reaches M C0, the other stays below C * C0.
    recip_const = 0.0
    for side in (1, -1):
        hit = qs[side] >= level
        if hit.any():
            recip_const = max(recip_const, float(qs[-side][hit].max()) / C0)
    rep = DecompositionReport(
        (float(x0[0]), float(x0[1])), r, M, C0, t_end, out[1], out[-1], pts, s, recip_const, math.nan
    )
    good0 = rep.in_sigma(pts, 0.0)
    if good0.any():
        rep.good_region_max = float(max(qs[1][good0].max(), qs[-1][good0].max())) / level
    else:
        rep.good_region_max = 0.0
    return rep


def sigma_monotone_in_M(reports: Sequence[DecompositionReport], grid, times: Sequence[float]) -> bool:
    """Check ``bad(M2) subset bad(M1)`` and ``Sigma(M1) subset Sigma(M2)`` for increasing M."""
    reps = sorted(reports, key=lambda r: r.M)
    for a, b in zip(reps, reps[1:]):
        bx = {(q.x, q.side) for q in b.bad}
        ax = {(q.x, q.side) for q in a.bad}
        if not bx <= ax:
            return False
        sa = a.sigma_mask(grid, times)
        sb = b.sigma_mask(grid, times)
        if np.any(sa & ~sb):
            return False
    return True


# ---------------------------------------------------------------------------
# Harnack ratios
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HarnackSeries:
    times: np.ndarray
    forward: np.ndarray  # max over sides of u(p, t)/u(p, 0)
    backward: np.ndarray  # max over sides of u(p, 0)/u(p, t)
    later: float  # envelope of the same ratios from later anchors

    @property
    def C1_hat(self) -> float:
        vals = [self.later]
        for a in (self.forward, self.backward):
            if np.any(np.isfinite(a)):
                vals.append(float(np.nanmax(a)))
        return max(vals)


def harnack_ratios(traj: Trajectory, probe: ProbeRecord, *, t_max: float | None = None) -> HarnackSeries:
    """Forward/backward ratios at the probe anchors over ``[0, t(x0, d)]``.

    Later anchors ``t0`` in ``[0, t_wait/2]`` are compared with
    ``t0 + tau``, ``tau <= t_wait/2``. Samples whose denominator falls below
    ``10 * machine eps`` are skipped.
    """
    tw = waiting_time(probe) if t_max is None else t_max
    ts = traj.times
    sel = ts <= tw * (1 + 1e-12)
    if ts[-1] < tw * (1 - 1e-9):
        log.warning("harnack_ratios: trajectory ends at %.4g before t_wait %.4g", ts[-1], tw)
    times = ts[sel]
    vals = {}
    for side, p in ((1, probe.anchor_plus), (-1, probe.anchor_minus)):
        vals[side] = np.array([max(side * float(traj.states[k].u.sample(p)), 0.0) for k in np.nonzero(sel)[0]])
    fwd = np.full(times.size, np.nan)
    bwd = np.full(times.size, np.nan)
    for side in (1, -1):
        v = vals[side]
        if v[0] < DENOM_FLOOR:
            continue
        f = v / v[0]
        with np.errstate(divide="ignore"):
            b = np.where(v >= DENOM_FLOOR, v[0] / np.where(v > 0, v, 1.0), np.nan)
        fwd = np.fmax(fwd, f)
        bwd = np.fmax(bwd, b)
    later = 0.0
    half = 0.5 * tw
    for side in (1, -1):
        v = vals[side]
        for i, t0 in enumerate(times):
            if t0 > half or v[i] < DENOM_FLOOR:
                continue
            j = (times > t0) & (times <= t0 + half * (1 + 1e-12)) & (v >= DENOM_FLOOR)
            if j.any():
                later = max(later, float(np.max(v[j] / v[i])), float(np.max(v[i] / v[j])))
    return HarnackSeries(times, fwd, bwd, later)


# ---------------------------------------------------------------------------
# Condition (A) and time regularity on the good region
# ---------------------------------------------------------------------------


def _front_cache(traj: Trajectory) -> list[FrontCurve]:
    cache = traj.meta.get("_fronts")
    if cache is None:
        cache = [extract_front(s) for s in traj.states]
        traj.meta["_fronts"] = cache
    return cache


def gamma_sigma_samples(traj: Trajectory, report: DecompositionReport) -> list[tuple[float, np.ndarray]]:
    """Front vertices inside the good region at each snapshot time up to ``t_end``.

    Bad boxes are inflated by one cell.
    """
    h = traj.h
    out = []
    for t, fr in zip(traj.times, _front_cache(traj)):
        if t > report.t_end * (1 + 1e-12):
            break
        P = fr.points
        if P.shape[0] == 0:
            continue
        keep = report.in_sigma(P, float(t), inflate=h)
        if keep.any():
            out.append((float(t), P[keep]))
    return out


def _axis(dom: StarDomain | PlanarDomain, P: np.ndarray) -> np.ndarray:
    return dom.normal(P)


def condition_A_series(traj: Trajectory, report: DecompositionReport, dom: StarDomain | PlanarDomain) -> list[tuple[float, float]]:
    """Per-time ``max ratio / (M C0)`` over good front points and the scale band."""
    samples = gamma_sigma_samples(traj, report)
    if not samples:
        raise ValueError("Gamma cap Sigma is empty")
    s = report.s_ladder
    level = report.M * report.C0
    out = []
    for t, P in samples:
        k = traj.index_of(t, 1e-12)
        u = traj.states[k].u
        en = _axis(dom, P)
        worst = 0.0
        for side in (1, -1):
            q = _ratio_profile(u, P, en, s, side)
            worst = max(worst, float(q.max()))
        out.append((t, worst / level))
    return out


def condition_A_constant(traj: Trajectory, report: DecompositionReport, dom: StarDomain | PlanarDomain) -> float:
    """``K_measured``: the largest one-sided quotient on the good front, over ``M C0``."""
    K = max(v for _, v in condition_A_series(traj, report, dom))
    report.K_measured = K
    return K


@dataclass(frozen=True)
class LipschitzSample:
    t: float
    x: tuple[float, float]
    tau: float
    k: float


@dataclass(eq=False)
class LipschitzResult:
    K1: float
    bound: float
    samples: list[LipschitzSample]

    @property
    def worst(self) -> list[LipschitzSample]:
        return sorted(self.samples, key=lambda s: -abs(s.k))[:5]

    @property
    def passed(self) -> bool:
        return all(abs(s.k) <= self.bound for s in self.samples)


def time_lipschitz_check(traj: Trajectory, report: DecompositionReport, dom: StarDomain | PlanarDomain, K1: float) -> LipschitzResult:
    """Normal front displacement ``k`` over the lag ``tau = r^(5/4)/(K1 M C0)``.

    Passing means ``|k| <= r^(5/4) + 3h`` at every good front sample whose
    lagged time is inside the trajectory.
    """
    rb = report.r**1.25
    tau = rb / (K1 * report.M * report.C0)
    if tau < traj.dt:
        raise ValueError(f"lag tau={tau:.3e} is below the time step {traj.dt:.3e}")
    t_last = traj.times[-1]
    out = []
    for t, P in gamma_sigma_samples(traj, report):
        if t + tau > t_last + 1e-12:
            continue
        en = _axis(dom, P)
        for p, e in zip(P, en):
            k = front_distance(p, e, traj, t + tau) - front_distance(p, e, traj, t)
            out.append(LipschitzSample(t, (float(p[0]), float(p[1])), tau, k))
    return LipschitzResult(K1, rb + 3.0 * traj.h, out)


def least_passing_K1(traj: Trajectory, report: DecompositionReport, dom, sweep: Sequence[float] = K1_SWEEP) -> float | None:
    """Smallest ``K1`` in the sweep whose displacement test passes (None if none does)."""
    for K1 in sorted(sweep):
        res = time_lipschitz_check(traj, report, dom, K1)
        if res.samples and res.passed:
            return float(K1)
    return None


# ---------------------------------------------------------------------------
# Distance law
# ---------------------------------------------------------------------------


def exponent_band(alpha_hat: float, beta_hat: float, slack: float = 0.1) -> tuple[float, float]:
    """``[1/(2 - beta) - slack, 1/(2 - alpha) + slack]``, ordered."""
    a = 1.0 / (2.0 - alpha_hat)
    b = 1.0 / (2.0 - beta_hat)
    return min(a, b) - slack, max(a, b) + slack


@dataclass(frozen=True)
class DistanceFit:
    x0: tuple[float, float]
    p_hat: float
    n_samples: int
    band: tuple[float, float]
    inconclusive: bool

    @property
    def passed(self) -> bool:
        return (not self.inconclusive) and self.band[0] <= self.p_hat <= self.band[1]


def fit_power_law(t: np.ndarray, d: np.ndarray) -> float:
    """Least-squares slope of ``log d`` against ``log t``."""
    return loglog_slope(np.asarray(t, dtype=float), np.asarray(d, dtype=float))[0]


def distance_law_fit(
    traj: Trajectory,
    probes,
    growth: GrowthFit | tuple[float, float],
    *,
    t_max: float | None = None,
    min_disp: float | None = None,
    min_samples: int = 5,
) -> list[DistanceFit]:
    """Per-probe exponent of ``d(x0, t) ~ t^p`` from front displacements.

    Samples are the snapshot times ``0 < t <= t_max`` with displacement at
    least ``min_disp`` (default ``4h``). ``t_max`` defaults to the waiting
    time at the largest probe scale, capped by the trajectory's end.
    """
    if isinstance(growth, GrowthFit):
        ah, bh = growth.alpha_hat, growth.beta_hat
    else:
        ah, bh = growth
    band = exponent_band(ah, bh)
    h = traj.h
    md = 4.0 * h if min_disp is None else min_disp
    u0 = traj.states[0].u
    ts = traj.times
    out = []
    for x0, en in zip(probes.points, probes.normals):
        tm = t_max
        if tm is None:
            tm = waiting_time(make_probe(u0, x0, en, float(probes.scales[-1])))
        tm = min(tm, ts[-1])
        sel = (ts > 0) & (ts <= tm * (1 + 1e-12))
        tt = ts[sel]
        dd = np.array([front_distance(x0, en, traj, float(t)) for t in tt])
        ok = dd >= md
        if ok.sum() < min_samples:
            out.append(DistanceFit((float(x0[0]), float(x0[1])), math.nan, int(ok.sum()), band, True))
            continue
        p = fit_power_law(tt[ok], dd[ok])
        out.append(DistanceFit((float(x0[0]), float(x0[1])), p, int(ok.sum()), band, False))
    return out


# ---------------------------------------------------------------------------
# Gradient bounds
# ---------------------------------------------------------------------------


def _box_states(traj: Trajectory, t_lo: float, t_hi: float) -> list[int]:
    ts = traj.times
    if t_hi > ts[-1] * (1 + 1e-12):
        log.warning("gradient box [%.4g, %.4g] clipped at the trajectory end %.4g", t_lo, t_hi, ts[-1])
    return [k for k, t in enumerate(ts) if t_lo * (1 - 1e-12) <= t <= t_hi * (1 + 1e-12)]


def _grad_mag(u: ScalarField) -> np.ndarray:
    gy, gx = np.gradient(u.values, u.grid.h)
    return np.hypot(gx, gy)


@dataclass(frozen=True)
class BadBallResult:
    side: int
    anchor_value: float
    C_plus: float
    C_minus: float
    n_times: int

    @property
    def C_hat(self) -> float:
        return self.C_plus if self.side == 1 else self.C_minus


def bad_ball_gradient_check(traj: Trajectory, x0: Sequence[float], e_n: Sequence[float], r: float, M: float = DEFAULT_M) -> BadBallResult:
    """``C_hat = max |D u+-| r / u+-(anchor)`` over ``B_r(x0) x [t(x0,r)/2, t(x0,r)]``.

    The ball must satisfy the one-phase dominance trigger at ``t = 0``.
    """
    u0 = traj.states[0].u
    pr = make_probe(u0, x0, e_n, r)
    a, b = pr.u_plus_val, pr.u_minus_val
    if a >= M * b:
        side = 1
    elif b >= M * a:
        side = -1
    else:
        raise ValueError(f"ball at {tuple(x0)} with r={r} is balanced (u+={a:.3g}, u-={b:.3g}); not a bad ball for M={M}")
    tw = waiting_time(pr)
    idx = _box_states(traj, 0.5 * tw, tw)
    if not idx:
        raise ValueError("no snapshot inside the bad-ball time box")
    Cp = Cm = 0.0
    for k in idx:
        u = traj.states[k].u
        X, Y = u.grid.coords()
        inb = np.hypot(X - x0[0], Y - x0[1]) < r
        g = _grad_mag(u)
        pos = inb & (u.values > 0)
        neg = inb & (u.values < 0)
        if pos.any() and a > 0:
            Cp = max(Cp, float(g[pos].max()) * r / a)
        if neg.any() and b > 0:
            Cm = max(Cm, float(g[neg].max()) * r / b)
    return BadBallResult(side, a if side == 1 else b, Cp, Cm, len(idx))


def gradient_comparability_check(traj: Trajectory, probe: ProbeRecord, M: float = DEFAULT_M) -> tuple[float, float]:
    """Range of ``|Du| d / u+-(anchor)`` over ``B_d(x0) x [t_wait/2, t_wait]``.

    Nodes are split by the sign of ``u``; each phase is normalized by its
    own anchor value. The probe must be balanced (both ratios at most M).
    """
    fr = flux_ratios(probe)
    if fr.one_phase or fr.R_plus > M or fr.R_minus > M:
        raise ValueError("gradient comparability needs a balanced probe")
    tw = waiting_time(probe)
    idx = _box_states(traj, 0.5 * tw, tw)
    if not idx:
        raise ValueError("no snapshot inside the comparability time box")
    lo, hi = math.inf, 0.0
    d = probe.d
    for k in idx:
        u = traj.states[k].u
        X, Y = u.grid.coords()
        inb = np.hypot(X - probe.x0[0], Y - probe.x0[1]) < d
        g = _grad_mag(u)
        for sel, a in ((inb & (u.values > 0), probe.u_plus_val), (inb & (u.values < 0), probe.u_minus_val)):
            if sel.any():
                v = g[sel] * d / a
                lo = min(lo, float(v.min()))
                hi = max(hi, float(v.max()))
    return lo, hi


# ---------------------------------------------------------------------------
# Star-shape persistence
# ---------------------------------------------------------------------------


def star_shape_defect(
    traj: Trajectory,
    dom: StarDomain,
    sigma: float,
    *,
    centers: np.ndarray | None = None,
    t_max: float | None = None,
) -> list[tuple[float, float]]:
    """``max(0, u((1+s)(x-x0)+x0, (1+s)^2 t) - u(x, t + delta))`` per snapshot time.

    ``delta = s(2+s)t``. Centers default to the domain center and four
    points at half the inner radius. Scaled points off the grid are skipped.
    """
    h = traj.h
    if sigma < 4.0 * h / dom.r0 * (1 - 1e-12):
        raise ValueError(f"sigma must be at least 4h/r0 = {4 * h / dom.r0:.3g}")
    c = np.asarray(dom.center, dtype=float)
    if centers is None:
        ang = np.arange(4) * 0.5 * np.pi
        centers = np.vstack([c, c + 0.5 * dom.r0 * np.stack([np.cos(ang), np.sin(ang)], axis=-1)])
    ts = traj.times
    tm = ts[-1] if t_max is None else min(t_max, ts[-1])
    g = traj.grid
    X, Y = g.coords()
    P = np.stack([X.ravel(), Y.ravel()], axis=-1)
    xmin, xmax, ymin, ymax = g.extent
    out = []
    for t in ts:
        T1 = (1 + sigma) ** 2 * t
        T2 = t + sigma * (2 + sigma) * t
        if T1 > tm + 1e-12 or T2 > tm + 1e-12:
            break
        worst = 0.0
        rhs = traj.sample(P, T2) if T2 > 0 else traj.states[0].u.values.ravel()
        for x0 in centers:
            Q = (1 + sigma) * (P - x0) + x0
            ok = (Q[:, 0] >= xmin) & (Q[:, 0] <= xmax) & (Q[:, 1] >= ymin) & (Q[:, 1] <= ymax)
            lhs = traj.sample(Q[ok], T1)
            worst = max(worst, float(np.max(lhs - rhs[ok], initial=0.0)))
        out.append((float(t), worst))
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("x0x", "x0y", "d", "t", "t_wait", "Rplus", "Rminus", "C0", "is_bad", "harnack_fwd", "harnack_bwd", "K_cond_A", "p_hat", "C_grad")


@dataclass
class RegularityReport:
    rows: list[dict] = field(default_factory=list)
    checks: list[tuple[str, bool, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def add_check(self, name: str, passed: bool, detail: str) -> None:
        self.checks.append((name, bool(passed), detail))

    @property
    def all_passed(self) -> bool:
        return all(p for _, p, _ in self.checks)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for row in self.rows:
                w.writerow([_fmt(row[c]) for c in REPORT_COLUMNS])

    def summary(self) -> str:
        lines = [f"{'PASS' if p else 'FAIL'} {name}: {detail}" for name, p, detail in self.checks]
        lines += [f"INFO {n}" for n in self.notes]
        lines.append(f"overall: {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")
