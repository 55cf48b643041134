"""Harmonic functions on masked grid regions and the initial data built from them.

Dirichlet problems are discretized with the 5-point Laplacian. Where a
stencil arm is cut by the boundary at fraction ``theta`` of a cell, the
neighbour value is replaced by a linear ghost value through the boundary
datum (the symmetric cut-cell treatment), so the matrix stays symmetric
positive definite and an M-matrix. That keeps the discrete maximum principle
and lets a classical algebraic multigrid preconditioner do the work on
large grids.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Grid, PlanarDomain, ProbeSet, ScalarField, StarDomain

log = logging.getLogger(__name__)

#: Direction order used by cut arrays: +x, -x, +y, -y as (di, dj) index shifts.
DIRECTIONS = ((0, 1), (0, -1), (1, 0), (-1, 0))

THETA_MIN = 1e-3
DIRECT_SOLVE_MAX = 60_000
DEFAULT_COLLAR = 0.1


@dataclass(frozen=True, eq=False)
class MaskedRegion:
    """Unknown nodes ``inside`` plus Dirichlet data for the stencil arms that leave them.

    ``boundary_values`` gives the datum at every non-inside node (used when an
    arm ends on a node). ``cuts``/``cut_values`` (shape ``(4, ny, nx)``, in
    :data:`DIRECTIONS` order) optionally place the datum at fraction
    ``theta`` along the arm; NaN means "not cut".
    """

    grid: Grid
    inside: np.ndarray
    boundary_values: np.ndarray
    cuts: np.ndarray | None = None
    cut_values: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.inside.shape != self.grid.shape or self.boundary_values.shape != self.grid.shape:
            raise ValueError("region arrays must match the grid shape")
        if not np.all(np.isfinite(self.boundary_values[~self.inside])):
            raise ValueError("boundary values must be finite")
        ins = self.inside
        if ins[0, :].any() or ins[-1, :].any() or ins[:, 0].any() or ins[:, -1].any():
            raise ValueError("inside region touches the grid edge; enlarge the grid")
        if (self.cuts is None) != (self.cut_values is None):
            raise ValueError("cuts and cut_values must be given together")


@dataclass(frozen=True)
class DirichletSolution:
    field: ScalarField
    residual: float
    iterations: int


def _assemble(region: MaskedRegion) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """SPD system ``A u = b`` (the negative, h^2-scaled Laplacian) for inside nodes."""
    ins = region.inside
    ny, nx = ins.shape
    idx = -np.ones(ins.shape, dtype=np.int64)
    ii, jj = np.nonzero(ins)
    n = ii.size
    idx[ii, jj] = np.arange(n)
    diag = np.zeros(n)
    rhs = np.zeros(n)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    for d, (di, dj) in enumerate(DIRECTIONS):
        qi, qj = ii + di, jj + dj
        nb_in = ins[qi, qj]
        # interior arm
        rows.append(idx[ii[nb_in], jj[nb_in]])
        cols.append(idx[qi[nb_in], qj[nb_in]])
        diag[nb_in] += 1.0
        # boundary arm
        out = ~nb_in
        theta = np.ones(int(out.sum()))
        g = region.boundary_values[qi[out], qj[out]].astype(float)
        if region.cuts is not None:
            c = region.cuts[d, ii[out], jj[out]]
            has = np.isfinite(c)
            theta[has] = np.clip(c[has], THETA_MIN, 1.0)
            g[has] = region.cut_values[d, ii[out], jj[out]][has]
        diag[out] += 1.0 / theta
        rhs[out] += g / theta
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    A = sp.csr_matrix((np.concatenate([-np.ones(r.size), diag]), (np.concatenate([r, np.arange(n)]), np.concatenate([c, np.arange(n)]))), shape=(n, n))
    return A, rhs, idx


def solve_dirichlet(region: MaskedRegion, tol: float = 1e-9, max_cycles: int = 8) -> DirichletSolution:
    """Solve the discrete Laplace equation on ``region.inside``.

    The returned residual is ``max |A u - b|`` for the h^2-scaled operator
    (for an uncut node: ``|sum of neighbours - 4 u|``). Non-inside nodes
    carry ``boundary_values``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    A, b, idx = _assemble(region)
    n = b.size
    values = region.boundary_values.astype(float).copy()
    if n == 0:
        raise ValueError("region has no interior nodes")
    iterations = 0
    if n <= DIRECT_SOLVE_MAX:
        u = spla.spsolve(A.tocsc(), b)
        res = float(np.max(np.abs(A @ u - b)))
        for _ in range(2):
            if res <= tol:
                break
            u = u + spla.spsolve(A.tocsc(), b - A @ u)
            res = float(np.max(np.abs(A @ u - b)))
    else:
        import pyamg

        ml = pyamg.ruge_stuben_solver(A)
        u = np.zeros(n)
        res = float("inf")
        for _ in range(max_cycles):
            resid: list[float] = []
            u = ml.solve(b, x0=u, tol=1e-14, maxiter=200, accel="cg", residuals=resid)
            iterations += len(resid)
            res = float(np.max(np.abs(A @ u - b)))
            if res <= tol:
                break
    if not res <= tol:
        raise ValueError(f"Dirichlet solve did not converge: residual {res:.3e} > tol {tol:.1e}")
    values[region.inside] = u[idx[region.inside]]
    return DirichletSolution(ScalarField(region.grid, values), res, iterations)


# ---------------------------------------------------------------------------
# Cut fractions
# ---------------------------------------------------------------------------


def _circle_theta(p: np.ndarray, q: np.ndarray, radius: float) -> np.ndarray:
    """Fraction along p->q where |x| = radius (p and q on opposite sides)."""
    d = q - p
    a = (d * d).sum(-1)
    b = 2.0 * (p * d).sum(-1)
    c = (p * p).sum(-1) - radius**2
    disc = np.sqrt(np.maximum(b * b - 4 * a * c, 0.0))
    r1 = (-b - disc) / (2 * a)
    r2 = (-b + disc) / (2 * a)
    th = np.where((r1 >= 0) & (r1 <= 1), r1, r2)
    return np.clip(th, 0.0, 1.0)


def _level_theta(level: Callable[[np.ndarray], np.ndarray], p: np.ndarray, q: np.ndarray, iters: int = 60) -> np.ndarray:
    """Bisection for the sign change of ``level`` along p->q."""
    lo = np.zeros(p.shape[0])
    hi = np.ones(p.shape[0])
    sp_ = np.sign(level(p))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        s = np.sign(level(p + mid[:, None] * (q - p)))
        same = s == sp_
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    return hi


def _phase_region(
    grid: Grid,
    inside: np.ndarray,
    level: Callable[[np.ndarray], np.ndarray],
    circle_radius: float,
    circle_value: float,
    circle_outside: bool,
    base_values: np.ndarray,
) -> MaskedRegion:
    """Region between the level-set boundary (datum 0) and a centered circle."""
    X, Y = grid.coords()
    P = np.stack([X, Y], axis=-1)
    rr = np.hypot(X, Y)
    cuts = np.full((4,) + grid.shape, np.nan)
    cvals = np.full((4,) + grid.shape, np.nan)
    ii, jj = np.nonzero(inside)
    for d, (di, dj) in enumerate(DIRECTIONS):
        qi, qj = ii + di, jj + dj
        out = ~inside[qi, qj]
        pi_, pj, oi, oj = ii[out], jj[out], qi[out], qj[out]
        p = P[pi_, pj]
        q = P[oi, oj]
        on_circle = (rr[oi, oj] >= circle_radius) if circle_outside else (rr[oi, oj] <= circle_radius)
        th = np.empty(pi_.size)
        val = np.empty(pi_.size)
        if on_circle.any():
            th[on_circle] = _circle_theta(p[on_circle], q[on_circle], circle_radius)
            val[on_circle] = circle_value
        lv = ~on_circle
        if lv.any():
            th[lv] = _level_theta(level, p[lv], q[lv])
            val[lv] = 0.0
        cuts[d, pi_, pj] = th
        cvals[d, pi_, pj] = val
    return MaskedRegion(grid, inside, base_values, cuts, cvals)


@dataclass(frozen=True, eq=False)
class HarmonicPair:
    """Nonnegative phase parts ``h_plus`` (inside) and ``h_minus`` (outside)."""

    hplus: ScalarField
    hminus: ScalarField
    residual: float

    @property
    def signed(self) -> ScalarField:
        return self.hplus.with_values(self.hplus.values - self.hminus.values)


def harmonic_pair(
    dom: StarDomain,
    r_in: float,
    r_out: float,
    grid: Grid,
    *,
    inner_value: float = 1.0,
    outer_value: float = 1.0,
    tol: float = 1e-9,
) -> HarmonicPair:
    """Capacitary pair around ``dom``.

    ``h_plus`` is harmonic in ``dom - B_r_in`` with ``inner_value`` on
    ``dBr_in`` and 0 on ``d(dom)``; it equals ``inner_value`` on ``B_r_in``.
    ``h_minus`` is harmonic in ``B_r_out - dom`` with 0 on ``d(dom)`` and
    ``outer_value`` on ``dB_r_out``; it equals ``outer_value`` outside.
    """
    if not grid.covers_ball(r_out):
        raise ValueError(f"grid extent {grid.extent} does not cover B_{r_out}")
    X, Y = grid.coords()
    P = np.stack([X, Y], axis=-1)
    rr = np.hypot(X, Y)
    lev = dom.level(P)
    pos = (lev < 0) & (rr > r_in)
    neg = (lev > 0) & (rr < r_out)

    base_p = np.where(rr <= r_in, inner_value, 0.0)
    reg_p = _phase_region(grid, pos, dom.level, r_in, inner_value, False, base_p)
    sol_p = solve_dirichlet(reg_p, tol)
    hp = np.where(pos, sol_p.field.values, base_p)

    base_m = np.where(rr >= r_out, outer_value, 0.0)
    reg_m = _phase_region(grid, neg, dom.level, r_out, outer_value, True, base_m)
    sol_m = solve_dirichlet(reg_m, tol)
    hm = np.where(neg, sol_m.field.values, base_m)
    hp = np.maximum(hp, 0.0)
    hm = np.maximum(hm, 0.0)
    return HarmonicPair(ScalarField(grid, hp), ScalarField(grid, hm), max(sol_p.residual, sol_m.residual))


Level = Callable[[np.ndarray], np.ndarray]
Datum = float | Callable[[np.ndarray], np.ndarray]


def _datum(value: Datum, points: np.ndarray) -> np.ndarray:
    if callable(value):
        return np.asarray(value(points), dtype=float)
    return np.full(points.shape[:-1], float(value))


def band_region(grid: Grid, inner_level: Level, inner_value: Datum, outer_level: Level, outer_value: Datum) -> MaskedRegion:
    """Region ``{inner_level > 0} & {outer_level < 0}`` with data on both boundaries.

    Level functions are negative inside their sets, like
    :meth:`StarDomain.level`. Data may be constants or callables of points;
    callables are evaluated at the cut points.
    """
    X, Y = grid.coords()
    P = np.stack([X, Y], axis=-1)
    lin = inner_level(P)
    lout = outer_level(P)
    inside = (lin > 0) & (lout < 0)
    base = np.where(lin <= 0, _datum(inner_value, P), _datum(outer_value, P))
    cuts = np.full((4,) + grid.shape, np.nan)
    cvals = np.full((4,) + grid.shape, np.nan)
    ii, jj = np.nonzero(inside)
    for d, (di, dj) in enumerate(DIRECTIONS):
        qi, qj = ii + di, jj + dj
        out = ~inside[qi, qj]
        pi_, pj, oi, oj = ii[out], jj[out], qi[out], qj[out]
        p = P[pi_, pj]
        q = P[oi, oj]
        hits_inner = lin[oi, oj] <= 0
        th = np.empty(pi_.size)
        val = np.empty(pi_.size)
        for sel, lev, dat in ((hits_inner, inner_level, inner_value), (~hits_inner, outer_level, outer_value)):
            if sel.any():
                th[sel] = _level_theta(lev, p[sel], q[sel])
                val[sel] = _datum(dat, p[sel] + th[sel, None] * (q[sel] - p[sel]))
        cuts[d, pi_, pj] = th
        cvals[d, pi_, pj] = val
    return MaskedRegion(grid, inside, base, cuts, cvals)


def build_initial_data(
    dom: StarDomain,
    R: float,
    grid: Grid,
    *,
    collar: float = DEFAULT_COLLAR,
    tol: float = 1e-9,
) -> ScalarField:
    """Two-phase initial temperature ``u0`` for a star domain in ``B_R``.

    Positive phase: harmonic in ``dom - B_r0``, 1 on ``dB_r0`` (and 1 inside
    it), 0 on ``d(dom)``. Negative phase: harmonic in ``B_R - dom``, 0 on
    ``d(dom)``, -1 on ``dB_R`` and beyond.
    """
    rho_min = float(dom.profile.min())
    rho_max = float(dom.profile.max())
    if rho_max > R / 2:
        raise ValueError(f"domain (max radius {rho_max:.3f}) must lie inside B_(R/2) = B_{R / 2:.3f}")
    if collar < 4 * grid.h:
        raise ValueError(f"collar too thin for grid: collar {collar} < 4h = {4 * grid.h}")
    if rho_min - dom.r0 < collar or R - rho_max < collar:
        raise ValueError("collar too thin for grid: the harmonic collar overlaps B_r0 or the outer ring")
    pair = harmonic_pair(dom, dom.r0, R, grid, inner_value=1.0, outer_value=1.0, tol=tol)
    return pair.signed


def planar_initial_data(grid: Grid, slope: float = 1.0, normal: Sequence[float] = (1.0, 0.0), offset: float = 0.0) -> ScalarField:
    """Linear data ``u0 = -slope * (x . normal - offset)``: the symmetric planar case."""
    X, Y = grid.coords()
    return ScalarField(grid, -slope * (X * normal[0] + Y * normal[1] - offset))


def discrete_laplacian(f: ScalarField) -> np.ndarray:
    """5-point Laplacian at interior nodes (NaN on the grid rim)."""
    v = f.values
    out = np.full(v.shape, np.nan)
    out[1:-1, 1:-1] = (v[2:, 1:-1] + v[:-2, 1:-1] + v[1:-1, 2:] + v[1:-1, :-2] - 4 * v[1:-1, 1:-1]) / f.grid.h**2
    return out


def laplacian_bound(u0: ScalarField, exclude: np.ndarray | None = None) -> float:
    """``N0 = max |Lap_h u0|`` over nodes whose stencil does not straddle the zero set.

    ``exclude`` masks further nodes (for instance the rings where Dirichlet
    data is imposed).
    """
    v = u0.values
    lap = discrete_laplacian(u0)
    pos = v > 0
    straddle = np.zeros(v.shape, dtype=bool)
    c = pos[1:-1, 1:-1]
    straddle[1:-1, 1:-1] = (pos[2:, 1:-1] != c) | (pos[:-2, 1:-1] != c) | (pos[1:-1, 2:] != c) | (pos[1:-1, :-2] != c)
    ok = np.isfinite(lap) & ~straddle
    if exclude is not None:
        ok &= ~exclude
    return float(np.max(np.abs(lap[ok]))) if ok.any() else 0.0


# ---------------------------------------------------------------------------
# Growth exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GrowthFit:
    alpha_hat: float
    beta_hat: float
    scales: np.ndarray
    slopes: np.ndarray
    residual: float

    def __post_init__(self) -> None:
        if self.beta_hat > self.alpha_hat:
            raise ValueError("beta_hat must not exceed alpha_hat")


def loglog_slope(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares slope of ``log y`` against ``log x`` and the RMS residual."""
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=-1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = ly - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid**2)))


def growth_exponents(u0: ScalarField, dom: StarDomain | PlanarDomain | None, probes: ProbeSet, *, collar: float = DEFAULT_COLLAR) -> GrowthFit:
    """Fit ``u0+(x0 - s e_n) ~ s^p`` per probe over the probe scale ladder."""
    s = probes.scales
    if s.size < 3:
        raise ValueError("growth fit needs at least 3 scales")
    if s.max() > collar * (1 + 1e-12):
        raise ValueError(f"probe scales must stay within the harmonic collar ({collar})")
    slopes = np.empty(len(probes))
    worst = 0.0
    for k, (x0, en) in enumerate(zip(probes.points, probes.normals)):
        vals = u0.sample(x0[None, :] - s[:, None] * en[None, :])
        if np.any(vals <= 0):
            raise ValueError(f"probe {k} at {tuple(x0)}: u0 is not positive along the inward ray")
        slopes[k], res = loglog_slope(s, vals)
        worst = max(worst, res)
    return GrowthFit(float(slopes.max()), float(slopes.min()), s.copy(), slopes, worst)


# ---------------------------------------------------------------------------
# ACF functional
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ACFSeries:
    radii: np.ndarray
    phi: np.ndarray
    center: tuple[float, float]

    def __post_init__(self) -> None:
        if np.any(np.diff(self.radii) <= 0):
            raise ValueError("ACF radii must be strictly increasing")
        if np.any(self.phi < 0):
            raise ValueError("ACF values must be nonnegative")

    def monotonicity_defect(self, h: float) -> float:
        """Largest ``phi_j - phi_{j+1} - (0.05 phi_j + 10 h)``; nonpositive means monotone within tolerance."""
        tol = 0.05 * self.phi[:-1] + 10 * h
        return float(np.max(self.phi[:-1] - self.phi[1:] - tol)) if self.phi.size > 1 else -np.inf

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("r,phi\n")
            for r, p in zip(self.radii, self.phi):
                fh.write(f"{r:.17g},{p:.17g}\n")


def _support_gradient(f: np.ndarray, S: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Central differences inside the support, one-sided into it at its edge."""
    fm = np.roll(f, 1, axis=axis)
    fp = np.roll(f, -1, axis=axis)
    Sm = np.roll(S, 1, axis=axis)
    Sp = np.roll(S, -1, axis=axis)
    central = (fp - fm) / (2 * h)
    fwd = (fp - f) / h
    bwd = (f - fm) / h
    return np.where(Sm & Sp, central, np.where(Sp, fwd, np.where(Sm, bwd, 0.0)))


def _subcell_fraction(pts: np.ndarray, h: float, pred: Callable[[np.ndarray], np.ndarray], n_sub: int) -> np.ndarray:
    off = ((np.arange(n_sub) + 0.5) / n_sub - 0.5) * h
    ox, oy = np.meshgrid(off, off)
    sub = pts[:, None, :] + np.stack([ox.ravel(), oy.ravel()], axis=-1)[None, :, :]
    return pred(sub).mean(axis=1)


def acf_phi(
    hplus: ScalarField,
    hminus: ScalarField,
    x0: Sequence[float],
    radii: Sequence[float],
    *,
    min_cells: float = 4.0,
    n_sub: int = 8,
) -> ACFSeries:
    """``phi(r) = r^-4 * int_{B_r} |grad h+|^2 * int_{B_r} |grad h-|^2`` (2D, weight 1).

    Each node carries the area of its dual cell that lies in the ball and
    in the phase's support (sub-sampled bilinear sign of ``h+ - h-``).
    """
    if hplus.grid != hminus.grid:
        raise ValueError("h+ and h- must share a grid")
    g = hplus.grid
    h = g.h
    r_arr = np.asarray(radii, dtype=float)
    keep = r_arr >= min_cells * h
    if not keep.all():
        log.warning("acf_phi: dropping %d radii below %.0f cells", int((~keep).sum()), min_cells)
    r_arr = r_arr[keep]
    if r_arr.size == 0:
        raise ValueError("no admissible radii")
    x0 = np.asarray(x0, dtype=float)
    rw = float(r_arr.max()) + 3 * h
    sub, sl = g.window(x0[0] - rw, x0[0] + rw, x0[1] - rw, x0[1] + rw)
    hp = hplus.values[sl]
    hm = hminus.values[sl]
    if np.any(hp < 0) or np.any(hm < 0):
        raise ValueError("phase parts must be nonnegative")
    both = (hp > 0) & (hm > 0)
    if both.any():
        zero = (hp == 0) | (hm == 0)
        near_zero = zero | np.roll(zero, 1, 0) | np.roll(zero, -1, 0) | np.roll(zero, 1, 1) | np.roll(zero, -1, 1)
        if np.any(both & ~near_zero):
            raise ValueError("h+ and h- supports overlap beyond one cell band")
    s = hp - hm
    X, Y = sub.coords()
    P = np.stack([X, Y], axis=-1)
    signed = ScalarField(sub, s)

    energies = []
    for f, sign in ((hp, 1.0), (hm, -1.0)):
        S = f > 0
        gx = _support_gradient(f, S, h, axis=1)
        gy = _support_gradient(f, S, h, axis=0)
        e = gx**2 + gy**2
        # support fraction of dual cells
        frac = S.astype(float)
        near = np.zeros_like(S)
        for ax in (0, 1):
            for sh in (1, -1):
                near |= np.roll(S, sh, axis=ax) != S
        near[[0, -1], :] = False
        near[:, [0, -1]] = False
        if near.any():
            pts = P[near]
            frac[near] = _subcell_fraction(pts, h, lambda q: sign * signed.sample(q, strict=False) > 0, n_sub)
        energies.append((e, frac))

    dist = np.hypot(X - x0[0], Y - x0[1])
    phi = np.empty(r_arr.size)
    for k, r in enumerate(r_arr):
        ball = (dist <= r).astype(float)
        edge = np.abs(dist - r) < 0.75 * h
        if edge.any():
            pts = P[edge]
            ball[edge] = _subcell_fraction(pts, h, lambda q: np.hypot(q[..., 0] - x0[0], q[..., 1] - x0[1]) <= r, n_sub)
        ints = [float(np.sum(e * frac * ball)) * h * h for e, frac in energies]
        phi[k] = ints[0] * ints[1] / r**4
    return ACFSeries(r_arr, phi, (float(x0[0]), float(x0[1])))


def flux_product_check(
    hplus: ScalarField,
    hminus: ScalarField,
    x0: Sequence[float],
    r: float,
    e_n: Sequence[float] | None = None,
    *,
    collar: float | None = None,
) -> tuple[float, float]:
    """``(h+(x0 - r e_n)/r, h-(x0 + r e_n)/r)`` with ``e_n = x0/|x0|`` by default."""
    x0 = np.asarray(x0, dtype=float)
    en = x0 / np.hypot(*x0) if e_n is None else np.asarray(e_n, dtype=float)
    if collar is not None and r > collar:
        raise ValueError(f"r = {r} lies outside the harmonic collar ({collar})")
    left = float(hplus.sample(x0 - r * en)) / r
    right = float(hminus.sample(x0 + r * en)) / r
    return left, right
