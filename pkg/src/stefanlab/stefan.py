"""Explicit enthalpy scheme for the two-phase Stefan problem.

The conserved variable is the enthalpy ``E`` with temperature
``u = beta(E) = min(E, 0) + max(E - 1, 0)`` (latent heat 1). One step is

    E' = E + dt * Lap_h u,   u' = beta(E')

on free nodes; pinned nodes (the ring outside ``B_R``) keep their values.
Array edges that are not pinned are treated as mirror (zero-flux) edges,
so a ``(1, n)`` array is a 1D slab.

The update is evaluated as ``g(E) + lam * (sum of neighbour u)`` with
``g(E) = E - 4 lam beta(E)`` written branchwise as a composition of
monotone floating-point operations. With ``lam = dt/h^2 <= 1/4`` every
rounding step is monotone, so ordered enthalpies stay ordered exactly, not
just up to round-off.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy.special import erf, erfc

from .geometry import Grid, ScalarField

log = logging.getLogger(__name__)

MAX_CFL = 0.9


class SolverError(RuntimeError):
    """Non-finite values appeared during time stepping."""


def beta(E: np.ndarray) -> np.ndarray:
    """Temperature from enthalpy (latent heat 1)."""
    E = np.asarray(E, dtype=float)
    return np.where(E < 0.0, E, np.where(E > 1.0, E - 1.0, 0.0))


def enthalpy_from_temperature(u: np.ndarray) -> np.ndarray:
    """``E = u + chi_{u > 0}``; nodes with ``u = 0`` start solid (``E = 0``)."""
    u = np.asarray(u, dtype=float)
    return u + (u > 0.0)


@dataclass(frozen=True)
class SolverConfig:
    """Time-step controls. ``dt = None`` means ``cfl * h^2 / 4``."""

    dt: float | None = None
    cfl: float = MAX_CFL
    max_steps: int = 10_000_000
    front_band: float = 0.05
    check_every: int = 500

    def __post_init__(self) -> None:
        if not (0.0 < self.cfl <= MAX_CFL):
            raise ValueError(f"cfl must lie in (0, {MAX_CFL}], got {self.cfl}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")

    def time_step(self, h: float) -> float:
        limit = self.cfl * h * h / 4.0
        if self.dt is None:
            return limit
        if self.dt > limit * (1.0 + 1e-12):
            raise ValueError(f"CFL violation: dt={self.dt:.3e} exceeds cfl*h^2/4 = {limit:.3e}")
        return self.dt


@dataclass(frozen=True, eq=False)
class StefanState:
    """Enthalpy field at time ``t``; the temperature is derived on demand."""

    E: ScalarField
    fixed: np.ndarray | None = None

    @property
    def t(self) -> float:
        return self.E.t

    @property
    def grid(self) -> Grid:
        return self.E.grid

    @cached_property
    def u(self) -> ScalarField:
        return self.E.with_values(beta(self.E.values))

    def crop(self, box: tuple[float, float, float, float]) -> "StefanState":
        return StefanState(self.E.crop(*box), None)


def initial_state(u0: ScalarField, R: float | None = None, *, pin_rim: bool = True, fixed: np.ndarray | None = None) -> StefanState:
    """State with ``E = u0 + chi_{u0 > 0}``.

    ``R`` pins every node with ``|x| >= R`` (and the data there should be
    -1). ``pin_rim`` pins the outermost ring of nodes of 2D grids.
    """
    g = u0.grid
    pin = np.zeros(g.shape, dtype=bool) if fixed is None else np.asarray(fixed, dtype=bool).copy()
    if R is not None:
        X, Y = g.coords()
        pin |= np.hypot(X, Y) >= R
        if not g.covers_ball(R):
            raise ValueError("grid must cover B_R")
    if pin_rim and g.ny > 1:
        pin[0, :] = pin[-1, :] = True
        pin[:, 0] = pin[:, -1] = True
    return StefanState(ScalarField(g, enthalpy_from_temperature(u0.values), u0.t), pin)


@numba.njit(cache=True, inline="always")
def _update(E, u, un, i, j, im, ip, jm, jp, lam, c):  # pragma: no cover - compiled
    e = E[i, j]
    g = c * e if e < 0.0 else ((e - 1.0) * c + 1.0 if e > 1.0 else e)
    e2 = g + lam * (((u[im, j] + u[ip, j]) + u[i, jm]) + u[i, jp])
    E[i, j] = e2
    un[i, j] = e2 if e2 < 0.0 else (e2 - 1.0 if e2 > 1.0 else 0.0)


@numba.njit(cache=True)
def _advance(E, u, un, fixed, lam, nsteps):  # pragma: no cover - compiled
    ny, nx = E.shape
    c = 1.0 - 4.0 * lam
    for _ in range(nsteps):
        for i in range(ny):
            im = i - 1 if i > 0 else i
            ip = i + 1 if i < ny - 1 else i
            # mirror edges: columns 0 and nx-1
            for j in (0, nx - 1):
                if fixed[i, j]:
                    un[i, j] = u[i, j]
                else:
                    _update(E, u, un, i, j, im, ip, j - 1 if j > 0 else j, j + 1 if j < nx - 1 else j, lam, c)
            for j in range(1, nx - 1):
                if fixed[i, j]:
                    un[i, j] = u[i, j]
                else:
                    _update(E, u, un, i, j, im, ip, j - 1, j + 1, lam, c)
        tmp = u
        u = un
        un = tmp
    return u


def _step_numpy(E: np.ndarray, fixed: np.ndarray, lam: float) -> np.ndarray:
    """Reference single step (same arithmetic as the compiled kernel)."""
    u = beta(E)
    up = np.pad(u, 1, mode="edge")
    s = ((up[:-2, 1:-1] + up[2:, 1:-1]) + up[1:-1, :-2]) + up[1:-1, 2:]
    c = 1.0 - 4.0 * lam
    g = np.where(E < 0.0, c * E, np.where(E > 1.0, (E - 1.0) * c + 1.0, E))
    out = g + lam * s
    return np.where(fixed, E, out)


def _first_bad(E: np.ndarray) -> tuple[int, ...]:
    bad = ~np.isfinite(E)
    return tuple(int(v) for v in np.unravel_index(int(np.argmax(bad)), E.shape))


def step(state: StefanState, cfg: SolverConfig) -> StefanState:
    """One explicit step (vectorized reference path)."""
    g = state.grid
    dt = cfg.time_step(g.h)
    fixed = state.fixed if state.fixed is not None else np.zeros(g.shape, dtype=bool)
    E2 = _step_numpy(state.E.values, fixed, dt / g.h**2)
    if not np.all(np.isfinite(E2)):
        raise SolverError(f"non-finite enthalpy at cell {_first_bad(E2)}")
    return StefanState(ScalarField(g, E2, state.t + dt), fixed)


class Stepper:
    """Owns the working buffers for repeated compiled steps."""

    def __init__(self, state: StefanState, cfg: SolverConfig):
        self.grid = state.grid
        self.dt = cfg.time_step(self.grid.h)
        self.lam = self.dt / self.grid.h**2
        self.cfg = cfg
        self.fixed = np.ascontiguousarray(state.fixed if state.fixed is not None else np.zeros(self.grid.shape, dtype=bool))
        self.E = np.ascontiguousarray(state.E.values, dtype=float).copy()
        self.u = beta(self.E)
        self.un = np.empty_like(self.u)
        self.t0 = state.t
        self.n = 0

    @property
    def t(self) -> float:
        return self.t0 + self.n * self.dt

    def advance(self, nsteps: int) -> None:
        done = 0
        while done < nsteps:
            k = min(self.cfg.check_every, nsteps - done)
            if self.n + k > self.cfg.max_steps:
                raise ValueError(f"step budget max_steps={self.cfg.max_steps} exhausted")
            _advance(self.E, self.u, self.un, self.fixed, self.lam, k)
            if k % 2 == 1:
                self.u, self.un = self.un, self.u
            self.n += k
            done += k
            if not np.isfinite(self.E).all():
                raise SolverError(f"non-finite enthalpy at cell {_first_bad(self.E)} after step {self.n}")

    def state(self, crop: tuple[float, float, float, float] | None = None) -> StefanState:
        E = ScalarField(self.grid, self.E.copy(), self.t)
        if crop is not None:
            return StefanState(E.crop(*crop), None)
        return StefanState(E, self.fixed)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class Trajectory:
    """Snapshots of a run, in increasing time order."""

    states: list[StefanState]
    dt: float
    h_sim: float
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def grid(self) -> Grid:
        return self.states[0].grid

    @property
    def h(self) -> float:
        return self.grid.h

    def __len__(self) -> int:
        return len(self.states)

    def index_of(self, t: float, tol: float | None = None) -> int:
        tol = 0.5 * self.dt if tol is None else tol
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol:
            raise ValueError(f"no snapshot within {tol:.2e} of t={t}")
        return k

    def sample(self, points: np.ndarray, t: float) -> np.ndarray:
        """Temperature at ``points`` and time ``t`` (linear in time between snapshots)."""
        ts = self.times
        if t < ts[0] - 1e-12 or t > ts[-1] + 1e-12:
            raise ValueError(f"time {t} outside trajectory range [{ts[0]}, {ts[-1]}]")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        k = min(max(k, 0), len(ts) - 1)
        if k == len(ts) - 1 or abs(ts[k] - t) <= 1e-14:
            return self.states[k].u.sample(points)
        w = (t - ts[k]) / (ts[k + 1] - ts[k])
        a = self.states[k].u.sample(points)
        b = self.states[k + 1].u.sample(points)
        return (1.0 - w) * a + w * b

    # -- persistence -------------------------------------------------------
    def save(self, out_dir: str | Path, kind: str | None = None) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = []
        if kind is not None:
            lines.append(f"kind {kind}")
        for k, s in enumerate(self.states):
            name = f"snap_{k:04d}.txt"
            s.E.save(out / name)
            lines.append(f"t {s.t!r} file {name}")
        manifest = out / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n", encoding="ascii")
        return manifest

    @classmethod
    def load(cls, manifest: str | Path) -> "Trajectory":
        manifest = Path(manifest)
        if not manifest.exists():
            raise FileNotFoundError(f"manifest not found: {manifest}")
        states = []
        meta: dict = {}
        for ln in manifest.read_text(encoding="ascii").splitlines():
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "kind":
                meta["kind"] = parts[1]
                continue
            if len(parts) != 4 or parts[0] != "t" or parts[2] != "file":
                raise ValueError(f"{manifest}: malformed manifest line {ln!r}")
            path = manifest.parent / parts[3]
            if not path.exists():
                raise FileNotFoundError(f"{manifest}: snapshot {parts[3]} is missing")
            E = ScalarField.load(path)
            if abs(E.t - float(parts[1])) > 1e-12 * max(1.0, abs(E.t)):
                raise ValueError(f"{path}: header time {E.t} disagrees with manifest {parts[1]}")
            states.append(StefanState(E, None))
        if not states:
            raise ValueError(f"{manifest}: no snapshots listed")
        g = states[0].grid
        ts = np.array([s.t for s in states])
        dt = float(np.min(np.diff(ts))) if ts.size > 1 else g.h**2 * MAX_CFL / 4
        return cls(states, dt=min(dt, MAX_CFL * g.h**2 / 4), h_sim=g.h, meta=meta)


def run(
    u0: ScalarField | StefanState,
    cfg: SolverConfig,
    t_end: float,
    snapshot_times: Iterable[float] | None = None,
    *,
    R: float | None = None,
    crop: tuple[float, float, float, float] | None = None,
) -> Trajectory:
    """Integrate to ``t_end`` and keep snapshots at the steps nearest ``snapshot_times``.

    The initial state is always the first snapshot. ``crop`` stores only a
    window of each snapshot (the time stepping always uses the full grid).
    """
    state = u0 if isinstance(u0, StefanState) else initial_state(u0, R)
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    stepper = Stepper(state, cfg)
    dt = stepper.dt
    n_end = int(round((t_end - state.t) / dt))
    wanted = sorted({int(round((t - state.t) / dt)) for t in (list(snapshot_times) if snapshot_times is not None else []) if state.t <= t <= t_end + 0.5 * dt})
    wanted = [n for n in wanted if 0 < n <= n_end]
    if n_end > 0 and (not wanted or wanted[-1] != n_end):
        wanted.append(n_end)
    snaps = [stepper.state(crop)]
    for n in wanted:
        stepper.advance(n - stepper.n)
        snaps.append(stepper.state(crop))
    log.info("run: %d steps of dt=%.3e, %d snapshots", stepper.n, dt, len(snaps))
    return Trajectory(snaps, dt=dt, h_sim=state.grid.h, meta={"steps": stepper.n})


def enthalpy_balance(before: StefanState, after: StefanState) -> tuple[float, float]:
    """Return ``(change of sum E over free nodes, boundary flux * dt)`` for one step."""
    fixed = before.fixed
    if fixed is None:
        raise ValueError("balance needs the pinned-node mask")
    g = before.grid
    dt = after.t - before.t
    u = before.u.values
    free = ~fixed
    flux = 0.0
    for axis in (0, 1):
        for sh in (1, -1):
            nb_u = np.roll(u, sh, axis=axis)
            nb_fixed = np.roll(fixed, sh, axis=axis)
            valid = np.ones_like(fixed)
            # rolled-in edges are mirror edges: no flux
            if axis == 0:
                valid[0 if sh == 1 else -1, :] = False
            else:
                valid[:, 0 if sh == 1 else -1] = False
            sel = free & nb_fixed & valid
            flux += float(np.sum(nb_u[sel] - u[sel]))
    dE = float(np.sum(after.E.values[free]) - np.sum(before.E.values[free]))
    return dE, flux * dt / g.h**2


# ---------------------------------------------------------------------------
# Fronts
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FrontCurve:
    """Polylines of ``{u = 0}``; the positive phase lies to the left of each."""

    t: float
    curves: list[np.ndarray]

    @property
    def is_empty(self) -> bool:
        return len(self.curves) == 0

    @property
    def points(self) -> np.ndarray:
        if self.is_empty:
            return np.empty((0, 2))
        return np.concatenate(self.curves, axis=0)

    def closed(self, tol: float = 1e-9) -> list[bool]:
        return [bool(np.allclose(c[0], c[-1], atol=tol)) for c in self.curves]


def _contours(values: np.ndarray, grid: Grid, positive: bool) -> list[np.ndarray]:
    from skimage import measure

    v = values if positive else -values
    # Ties: a node with u = 0 belongs to the non-positive side.
    w = np.where(v > 0.0, v, np.minimum(v, -1e-300))
    if grid.ny == 1:
        w = np.vstack([w, w])
    raw = measure.find_contours(w, 0.0)
    out = []
    for c in raw:
        xy = np.stack([grid.ox + c[:, 1] * grid.h, grid.oy + c[:, 0] * grid.h], axis=-1)
        out.append(xy)
    return out


def extract_front(state: StefanState | ScalarField, *, from_negative: bool = False) -> FrontCurve:
    """Marching-squares zero contour of ``u``; empty curve list if no crossing.

    With ``from_negative`` the contour is taken as the boundary of ``{u < 0}``
    (ties then count as non-negative).
    """
    u = state.u if isinstance(state, StefanState) else state
    curves = _contours(u.values, u.grid, positive=not from_negative)
    oriented = []
    for c in curves:
        if c.shape[0] < 2:
            continue
        # orient so that the positive phase is on the left
        k = c.shape[0] // 2
        tvec = c[min(k + 1, c.shape[0] - 1)] - c[max(k - 1, 0)]
        nrm = np.hypot(*tvec)
        if nrm > 0:
            left = 0.5 * (c[min(k + 1, c.shape[0] - 1)] + c[max(k - 1, 0)]) + 0.25 * u.grid.h * np.array([-tvec[1], tvec[0]]) / nrm
            if float(u.sample(left, strict=False)) <= 0.0:
                c = c[::-1]
        oriented.append(c)
    return FrontCurve(u.t, oriented)


def ray_crossing(values: np.ndarray, s: np.ndarray, outward: bool) -> float:
    """Sup of ``s`` with positive samples (outward) or of the inward non-positive run.

    ``values`` are samples at increasing ``s >= 0``; linear interpolation
    refines the crossing.
    """
    pos = values > 0.0
    if outward:
        idx = np.nonzero(pos)[0]
        if idx.size == 0:
            return 0.0
        k = int(idx[-1])
        if k == s.size - 1:
            return float(s[-1])
        a, b = values[k], values[k + 1]
        return float(s[k] + (s[k + 1] - s[k]) * a / (a - b))
    idx = np.nonzero(pos)[0]
    if idx.size == 0:
        return float(s[-1])
    k = int(idx[0])
    if k == 0:
        return 0.0
    a, b = values[k - 1], values[k]
    return float(s[k - 1] + (s[k] - s[k - 1]) * (-a) / (b - a)) if b != a else float(s[k])


def front_distance(x0: Sequence[float], e_n: Sequence[float], traj: "Trajectory", t: float, *, window: float = 0.3) -> float:
    """Signed normal displacement of the front along the ray through ``x0``.

    Positive: ``sup{d : u(x0 + d e_n, t) > 0}`` (the positive phase advanced).
    Negative: minus the depth ``sup{d : u(x0 - d' e_n, t) <= 0 for d' <= d}``
    when no positive value lies outward. The magnitude is the two-sided
    distance the front moved past ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    en = np.asarray(e_n, dtype=float)
    h = traj.h
    s = np.arange(0.0, window + 0.25 * h, 0.25 * h)
    out_pts = x0[None, :] + s[:, None] * en[None, :]
    in_pts = x0[None, :] - s[:, None] * en[None, :]
    try:
        vo = traj.sample(out_pts, t)
        vi = traj.sample(in_pts, t)
    except ValueError as exc:
        raise ValueError(f"probe ray from {tuple(x0)} exits the grid") from exc
    if np.any(vo[1:] > 0.0) or vo[0] > 0.0:
        return ray_crossing(vo, s, outward=True)
    return -ray_crossing(vi, s, outward=False)


def gradient_one_sided(state: StefanState | ScalarField, x: Sequence[float], phase: int, e_n: Sequence[float], *, offset: float | None = None) -> float:
    """Two-point difference of the phase part ``u_phase = max(phase*u, 0)`` along ``e_n``.

    The stencil ``x, x + delta*d`` uses the direction ``d = +-e_n`` that goes
    deeper into the requested phase. If the far point leaves the phase, the
    offset falls back to one cell.
    """
    if phase not in (1, -1):
        raise ValueError("phase must be +1 or -1")
    u = state.u if isinstance(state, StefanState) else state
    h = u.grid.h
    delta = 2.0 * h if offset is None else float(offset)
    x = np.asarray(x, dtype=float)
    en = np.asarray(e_n, dtype=float)

    def part(p: np.ndarray) -> float:
        return max(phase * float(u.sample(p)), 0.0)

    def attempt(dl: float) -> tuple[float, bool]:
        a = part(x + dl * en)
        b = part(x - dl * en)
        d = en if a >= b else -en
        far = part(x + dl * d)
        ok = far > 0.0
        return abs(far - part(x)) / dl, ok

    g, ok = attempt(delta)
    if not ok and delta > h:
        log.info("gradient_one_sided: stencil crosses the front at %s, falling back to offset h", tuple(x))
        g, ok = attempt(h)
    return g


# ---------------------------------------------------------------------------
# Neumann similarity solution (1D validation oracle)
# ---------------------------------------------------------------------------


def neumann_residual(lam: float, superheat: float, subcool: float) -> float:
    """Front condition ``lam*sqrt(pi) = exp(-lam^2) (T_w/erf(lam) - T_s/erfc(lam))``."""
    return lam * math.sqrt(math.pi) - math.exp(-lam * lam) * (superheat / math.erf(lam) - subcool / math.erfc(lam))


def neumann_lambda(superheat: float, subcool: float, tol: float = 1e-14) -> float:
    """Root of :func:`neumann_residual` by bisection (the residual is increasing)."""
    if superheat <= 0 or subcool < 0:
        raise ValueError("need superheat > 0 and subcool >= 0")
    lo, hi = 1e-12, 1.0
    while neumann_residual(hi, superheat, subcool) < 0:
        hi *= 2.0
        if hi > 50:
            raise ValueError("Neumann bracket search failed")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if neumann_residual(mid, superheat, subcool) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def neumann_profile(x: np.ndarray, t: float, superheat: float, subcool: float, lam: float) -> np.ndarray:
    """Exact temperature of the two-phase Neumann solution (wall at x = 0)."""
    x = np.asarray(x, dtype=float)
    eta = x / (2.0 * np.sqrt(t))
    liquid = superheat * (1.0 - erf(eta) / erf(lam))
    solid = -subcool * (1.0 - erfc(eta) / erfc(lam))
    return np.where(eta < lam, liquid, solid)


def neumann_slab(h: float, length: float, superheat: float, subcool: float, rows: int = 1) -> StefanState:
    """Slab ``[0, length]`` with the wall pinned hot and the far end pinned cold."""
    nx = int(round(length / h)) + 1
    grid = Grid(h=h, ox=0.0, oy=0.0, nx=nx, ny=rows)
    E = np.full(grid.shape, -subcool)
    E[:, 0] = superheat + 1.0
    fixed = np.zeros(grid.shape, dtype=bool)
    fixed[:, 0] = True
    fixed[:, -1] = True
    return StefanState(ScalarField(grid, E, 0.0), fixed)


def slab_front(state: StefanState) -> float:
    """Front position of a slab run along its first row."""
    u = state.u.values[0]
    x = state.grid.x
    return ray_crossing(u, x - x[0], outward=True) + x[0]
