"""Explicit super- and subsolution barriers and ordering certificates.

Barriers are sampled directly on the grid: the inf-convolution ``Phi`` is a
min filter over a disk of shrinking radius, the sup-convolution ``U2`` a
max filter over a dilated copy of ``U1``. Only their harmonic pieces go
through :func:`stefanlab.elliptic.solve_dirichlet`.

A barrier trajectory holds one field per snapshot time. Fields may carry
NaN where the barrier is undefined (outside its construction region);
certificates refuse to compare there.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .elliptic import band_region, solve_dirichlet
from .geometry import Grid, ScalarField, StarDomain, bilinear_sample
from .stefan import SolverConfig, StefanState, Trajectory, enthalpy_from_temperature, run

log = logging.getLogger(__name__)

KINDS = ("supersolution", "subsolution")
B_MIN = 1.25
B_MAX = 61.0 / 48.0
DEFAULT_CN = 1.0


@dataclass(eq=False)
class BarrierTrajectory:
    """Barrier fields at snapshot times with their construction parameters."""

    fields: list[ScalarField]
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.fields:
            raise ValueError("a barrier needs at least one field")
        ts = self.times
        if np.any(np.diff(ts) < 0):
            raise ValueError("barrier times must be nondecreasing")

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.fields])

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    def __len__(self) -> int:
        return len(self.fields)

    def at(self, t: float, tol: float) -> ScalarField:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol:
            raise ValueError(f"barrier has no field within {tol:.2e} of t={t}")
        return self.fields[k]

    def retagged(self, kind: str) -> "BarrierTrajectory":
        return BarrierTrajectory(self.fields, kind, dict(self.params))

    def shifted(self, vec: Sequence[float]) -> "BarrierTrajectory":
        """Fields ``x -> B(x - vec)``; NaN where ``x - vec`` leaves the grid."""
        v = np.asarray(vec, dtype=float)
        g = self.grid
        X, Y = g.coords()
        P = np.stack([X - v[0], Y - v[1]], axis=-1)
        xmin, xmax, ymin, ymax = g.extent
        ok = (P[..., 0] >= xmin) & (P[..., 0] <= xmax) & (P[..., 1] >= ymin) & (P[..., 1] <= ymax)
        out = []
        for f in self.fields:
            vals = np.full(g.shape, np.nan)
            vals[ok] = bilinear_sample(g, f.values, P[ok])
            out.append(f.with_values(vals))
        params = dict(self.params)
        params["shift_x"], params["shift_y"] = float(v[0]), float(v[1])
        return BarrierTrajectory(out, self.kind, params)

    def save(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lines = [f"kind {self.kind}"]
        for key in sorted(self.params):
            lines.append(f"param {key} {self.params[key]!r}")
        for k, f in enumerate(self.fields):
            name = f"barrier_{k:04d}.txt"
            f.save(out / name)
            lines.append(f"t {f.t!r} file {name}")
        manifest = out / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n", encoding="ascii")
        return manifest

    @classmethod
    def load(cls, manifest: str | Path) -> "BarrierTrajectory":
        manifest = Path(manifest)
        kind = None
        params: dict = {}
        fields = []
        for ln in manifest.read_text(encoding="ascii").splitlines():
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "kind":
                kind = parts[1]
            elif parts[0] == "param":
                params[parts[1]] = float(parts[2])
            elif parts[0] == "t" and len(parts) == 4:
                fields.append(ScalarField.load(manifest.parent / parts[3]))
            else:
                raise ValueError(f"{manifest}: malformed line {ln!r}")
        if kind is None:
            raise ValueError(f"{manifest}: missing kind line")
        return cls(fields, kind, params)


def _disk_footprint(radius: float, h: float) -> np.ndarray:
    m = int(math.floor(radius / h + 1e-9))
    k = np.arange(-m, m + 1)
    I, J = np.meshgrid(k, k, indexing="ij")
    return (I * I + J * J) * h * h <= radius * radius * (1 + 1e-12)


# ---------------------------------------------------------------------------
# Inf-convolution supersolution
# ---------------------------------------------------------------------------


def stencil_radius(t: float, r: float, b: float, t_k: float) -> float:
    """``rho(t) = r^b - (t - t_k) r^(b-2)/2``, floored at 0."""
    return max(r**b - (t - t_k) * r ** (b - 2.0) / 2.0, 0.0)


def annulus_omega(dom: StarDomain, r: float, grid: Grid, *, b: float = B_MIN, C_n: float = DEFAULT_CN, tol: float = 1e-9) -> ScalarField:
    """Harmonic ``w`` in ``(1 + 4r^b)D - D``: ``C_n r^(13/24)`` on ``dD``, 0 outside.

    Dilations are about the domain's center; ``w`` is extended by zero to
    the rest of the grid (including ``D`` itself).
    """
    c = np.asarray(dom.center, dtype=float)
    s = 1.0 + 4.0 * r**b
    top = C_n * r ** (13.0 / 24.0)

    def outer(P: np.ndarray) -> np.ndarray:
        return dom.level(c + (P - c) / s)

    region = band_region(grid, dom.level, top, outer, 0.0)
    sol = solve_dirichlet(region, tol)
    w = np.where(region.inside, sol.field.values, 0.0)
    return ScalarField(grid, np.maximum(w, 0.0))


def inf_convolution_supersolution(
    omega: ScalarField,
    r: float,
    b: float = B_MIN,
    t_k: float = 0.0,
    horizon: float | None = None,
    *,
    times: Sequence[float] | None = None,
) -> BarrierTrajectory:
    """``Phi(x, t) = min{omega(y) : |x - y| <= rho(t)}`` on grid nodes.

    ``times`` defaults to ``[t_k, t_k + horizon]``. Points of the disk that
    fall off the grid are ignored.
    """
    if not (B_MIN <= b < B_MAX):
        raise ValueError(f"b must lie in [5/4, 61/48), got {b}")
    if not (0.0 < r < 1.0):
        raise ValueError(f"r must lie in (0, 1), got {r}")
    # r^(b-2) > r^(13/24 - b) holds for every r < 1 once b < 61/48.
    if np.nanmin(omega.values) < 0:
        raise ValueError("omega must be nonnegative")
    h = omega.grid.h
    if r**b < h:
        raise ValueError(f"stencil radius r^b = {r**b:.3e} is below the grid spacing {h:.3e}: scale too small for grid")
    if times is None:
        if horizon is None:
            raise ValueError("give either horizon or times")
        times = [t_k, t_k + horizon]
    times = [float(t) for t in times]
    if any(t < t_k - 1e-15 for t in times):
        raise ValueError("barrier times must not precede t_k")
    fields = []
    for t in times:
        rho = stencil_radius(t, r, b, t_k)
        fp = _disk_footprint(rho, h)
        vals = ndimage.minimum_filter(omega.values, footprint=fp, mode="constant", cval=np.inf)
        fields.append(ScalarField(omega.grid, vals, t))
    params = {"r": r, "b": b, "t_k": t_k, "speed": 0.5 * r ** (b - 2.0)}
    return BarrierTrajectory(fields, "supersolution", params)


def supersolution_audit(phi: BarrierTrajectory, exclude: Callable[[np.ndarray], np.ndarray] | None = None) -> dict:
    """Compare the recession speed ``r^(b-2)/2`` with ``|D Phi|`` at the edge of its support.

    The gradient at the free boundary is estimated by the largest one-cell
    difference between a positive node and a zero neighbour. ``exclude``
    (points -> bool) removes parts of the boundary outside the comparison
    region, e.g. the inner rim next to ``D``. Returns the speed, the
    largest gradient and ``margin = speed - gradient``.
    """
    speed = float(phi.params["speed"])
    g = phi.grid
    X, Y = g.coords()
    P = np.stack([X, Y], axis=-1)
    keep = np.ones(g.shape, dtype=bool) if exclude is None else ~np.asarray(exclude(P), dtype=bool)
    worst = 0.0
    for f in phi.fields:
        v = np.nan_to_num(f.values, nan=0.0)
        pos = v > 0
        for ax in (0, 1):
            for sh in (1, -1):
                nb = np.roll(v, sh, axis=ax)
                edge = pos & (nb == 0) & keep
                if edge.any():
                    worst = max(worst, float(v[edge].max()) / g.h)
    return {"speed": speed, "gradient": worst, "margin": speed - worst}


# ---------------------------------------------------------------------------
# Sup-convolution subsolution and one-phase supersolution
# ---------------------------------------------------------------------------


def c_of_t(tau: float) -> float:
    return float(tau) ** 0.8 if tau > 0 else 0.0


def dilation_depth(ct: float, eps: float) -> float:
    """Depth (in units of the ball radius) of the dilation center behind the front.

    For a front that is flat across the ball, ``U2 <= u`` needs a depth of at
    least ``1 + (1 + sqrt eps)(1 - c)`` and ``U1 <= U2(. - sqrt(eps) e_n)``
    needs at most ``(1 + sqrt eps)(2 - c)``. We take the midpoint, which also
    keeps the offset between the two fronts constant in time.
    """
    se = math.sqrt(eps)
    return 1.0 + (1.0 + se) * (1.0 - ct) + 0.5 * se


def sup_convolution_subsolution(
    U1: BarrierTrajectory,
    eps: float,
    *,
    center: Sequence[float] | Callable[[float], Sequence[float]] = (0.0, 0.0),
    length: float = 1.0,
    time_scale: float = 1.0,
    t_origin: float = 0.0,
    region: np.ndarray | None = None,
) -> BarrierTrajectory:
    """``U2+(x,t) = (1-eps) max_{|y-x| <= rad} U1+(c + (1+sqrt eps)(y - c), t)``.

    ``center`` may be a function of ``c(tau)`` for a moving dilation center.
    Lengths and times are in the units of the rescaled problem: the ball
    radius is ``length * sqrt(eps) * (1 - c(tau))`` with ``c(tau) = tau^(4/5)``
    and ``tau = (t - t_origin)/time_scale``. ``region`` (nodes) restricts
    where ``U2`` is evaluated; it is NaN elsewhere.
    """
    if not (0.0 < eps < 1.0):
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    g = U1.grid
    h = g.h
    se = math.sqrt(eps)
    X, Y = g.coords()
    xmin, xmax, ymin, ymax = g.extent
    tiny = 1e-9 * h
    reg = np.ones(g.shape, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    fields = []
    for f in U1.fields:
        tau = (f.t - t_origin) / time_scale
        ct = c_of_t(tau)
        if ct > 1.0 + 1e-12:
            raise ValueError(f"c(t) = {ct:.3f} exceeds 1 at t={f.t}: horizon too long for the sup-convolution")
        c = np.asarray(center(ct) if callable(center) else center, dtype=float)
        Pd = np.stack([c[0] + (1.0 + se) * (X - c[0]), c[1] + (1.0 + se) * (Y - c[1])], axis=-1)
        valid = (Pd[..., 0] >= xmin - tiny) & (Pd[..., 0] <= xmax + tiny) & (Pd[..., 1] >= ymin - tiny) & (Pd[..., 1] <= ymax + tiny)
        Pd[..., 0] = np.clip(Pd[..., 0], xmin, xmax)
        Pd[..., 1] = np.clip(Pd[..., 1], ymin, ymax)
        rad = length * se * max(1.0 - ct, 0.0)
        fp = _disk_footprint(rad, h)
        dil = np.full(g.shape, -np.inf)
        plus = np.maximum(np.nan_to_num(f.values, nan=-np.inf), 0.0)
        dil[valid] = bilinear_sample(g, plus, Pd[valid])
        vals = ndimage.maximum_filter(dil, footprint=fp, mode="constant", cval=-np.inf)
        bad = ndimage.maximum_filter((~valid).astype(np.int8), footprint=fp, mode="constant", cval=1) > 0
        if np.any(bad & reg):
            raise ValueError("dilated sample exits the grid inside the evaluation region")
        out = np.where(reg, (1.0 - eps) * vals, np.nan)
        fields.append(f.with_values(out))
    params = dict(U1.params)
    params.update({"eps": eps, "length": length, "time_scale": time_scale})
    if not callable(center):
        params.update({"center_x": float(center[0]), "center_y": float(center[1])})
    return BarrierTrajectory(fields, "subsolution", params)


def one_phase_supersolution(u0: ScalarField, cfg: SolverConfig, times: Sequence[float], *, R: float | None = None, crop=None) -> BarrierTrajectory:
    """``U1+``: the discrete one-phase run from ``max(u0, 0)`` with the rim held at 0.

    Its enthalpy dominates the two-phase one node by node and the pinned
    values are larger, so the monotone scheme keeps ``u <= U1+`` exactly.
    """
    plus = np.maximum(u0.values, 0.0)
    g = u0.grid
    fixed = np.zeros(g.shape, dtype=bool)
    if R is not None:
        X, Y = g.coords()
        fixed |= np.hypot(X, Y) >= R
    fixed[0, :] = fixed[-1, :] = True
    fixed[:, 0] = fixed[:, -1] = True
    state = StefanState(ScalarField(g, enthalpy_from_temperature(plus), u0.t), fixed)
    t_end = max(times)
    traj = run(state, cfg, t_end, times, crop=crop)
    fields = [s.u for s in traj.states]
    return BarrierTrajectory(fields, "supersolution", {"dt": traj.dt})


def attach_negative_part(
    plus: BarrierTrajectory,
    ball_center: Sequence[float],
    ball_radius: float,
    outer_data: Callable[[np.ndarray, float], np.ndarray],
    *,
    tol: float = 1e-9,
) -> BarrierTrajectory:
    """``U = U+ - U-`` in the ball ``B``; NaN outside it.

    ``U-`` is harmonic in ``B - {U+ > 0}`` with zero on the free boundary
    and ``outer_data(points, t)`` on the rest of ``dB``.
    """
    g = plus.grid
    c = np.asarray(ball_center, dtype=float)
    X, Y = g.coords()
    inball = np.hypot(X - c[0], Y - c[1]) < ball_radius

    def ball_level(P: np.ndarray) -> np.ndarray:
        return np.hypot(P[..., 0] - c[0], P[..., 1] - c[1]) - ball_radius

    fields = []
    for f in plus.fields:
        up = np.maximum(np.nan_to_num(f.values, nan=0.0), 0.0)
        if np.any(np.isnan(f.values[inball])):
            raise ValueError("positive part undefined inside the ball")
        # Signed level of the support: negative where U+ > 0.
        scale = 1e-12 * max(float(up.max()), 1.0)

        def supp_level(P: np.ndarray, up=up) -> np.ndarray:
            return scale - bilinear_sample(g, up, P, strict=False)

        region = band_region(g, supp_level, 0.0, ball_level, lambda P, t=f.t: np.maximum(outer_data(P, t), 0.0))
        if region.inside.any():
            um = np.where(region.inside, solve_dirichlet(region, tol).field.values, 0.0)
        else:
            um = np.zeros(g.shape)
        vals = np.where(inball, up - np.maximum(um, 0.0), np.nan)
        fields.append(f.with_values(vals))
    params = dict(plus.params)
    params.update({"ball_x": float(c[0]), "ball_y": float(c[1]), "ball_r": ball_radius})
    return BarrierTrajectory(fields, plus.kind, params)


# ---------------------------------------------------------------------------
# Radial cap
# ---------------------------------------------------------------------------


def cap_inner_radius(t: float, r: float, C3: float, t0: float) -> float:
    return 0.5 * r**1.25 - C3 * (t - t0)


def radial_cap_closed_form(points: np.ndarray, y1: Sequence[float], r: float, C2: float, C3: float, t0: float, t: float) -> np.ndarray:
    """``2 C2 r^(5/4) ln(|x-y1|/r(t)) / ln(2 r^(5/4)/r(t))`` clipped to the annulus."""
    p = np.asarray(points, dtype=float)
    rho = np.hypot(p[..., 0] - y1[0], p[..., 1] - y1[1])
    rin = cap_inner_radius(t, r, C3, t0)
    rout = 2.0 * r**1.25
    top = 2.0 * C2 * r**1.25
    val = top * np.log(np.maximum(rho, rin) / rin) / math.log(rout / rin)
    return np.clip(val, 0.0, top)


def radial_cap_barrier(
    y1: Sequence[float],
    r: float,
    C2: float,
    C3: float,
    t0: float,
    grid: Grid,
    times: Sequence[float],
    *,
    tol: float = 1e-10,
) -> BarrierTrajectory:
    """Harmonic cap in ``B_{2r^(5/4)}(y1) - B_{r(t)}(y1)`` with ``r(t) = r^(5/4)/2 - C3 (t - t0)``.

    Zero on the inner disk, ``2 C2 r^(5/4)`` on and outside the outer circle.
    ``params`` records the recession speed ``C3`` and the largest inner-rim
    gradient of the closed form (``inner_gradient``); the supersolution
    condition asks for ``C3 >= inner_gradient``.
    """
    y1 = np.asarray(y1, dtype=float)
    h = grid.h
    rout = 2.0 * r**1.25
    top = 2.0 * C2 * r**1.25
    if not grid.covers_ball(rout + 2 * h, center=y1):
        raise ValueError("grid does not cover the cap's outer ball")
    fields = []
    grads = []
    X, Y = grid.coords()
    rho = np.hypot(X - y1[0], Y - y1[1])
    for t in times:
        rin = cap_inner_radius(t, r, C3, t0)
        if rin <= 2 * h:
            raise ValueError(f"inner radius {rin:.3e} at t={t} is within 2h of zero")
        if rout - rin < 3 * h:
            raise ValueError(f"annulus thinner than 3 cells at t={t}")

        def inner(P: np.ndarray, rin=rin) -> np.ndarray:
            return np.hypot(P[..., 0] - y1[0], P[..., 1] - y1[1]) - rin

        def outer(P: np.ndarray) -> np.ndarray:
            return np.hypot(P[..., 0] - y1[0], P[..., 1] - y1[1]) - rout

        region = band_region(grid, inner, 0.0, outer, top)
        sol = solve_dirichlet(region, tol)
        vals = np.where(region.inside, sol.field.values, np.where(rho <= rin, 0.0, top))
        fields.append(ScalarField(grid, vals, float(t)))
        grads.append(top / (rin * math.log(rout / rin)))
    params = {"y1_x": float(y1[0]), "y1_y": float(y1[1]), "r": r, "C2": C2, "C3": C3, "t0": t0, "inner_gradient": max(grads)}
    return BarrierTrajectory(fields, "supersolution", params)


# ---------------------------------------------------------------------------
# Certification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CertificationRow:
    t: float
    max_violation: float
    argmax_x: float
    argmax_y: float


@dataclass(eq=False)
class CertificationReport:
    kind: str
    rows: list[CertificationRow]

    @property
    def max_violation(self) -> float:
        return max((r.max_violation for r in self.rows), default=0.0)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "max_violation", "argmax_x", "argmax_y"])
            for r in self.rows:
                w.writerow([repr(r.t), repr(r.max_violation), repr(r.argmax_x), repr(r.argmax_y)])


def _field_at(source: Trajectory | BarrierTrajectory, t: float, tol: float) -> ScalarField:
    if isinstance(source, Trajectory):
        return source.states[source.index_of(t, tol)].u
    return source.at(t, tol)


def _values_on(f: ScalarField, grid: Grid, mask: np.ndarray) -> np.ndarray:
    g = f.grid
    if g.shape == grid.shape and g.h == grid.h and g.ox == grid.ox and g.oy == grid.oy:
        return f.values[mask]
    X, Y = grid.coords()
    return bilinear_sample(g, f.values, np.stack([X[mask], Y[mask]], axis=-1))


def certify_report(
    traj_u: Trajectory | BarrierTrajectory,
    barrier: BarrierTrajectory,
    region: np.ndarray | Callable[[np.ndarray], np.ndarray],
    *,
    tol_t: float | None = None,
) -> CertificationReport:
    """Per-time ordering violations of ``u`` against ``barrier`` on ``region``.

    Supersolutions: ``max(0, u - B)``; subsolutions: ``max(0, B - u)``.
    ``region`` is a node mask on the barrier grid or a predicate of points.
    """
    g = barrier.grid
    if callable(region):
        X, Y = g.coords()
        mask = np.asarray(region(np.stack([X, Y], axis=-1)), dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
    if mask.shape != g.shape:
        raise ValueError("region mask must match the barrier grid")
    if tol_t is None:
        tol_t = traj_u.dt if isinstance(traj_u, Trajectory) else 1e-12
    X, Y = g.coords()
    rows = []
    for bf in barrier.fields:
        try:
            uf = _field_at(traj_u, bf.t, tol_t)
        except ValueError as exc:
            raise ValueError(f"time grids mismatched at t={bf.t}") from exc
        if not mask.any():
            rows.append(CertificationRow(bf.t, 0.0, math.nan, math.nan))
            continue
        u = _values_on(uf, g, mask)
        bv = bf.values[mask]
        if np.any(np.isnan(bv)) or np.any(np.isnan(u)):
            raise ValueError("barrier or solution undefined inside the certification region")
        diff = u - bv if barrier.kind == "supersolution" else bv - u
        diff = np.where(np.isinf(bv), 0.0, diff) if barrier.kind == "supersolution" else diff
        k = int(np.argmax(diff))
        v = max(float(diff[k]), 0.0)
        rows.append(CertificationRow(bf.t, v, float(X[mask][k]), float(Y[mask][k])))
    return CertificationReport(barrier.kind, rows)


def certify_ordering(
    traj_u: Trajectory | BarrierTrajectory,
    barrier: BarrierTrajectory,
    region: np.ndarray | Callable[[np.ndarray], np.ndarray],
    *,
    tol_t: float | None = None,
) -> float:
    """Largest ordering violation over the region and the barrier's times."""
    return certify_report(traj_u, barrier, region, tol_t=tol_t).max_violation


def max_gradient(traj: Trajectory, mask_fn: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Largest central-difference ``|Du|`` over the snapshots (optionally masked)."""
    out = 0.0
    for s in traj.states:
        u = s.u.values
        gy, gx = np.gradient(u, s.grid.h)
        mag = np.hypot(gx, gy)
        if mask_fn is not None:
            X, Y = s.grid.coords()
            mag = mag[np.asarray(mask_fn(np.stack([X, Y], axis=-1)), dtype=bool)]
        if mag.size:
            out = max(out, float(mag.max()))
    return out


# ---------------------------------------------------------------------------
# Bad-ball sandwich
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SandwichResult:
    """Orderings ``U2 <= u <= U1 <= U2(. - sqrt(eps) r e_n)`` on ``B_r(x0)``."""

    N: float
    eps: float
    grad_scale: float
    reports: dict[str, CertificationReport]

    def violation(self, name: str) -> float:
        return self.reports[name].max_violation

    @property
    def max_violation(self) -> float:
        return max(r.max_violation for r in self.reports.values())


def bad_ball_sandwich(
    u0: ScalarField,
    traj: Trajectory,
    x0: Sequence[float],
    e_n: Sequence[float],
    r: float,
    cfg: SolverConfig,
    *,
    R: float | None = None,
    crop=None,
    depth: float | None = None,
) -> SandwichResult:
    """Build ``U1`` (one-phase run) and ``U2`` (its sup-convolution) around a bad ball.

    The ball must be dominated by the positive phase: ``N = u+/u-`` at the
    anchors ``x0 -+ r e_n`` sets ``eps = 1/N``. Rescaled lengths use ``r``
    and rescaled times ``r^2/u+(anchor)``. The dilation is centered at
    ``x0 - depth r e_n``; by default the depth follows :func:`dilation_depth`.
    Negative parts are harmonic in ``B_2r(x0)``
    outside the positive support, with the simulated ``u-`` as data on the
    outer circle.
    """
    x0 = np.asarray(x0, dtype=float)
    en = np.asarray(e_n, dtype=float)
    a_plus = max(float(u0.sample(x0 - r * en)), 0.0)
    a_minus = max(-float(u0.sample(x0 + r * en)), 0.0)
    if not (a_plus > 0 and a_minus > 0):
        raise ValueError("both anchor values must be positive")
    N = a_plus / a_minus
    if N <= 1.0:
        raise ValueError(f"ball is not dominated by the positive phase (N = {N:.3g})")
    eps = 1.0 / N
    t_scale = r * r / a_plus
    t_wait = min(t_scale, r * r / a_minus)
    times = [float(t) for t in traj.times if t <= t_wait * (1 + 1e-9)]
    U1p = one_phase_supersolution(u0, cfg, times, R=R, crop=crop)
    g = U1p.grid
    X, Y = g.coords()
    ball2 = np.hypot(X - x0[0], Y - x0[1]) < 2.0 * r

    def outer(P: np.ndarray, t: float) -> np.ndarray:
        return np.maximum(-traj.sample(P.reshape(-1, 2), t).reshape(P.shape[:-1]), 0.0)

    U1 = attach_negative_part(U1p, x0, 2.0 * r, outer)
    if depth is None:
        center = lambda ct: x0 - dilation_depth(ct, eps) * r * en  # noqa: E731
    else:
        center = x0 - depth * r * en
    U2p = sup_convolution_subsolution(U1p, eps, center=center, length=r, time_scale=t_scale, region=ball2)
    U2 = attach_negative_part(U2p, x0, 2.0 * r, outer).retagged("subsolution")
    shifted = U2.shifted(r * math.sqrt(eps) * en).retagged("supersolution")

    def ball(P: np.ndarray) -> np.ndarray:
        return np.hypot(P[..., 0] - x0[0], P[..., 1] - x0[1]) < r

    reports = {
        "U2<=u": certify_report(traj, U2, ball),
        "u<=U1": certify_report(traj, U1, ball),
        "U1<=U2shift": certify_report(U1, shifted, ball),
    }
    sub = Trajectory([traj.states[traj.index_of(t, 1e-12)] for t in times], traj.dt, traj.h_sim)
    return SandwichResult(N, eps, max_gradient(sub, ball), reports)
