"""Grids, sampled fields, star-shaped domains, probes and cones.

Everything in this module is immutable after construction and shared by the
elliptic solver, the enthalpy time stepper and the analysis layer.

Grid convention: node ``(i, j)`` of a :class:`Grid` sits at
``(ox + j*h, oy + i*h)``; arrays are indexed ``values[i, j]`` (row = y).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_LIPSCHITZ_CAP = 0.25


# ---------------------------------------------------------------------------
# Grid and sampled fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Uniform node grid with spacing ``h`` and lower-left node ``(ox, oy)``."""

    h: float
    ox: float
    oy: float
    nx: int
    ny: int

    def __post_init__(self) -> None:
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 2 or self.ny < 1:
            raise ValueError(f"grid needs nx >= 2 and ny >= 1, got {self.nx}x{self.ny}")

    @classmethod
    def covering_box(cls, half_width: float, h: float) -> "Grid":
        """Square grid of nodes on ``[-half_width, half_width]^2``.

        ``2*half_width/h`` must be an integer (up to 1e-9) so that the box
        edges and the origin are grid nodes.
        """
        n_cells = 2.0 * half_width / h
        k = int(round(n_cells))
        if abs(n_cells - k) > 1e-9 * max(1.0, n_cells):
            raise ValueError(f"box half-width {half_width} is not a multiple of h/2 = {h / 2}")
        return cls(h=h, ox=-half_width, oy=-half_width, nx=k + 1, ny=k + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.ox + self.h * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.oy + self.h * np.arange(self.ny)

    @property
    def extent(self) -> tuple[float, float, float, float]:
        """``(xmin, xmax, ymin, ymax)`` of the node set."""
        return (self.ox, self.ox + (self.nx - 1) * self.h, self.oy, self.oy + (self.ny - 1) * self.h)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays ``(X, Y)`` of shape ``(ny, nx)``."""
        return np.meshgrid(self.x, self.y)

    def covers_ball(self, R: float, center: Sequence[float] = (0.0, 0.0)) -> bool:
        xmin, xmax, ymin, ymax = self.extent
        cx, cy = center
        tol = 1e-12 * max(1.0, R)
        return xmin <= cx - R + tol and xmax >= cx + R - tol and ymin <= cy - R + tol and ymax >= cy + R - tol

    def window(self, xmin: float, xmax: float, ymin: float, ymax: float) -> tuple["Grid", tuple[slice, slice]]:
        """Sub-grid of nodes inside the closed box, plus the index slices."""
        j0 = max(0, int(np.floor((xmin - self.ox) / self.h + 1e-9)))
        j1 = min(self.nx - 1, int(np.ceil((xmax - self.ox) / self.h - 1e-9)))
        i0 = max(0, int(np.floor((ymin - self.oy) / self.h + 1e-9)))
        i1 = min(self.ny - 1, int(np.ceil((ymax - self.oy) / self.h - 1e-9)))
        if j1 <= j0 or i1 < i0:
            raise ValueError("requested window does not intersect the grid")
        sub = Grid(h=self.h, ox=self.ox + j0 * self.h, oy=self.oy + i0 * self.h, nx=j1 - j0 + 1, ny=i1 - i0 + 1)
        return sub, (slice(i0, i1 + 1), slice(j0, j1 + 1))

    def refined(self, k: int = 1) -> "Grid":
        """Same extent with ``h`` halved ``k`` times."""
        f = 2**k
        return Grid(h=self.h / f, ox=self.ox, oy=self.oy, nx=(self.nx - 1) * f + 1, ny=(self.ny - 1) * f + 1)


def _as_points(points: np.ndarray | Sequence[float]) -> tuple[np.ndarray, tuple[int, ...]]:
    p = np.asarray(points, dtype=float)
    if p.shape[-1] != 2:
        raise ValueError(f"points must have a trailing dimension of 2, got shape {p.shape}")
    return p.reshape(-1, 2), p.shape[:-1]


def bilinear_sample(grid: Grid, values: np.ndarray, points: np.ndarray, *, strict: bool = True) -> np.ndarray:
    """Bilinear interpolation of node ``values`` at ``points`` (shape ``(..., 2)``).

    Points outside the node box raise ``ValueError`` when ``strict``; with
    ``strict=False`` they are clamped onto the box.
    """
    p, lead = _as_points(points)
    fx = (p[:, 0] - grid.ox) / grid.h
    fy = (p[:, 1] - grid.oy) / grid.h
    if strict:
        eps = 1e-9
        bad = (fx < -eps) | (fx > grid.nx - 1 + eps) | (fy < -eps) | (fy > grid.ny - 1 + eps)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ValueError(f"sample point {tuple(p[k])} lies outside the grid extent {grid.extent}")
    fx = np.clip(fx, 0.0, grid.nx - 1)
    fy = np.clip(fy, 0.0, grid.ny - 1)
    j = np.minimum(np.floor(fx).astype(np.int64), grid.nx - 2)
    if grid.ny > 1:
        i = np.minimum(np.floor(fy).astype(np.int64), grid.ny - 2)
    else:
        i = np.zeros_like(j)
    wx = fx - j
    wy = fy - i if grid.ny > 1 else np.zeros_like(fx)
    v = values
    i1 = np.minimum(i + 1, grid.ny - 1)
    out = (
        (1 - wy) * ((1 - wx) * v[i, j] + wx * v[i, j + 1])
        + wy * ((1 - wx) * v[i1, j] + wx * v[i1, j + 1])
    )
    return out.reshape(lead)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Node values of a function on a :class:`Grid` at time ``t``."""

    grid: Grid
    values: np.ndarray
    t: float = 0.0

    def __post_init__(self) -> None:
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    def sample(self, points: np.ndarray | Sequence[float], *, strict: bool = True) -> np.ndarray:
        return bilinear_sample(self.grid, self.values, np.asarray(points, dtype=float), strict=strict)

    def with_values(self, values: np.ndarray, t: float | None = None) -> "ScalarField":
        return ScalarField(self.grid, values, self.t if t is None else t)

    def crop(self, xmin: float, xmax: float, ymin: float, ymax: float) -> "ScalarField":
        sub, sl = self.grid.window(xmin, xmax, ymin, ymax)
        return ScalarField(sub, np.ascontiguousarray(self.values[sl]), self.t)

    # -- text snapshot format ---------------------------------------------
    def to_text(self) -> str:
        g = self.grid
        lines = [f"{g.nx} {g.ny} {g.h!r} {g.ox!r} {g.oy!r} {self.t!r}"]
        for row in self.values:
            lines.append(" ".join(format(float(v), ".17g") for v in row))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        g = self.grid
        with open(path, "w", encoding="ascii") as fh:
            fh.write(f"{g.nx} {g.ny} {g.h!r} {g.ox!r} {g.oy!r} {self.t!r}\n")
            np.savetxt(fh, self.values, fmt="%.17g", delimiter=" ")

    @classmethod
    def load(cls, path: str | Path) -> "ScalarField":
        with open(path, encoding="ascii") as fh:
            header = fh.readline().split()
            if len(header) != 6:
                raise ValueError(f"{path}: snapshot header must be 'nx ny h ox oy t'")
            nx, ny = int(header[0]), int(header[1])
            h, ox, oy, t = (float(v) for v in header[2:])
            data = np.loadtxt(fh, dtype=float, ndmin=2)
        if data.shape != (ny, nx):
            raise ValueError(f"{path}: expected {ny}x{nx} values, found {data.shape}")
        return cls(Grid(h=h, ox=ox, oy=oy, nx=nx, ny=ny), data, t)


# ---------------------------------------------------------------------------
# Domains
# ---------------------------------------------------------------------------


def _angle(p: np.ndarray) -> np.ndarray:
    return np.mod(np.arctan2(p[..., 1], p[..., 0]), 2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class StarDomain:
    """Region ``{|x - c| < rho(theta)}`` with a piecewise-linear radial profile.

    ``profile[k]`` is the radius at angle ``2*pi*k/n``; the profile is
    interpolated linearly in the angle and wraps around.
    """

    center: tuple[float, float]
    r0: float
    profile: np.ndarray
    lipschitz_L: float = field(default=float("nan"))

    def __post_init__(self) -> None:
        prof = np.asarray(self.profile, dtype=float)
        if prof.ndim != 1 or prof.size < 3:
            raise ValueError("profile must be a 1D array with at least 3 radii")
        if not self.r0 > 0:
            raise ValueError(f"r0 must be positive, got {self.r0}")
        if np.any(prof < self.r0):
            raise ValueError("profile dips below r0: the domain must contain B_r0(center)")
        object.__setattr__(self, "profile", prof)
        if np.isnan(self.lipschitz_L):
            object.__setattr__(self, "lipschitz_L", profile_lipschitz(prof))

    @property
    def n_angles(self) -> int:
        return int(self.profile.size)

    @property
    def angles(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_angles) / self.n_angles

    def radius(self, theta: np.ndarray | float) -> np.ndarray:
        n = self.n_angles
        s = np.mod(np.asarray(theta, dtype=float), 2.0 * np.pi) * (n / (2.0 * np.pi))
        k = np.floor(s).astype(np.int64) % n
        w = s - np.floor(s)
        return (1.0 - w) * self.profile[k] + w * self.profile[(k + 1) % n]

    def level(self, points: np.ndarray) -> np.ndarray:
        """``|x - c| - rho(angle)``: negative inside, zero on the boundary."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        return np.hypot(p[..., 0], p[..., 1]) - self.radius(_angle(p))

    def contains(self, points: np.ndarray | Sequence[float]) -> np.ndarray:
        return self.level(np.asarray(points, dtype=float)) < 0.0

    def normal(self, points: np.ndarray) -> np.ndarray:
        """Radial unit vector ``e_n = (x - c)/|x - c|`` used as the probe axis."""
        p = np.asarray(points, dtype=float) - np.asarray(self.center)
        r = np.hypot(p[..., 0], p[..., 1])[..., None]
        if np.any(r == 0):
            raise ValueError("radial direction undefined at the center")
        return p / r

    def boundary_point(self, theta: np.ndarray | float) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        rho = self.radius(th)
        return np.stack([self.center[0] + rho * np.cos(th), self.center[1] + rho * np.sin(th)], axis=-1)

    def boundary_points(self, spacing: float, near: Sequence[float] | None = None, radius: float | None = None) -> np.ndarray:
        """Boundary samples at arc spacing at most ``spacing``.

        With ``near``/``radius`` only samples inside ``B_radius(near)`` are kept.
        """
        rmax = float(self.profile.max())
        n = max(16, int(np.ceil(2.0 * np.pi * rmax * (1.0 + self.lipschitz_L) / spacing)))
        pts = self.boundary_point(2.0 * np.pi * np.arange(n) / n)
        if near is not None:
            keep = np.hypot(pts[:, 0] - near[0], pts[:, 1] - near[1]) < radius
            pts = pts[keep]
        return pts

    def star_margin(self) -> float:
        """``min rho*cos(psi) - r0`` over profile segments (``tan psi = rho'/rho``).

        Positive margin means every tangent line of the boundary stays outside
        ``B_r0(center)``, which is the segment condition for star-shapedness
        with respect to that ball.
        """
        rho = self.profile
        nxt = np.roll(rho, -1)
        dth = 2.0 * np.pi / self.n_angles
        slope = np.abs(nxt - rho) / dth
        rmin = np.minimum(rho, nxt)
        return float(np.min(rmin / np.sqrt(1.0 + (slope / rmin) ** 2)) - self.r0)

    def to_text(self) -> str:
        lines = [
            f"center {format(self.center[0], '.17g')} {format(self.center[1], '.17g')}",
            f"r0 {format(self.r0, '.17g')}",
            f"n_angles {self.n_angles}",
        ]
        lines += [format(float(v), ".17g") for v in self.profile]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "StarDomain":
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        try:
            c = lines[0].split()
            r = lines[1].split()
            n = lines[2].split()
            if c[0] != "center" or r[0] != "r0" or n[0] != "n_angles":
                raise ValueError
            k = int(n[1])
            prof = np.array([float(v) for v in lines[3 : 3 + k]])
        except (IndexError, ValueError) as exc:
            raise ValueError("malformed StarDomain text block") from exc
        if prof.size != k:
            raise ValueError(f"StarDomain block declares {k} radii but has {prof.size}")
        return cls(center=(float(c[1]), float(c[2])), r0=float(r[1]), profile=prof)


@dataclass(frozen=True)
class PlanarDomain:
    """Half-plane ``{x . normal < offset}`` (positive phase below the line).

    Used for the symmetric planar scenario; it offers the same probe
    interface as :class:`StarDomain` (``level``, ``contains``, ``normal``,
    ``boundary_points``).
    """

    normal_vec: tuple[float, float] = (1.0, 0.0)
    offset: float = 0.0
    lipschitz_L: float = 0.0

    def level(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p[..., 0] * self.normal_vec[0] + p[..., 1] * self.normal_vec[1] - self.offset

    def contains(self, points: np.ndarray) -> np.ndarray:
        return self.level(points) < 0.0

    def normal(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return np.broadcast_to(np.asarray(self.normal_vec, dtype=float), p.shape).copy()

    def boundary_points(self, spacing: float, near: Sequence[float] | None = None, radius: float | None = None) -> np.ndarray:
        if near is None or radius is None:
            raise ValueError("planar boundary sampling needs a center and radius")
        nv = np.asarray(self.normal_vec, dtype=float)
        tang = np.array([-nv[1], nv[0]])
        base = np.asarray(near, dtype=float)
        base = base - (base @ nv - self.offset) * nv
        m = int(np.ceil(radius / spacing))
        s = spacing * np.arange(-m, m + 1)
        pts = base + s[:, None] * tang
        keep = np.hypot(pts[:, 0] - near[0], pts[:, 1] - near[1]) < radius
        return pts[keep]


def profile_lipschitz(profile: np.ndarray) -> float:
    """Largest local graph slope of a piecewise-linear polar profile.

    On each angular segment the boundary, viewed as a graph over the tangent
    line with axis ``e_n = x/|x|``, has slope ``|rho'|/rho``; the segment's
    worst case uses its smaller endpoint radius.
    """
    rho = np.asarray(profile, dtype=float)
    nxt = np.roll(rho, -1)
    dth = 2.0 * np.pi / rho.size
    return float(np.max(np.abs(nxt - rho) / dth / np.minimum(rho, nxt)))


def contains(dom: StarDomain | PlanarDomain, x: np.ndarray | Sequence[float]) -> np.ndarray | bool:
    """Open-set membership: boundary points are outside."""
    res = dom.contains(np.asarray(x, dtype=float))
    return bool(res) if np.ndim(res) == 0 else res


def build_star_domain(
    seed: int,
    target_L: float,
    r0: float,
    n_angles: int = 256,
    *,
    mean_radius: float | None = None,
    modes: tuple[int, int] = (2, 6),
    L_cap: float = DEFAULT_LIPSCHITZ_CAP,
) -> StarDomain:
    """Band-limited random radial perturbation of a circle with Lipschitz ``target_L``.

    The profile is ``rho = mean_radius * (1 + A g(theta))`` where ``g`` is a
    seeded random trigonometric polynomial with modes ``modes[0]..modes[1]``
    normalized to ``max|g| = 1``; the amplitude ``A`` is tuned by bisection
    so that :func:`profile_lipschitz` hits ``target_L``.
    """
    if not (0.0 <= target_L < 1.0):
        raise ValueError(f"target_L must lie in [0, 1), got {target_L}")
    if not r0 > 0:
        raise ValueError(f"r0 must be positive, got {r0}")
    if target_L >= L_cap:
        raise ValueError(f"target_L={target_L} exceeds the Lipschitz cap L_n={L_cap}")
    rbar = 2.0 * r0 if mean_radius is None else float(mean_radius)
    if rbar <= r0:
        raise ValueError("mean radius must exceed r0")
    if target_L == 0.0:
        return StarDomain(center=(0.0, 0.0), r0=r0, profile=np.full(n_angles, rbar), lipschitz_L=0.0)

    m_lo, m_hi = modes
    if n_angles < 8 * m_hi:
        raise ValueError(
            f"target_L unachievable with n_angles={n_angles}: need at least {8 * m_hi} angles "
            f"to resolve modes up to {m_hi}"
        )
    rng = np.random.default_rng(seed)
    ms = np.arange(m_lo, m_hi + 1)
    a = rng.standard_normal(ms.size) / ms
    b = rng.standard_normal(ms.size) / ms

    def g_of(theta: np.ndarray) -> np.ndarray:
        return (a[:, None] * np.cos(ms[:, None] * theta) + b[:, None] * np.sin(ms[:, None] * theta)).sum(axis=0)

    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    fine = 2.0 * np.pi * np.arange(16 * n_angles) / (16 * n_angles)
    scale = np.max(np.abs(g_of(fine)))
    g = g_of(theta) / scale

    def lip(A: float) -> float:
        return profile_lipschitz(rbar * (1.0 + A * g))

    A_hi = min(0.999 * (1.0 - r0 / rbar), 0.999)
    if lip(A_hi) < target_L:
        raise ValueError(
            f"target_L={target_L} unachievable: largest admissible amplitude keeping rho >= r0 gives L={lip(A_hi):.4f}"
        )
    lo, hi = 0.0, A_hi
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if lip(mid) < target_L:
            lo = mid
        else:
            hi = mid
    A = 0.5 * (lo + hi)
    prof = rbar * (1.0 + A * g)
    # The sampled profile must represent the underlying smooth curve: compare
    # its slope with the continuous one.
    g_fine = g_of(fine) / scale
    dg = np.gradient(g_fine, fine[1] - fine[0])
    L_cont = float(np.max(np.abs(rbar * A * dg) / (rbar * (1.0 + A * g_fine))))
    if abs(L_cont - target_L) > 0.1 * target_L:
        raise ValueError(
            f"target_L unachievable with n_angles={n_angles}: sampled slope {target_L:.4f} "
            f"vs continuous slope {L_cont:.4f}"
        )
    dom = StarDomain(center=(0.0, 0.0), r0=r0, profile=prof)
    if dom.star_margin() <= 0.0:
        raise ValueError("generated profile is not star-shaped with respect to B_r0; lower target_L or r0")
    return dom


def star_segments_ok(dom: StarDomain, n_samples: int, seed: int = 0, n_along: int = 32) -> bool:
    """Monte-Carlo check that segments ``[y, x)`` stay inside ``dom``.

    ``y`` is uniform in ``B_r0(center)`` and ``x`` uniform on the boundary.
    """
    rng = np.random.default_rng(seed)
    rad = dom.r0 * np.sqrt(rng.random(n_samples)) * (1.0 - 1e-12)
    ang = 2.0 * np.pi * rng.random(n_samples)
    y = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=-1) + np.asarray(dom.center)
    x = dom.boundary_point(2.0 * np.pi * rng.random(n_samples))
    lam = np.linspace(0.0, 1.0 - 1e-6, n_along)
    pts = y[:, None, :] + lam[None, :, None] * (x - y)[:, None, :]
    return bool(np.all(dom.contains(pts)))


# ---------------------------------------------------------------------------
# Probes and cones
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProbeSet:
    """Boundary probe points with axes ``e_n`` and a shared scale ladder."""

    points: np.ndarray
    normals: np.ndarray
    scales: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        nrm = np.asarray(self.normals, dtype=float).reshape(-1, 2)
        sc = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if pts.shape != nrm.shape:
            raise ValueError("points and normals must pair up")
        if not np.allclose(np.hypot(nrm[:, 0], nrm[:, 1]), 1.0, atol=1e-12):
            raise ValueError("probe axes must be unit vectors")
        if np.any(sc <= 0) or np.any(np.diff(sc) <= 0):
            raise ValueError("scale ladder must be positive and strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "scales", sc)

    def __len__(self) -> int:
        return int(self.points.shape[0])


def build_probes(dom: StarDomain | PlanarDomain, n_probes: int, scales: Sequence[float], *, phase: float = 0.0) -> ProbeSet:
    """Probes at evenly spaced angles on a star domain's boundary."""
    if isinstance(dom, PlanarDomain):
        nv = np.asarray(dom.normal_vec, dtype=float)
        tang = np.array([-nv[1], nv[0]])
        s = np.linspace(-0.25, 0.25, n_probes) if n_probes > 1 else np.zeros(1)
        pts = dom.offset * nv + s[:, None] * tang
        return ProbeSet(pts, np.tile(nv, (n_probes, 1)), np.asarray(scales, dtype=float))
    th = phase + 2.0 * np.pi * np.arange(n_probes) / n_probes
    pts = dom.boundary_point(th)
    return ProbeSet(pts, dom.normal(pts), np.asarray(scales, dtype=float))


@dataclass(frozen=True)
class Cone:
    """Circular cone of directions ``{tau : angle(tau, axis) <= half_aperture}``."""

    axis: tuple[float, float]
    half_aperture: float

    def __post_init__(self) -> None:
        if not (0.0 < self.half_aperture < 0.5 * np.pi):
            raise ValueError(f"half_aperture must lie in (0, pi/2), got {self.half_aperture}")
        n = float(np.hypot(*self.axis))
        if n == 0:
            raise ValueError("cone axis must be nonzero")
        object.__setattr__(self, "axis", (self.axis[0] / n, self.axis[1] / n))

    def directions(self, lattice: int = 64) -> np.ndarray:
        """Unit directions on the global angular lattice ``pi/lattice`` inside the cone.

        Using a fixed lattice makes the sample set of a narrower coaxial cone a
        subset of the wider cone's sample set.
        """
        step = np.pi / lattice
        m = int(np.floor(self.half_aperture / step + 1e-12))
        phi0 = np.arctan2(self.axis[1], self.axis[0])
        phi = phi0 + step * np.arange(-m, m + 1)
        return np.stack([np.cos(phi), np.sin(phi)], axis=-1)


def cone_monotonicity_defect(
    f: ScalarField,
    cone: Cone,
    step_set: Sequence[float],
    region: np.ndarray,
    *,
    lattice: int = 64,
) -> float:
    """``max(0, f(p) - f(p + lam*tau))`` over region nodes, cone directions and steps.

    Zero means ``f`` is nondecreasing along every sampled cone direction at
    the sampled step lengths. Shifted points leaving the grid are skipped.
    """
    mask = np.asarray(region, dtype=bool)
    if mask.shape != f.grid.shape:
        raise ValueError("region mask must match the field's grid")
    if not mask.any():
        raise ValueError("region is empty")
    steps = np.asarray(step_set, dtype=float)
    if np.any(steps < f.grid.h * (1 - 1e-12)):
        raise ValueError("monotonicity steps must be at least the grid spacing")
    X, Y = f.grid.coords()
    p = np.stack([X[mask], Y[mask]], axis=-1)
    fp = f.values[mask]
    xmin, xmax, ymin, ymax = f.grid.extent
    worst = 0.0
    for tau in cone.directions(lattice):
        for lam in steps:
            q = p + lam * tau
            ok = (q[:, 0] >= xmin) & (q[:, 0] <= xmax) & (q[:, 1] >= ymin) & (q[:, 1] <= ymax)
            if not ok.any():
                continue
            drop = fp[ok] - f.sample(q[ok])
            worst = max(worst, float(drop.max(initial=0.0)))
    return worst


def field_from_function(grid: Grid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray], t: float = 0.0) -> ScalarField:
    X, Y = grid.coords()
    return ScalarField(grid, np.asarray(fn(X, Y), dtype=float), t)
