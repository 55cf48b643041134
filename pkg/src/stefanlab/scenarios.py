"""Scenario files and the build/simulate steps they drive.

A scenario is a small INI-style file (``key = value`` under ``[section]``
headers). Lists are comma separated; a time list may also be given as
``start:stop:step``. Example::

    [scenario]
    name = circle
    kind = star

    [domain]
    seed = 7
    target_L = 0.0
    r0 = 0.5
    R = 4.0

    [grid]
    h = 0.0078125
    crop = 1.5

    [solver]
    t_end = 0.07
    snapshot_times = 0:0.07:0.005
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .elliptic import build_initial_data, planar_initial_data
from .geometry import Grid, PlanarDomain, ScalarField, StarDomain, build_star_domain
from .stefan import SolverConfig, Trajectory, initial_state, run

log = logging.getLogger(__name__)

KINDS = ("star", "planar", "spike")


class ScenarioError(ValueError):
    pass


def parse_times(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ScenarioError(f"bad time range {text!r}; expected start:stop:step")
        a, b, s = parts
        n = int(math.floor((b - a) / s + 1e-9))
        return [a + k * s for k in range(n + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str = "star"
    # domain
    seed: int = 7
    target_L: float = 0.0
    r0: float = 0.5
    R: float = 4.0
    mean_radius: float | None = None
    n_angles: int = 256
    spike_amplitude: float = 9.0
    spike_angle: float = 0.0
    spike_width: float = 0.3
    # grid
    h: float = 1.0 / 128
    crop: float | None = 1.5
    # solver
    cfl: float = 0.9
    dt: float | None = None
    t_end: float = 0.07
    snapshot_times: tuple[float, ...] = ()
    # analysis
    n_probes: int = 16
    d_ladder: tuple[float, ...] = (0.05, 0.1, 0.2)
    M: float = 10.0
    K1_sweep: tuple[float, ...] = (1.0, 2.0, 4.0, 8.0)
    sigma: float = 0.05
    collar: float = 0.1
    # barriers
    inf_barrier: bool = True
    barrier_r: float = 0.1
    barrier_b: float = 1.25
    C_n: float = 1.0
    sandwich: bool = False
    sandwich_r: float = 0.1
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}; expected one of {KINDS}")
        if not self.h > 0:
            raise ScenarioError("grid spacing must be positive")
        if not self.t_end >= 0:
            raise ScenarioError("t_end must be nonnegative")
        if any(d <= 0 for d in self.d_ladder) or list(self.d_ladder) != sorted(self.d_ladder):
            raise ScenarioError("d_ladder must be positive and increasing")

    def refined(self, k: int) -> "Scenario":
        """Halve ``h`` (and quarter an explicit ``dt``) ``k`` times."""
        if k < 0:
            raise ScenarioError("grid refinement must be nonnegative")
        dt = None if self.dt is None else self.dt / 4**k
        return replace(self, h=self.h / 2**k, dt=dt)

    @property
    def solver_config(self) -> SolverConfig:
        return SolverConfig(dt=self.dt, cfl=self.cfl)

    @property
    def crop_box(self) -> tuple[float, float, float, float] | None:
        if self.crop is None:
            return None
        c = self.crop
        return (-c, c, -c, c)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.read(path, encoding="utf-8")
    kw: dict = {}

    def get(sec: str, key: str, conv, name: str | None = None) -> None:
        if cp.has_option(sec, key):
            raw = cp.get(sec, key)
            try:
                kw[name or key] = conv(raw)
            except ValueError as exc:
                raise ScenarioError(f"{path}: [{sec}] {key} = {raw!r}: {exc}") from exc

    boolean = lambda s: configparser.ConfigParser.BOOLEAN_STATES[s.strip().lower()]  # noqa: E731
    opt_float = lambda s: None if s.strip().lower() in ("", "none") else float(s)  # noqa: E731
    kw["name"] = cp.get("scenario", "name", fallback=path.stem)
    get("scenario", "kind", str.strip)
    for key, conv in (("seed", int), ("target_L", float), ("r0", float), ("R", float), ("mean_radius", opt_float), ("n_angles", int),
                      ("spike_amplitude", float), ("spike_angle", float), ("spike_width", float)):
        get("domain", key, conv)
    get("grid", "h", float)
    get("grid", "crop", opt_float)
    get("solver", "cfl", float)
    get("solver", "dt", opt_float)
    get("solver", "t_end", float)
    get("solver", "snapshot_times", lambda s: tuple(parse_times(s)))
    get("analysis", "n_probes", int)
    get("analysis", "d_ladder", _floats)
    get("analysis", "M", float)
    get("analysis", "K1_sweep", _floats)
    get("analysis", "sigma", float)
    get("analysis", "collar", float)
    get("barriers", "inf_barrier", boolean)
    get("barriers", "r", float, "barrier_r")
    get("barriers", "b", float, "barrier_b")
    get("barriers", "C_n", float)
    get("barriers", "sandwich", boolean)
    get("barriers", "sandwich_r", float)
    try:
        return Scenario(**kw)
    except TypeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# Building and running
# ---------------------------------------------------------------------------


def build_domain(scn: Scenario) -> StarDomain | PlanarDomain:
    if scn.kind == "planar":
        return PlanarDomain((1.0, 0.0), 0.0)
    mean = scn.mean_radius if scn.mean_radius is not None else 2.0 * scn.r0
    return build_star_domain(scn.seed, scn.target_L, scn.r0, scn.n_angles, mean_radius=mean)


def spike_factor(theta: np.ndarray, scn: Scenario) -> np.ndarray:
    dth = np.angle(np.exp(1j * (theta - scn.spike_angle)))
    return 1.0 + scn.spike_amplitude * np.exp(-((dth / scn.spike_width) ** 2))


def build_u0(scn: Scenario, dom: StarDomain | PlanarDomain | None = None) -> tuple[ScalarField, StarDomain | PlanarDomain]:
    """Initial temperature on the full simulation grid."""
    dom = build_domain(scn) if dom is None else dom
    if scn.kind == "planar":
        grid = Grid.covering_box(scn.R, scn.h)
        return planar_initial_data(grid), dom
    grid = Grid.covering_box(scn.R, scn.h)
    u0 = build_initial_data(dom, scn.R, grid, collar=scn.collar)
    if scn.kind == "spike":
        X, Y = grid.coords()
        th = np.arctan2(Y - dom.center[1], X - dom.center[0])
        v = u0.values
        u0 = u0.with_values(np.where(v > 0, v * spike_factor(th, scn), v))
    return u0, dom


def simulate(scn: Scenario, u0: ScalarField | None = None, dom=None) -> tuple[Trajectory, ScalarField, StarDomain | PlanarDomain]:
    if u0 is None:
        u0, dom = build_u0(scn, dom)
    elif dom is None:
        dom = build_domain(scn)
    if scn.kind == "planar":
        state = initial_state(u0, None, pin_rim=True)
    else:
        state = initial_state(u0, scn.R)
    times = list(scn.snapshot_times) if scn.snapshot_times else None
    traj = run(state, scn.solver_config, scn.t_end, times, crop=scn.crop_box)
    traj.meta["scenario"] = scn.name
    return traj, u0, dom


def write_scenario(scn: Scenario, path: str | Path) -> None:
    """Write ``scn`` back as a scenario file (defaults included)."""

    def fl(v) -> str:
        return "none" if v is None else repr(float(v))

    def lst(vs) -> str:
        return ", ".join(repr(float(v)) for v in vs)

    text = f"""[scenario]
name = {scn.name}
kind = {scn.kind}

[domain]
seed = {scn.seed}
target_L = {scn.target_L!r}
r0 = {scn.r0!r}
R = {scn.R!r}
mean_radius = {fl(scn.mean_radius)}
n_angles = {scn.n_angles}
spike_amplitude = {scn.spike_amplitude!r}
spike_angle = {scn.spike_angle!r}
spike_width = {scn.spike_width!r}

[grid]
h = {scn.h!r}
crop = {fl(scn.crop)}

[solver]
cfl = {scn.cfl!r}
dt = {fl(scn.dt)}
t_end = {scn.t_end!r}
snapshot_times = {lst(scn.snapshot_times)}

[analysis]
n_probes = {scn.n_probes}
d_ladder = {lst(scn.d_ladder)}
M = {scn.M!r}
K1_sweep = {lst(scn.K1_sweep)}
sigma = {scn.sigma!r}
collar = {scn.collar!r}

[barriers]
inf_barrier = {str(scn.inf_barrier).lower()}
r = {scn.barrier_r!r}
b = {scn.barrier_b!r}
C_n = {scn.C_n!r}
sandwich = {str(scn.sandwich).lower()}
sandwich_r = {scn.sandwich_r!r}
"""
    Path(path).write_text(text, encoding="utf-8")


STANDARD = {
    "planar": Scenario(name="planar", kind="planar", R=1.0, h=1.0 / 64, crop=None, t_end=0.05,
                       snapshot_times=tuple(parse_times("0:0.05:0.01")), n_probes=5, d_ladder=(0.05, 0.1, 0.2),
                       inf_barrier=False),
    "circle": Scenario(name="circle", kind="star", target_L=0.0, h=1.0 / 128, t_end=0.13,
                       snapshot_times=tuple(parse_times("0:0.13:0.0025"))),
    "star": Scenario(name="star", kind="star", target_L=0.2, h=1.0 / 128, t_end=0.13,
                     snapshot_times=tuple(parse_times("0:0.13:0.0025"))),
    "spike": Scenario(name="spike", kind="spike", target_L=0.0, h=1.0 / 128, t_end=0.0066,
                      snapshot_times=tuple(parse_times("0:0.0066:0.0006")), n_probes=8, d_ladder=(0.05, 0.1),
                      inf_barrier=False, sandwich=True),
}
