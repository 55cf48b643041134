from __future__ import annotations

import time
from dataclasses import replace

import pytest

from stefanlab.scenarios import STANDARD, simulate

_CACHE: dict = {}


def standard_run(name: str, h: float | None = None, **changes):
    """Simulate a standard scenario once per session (optionally at another ``h``).

    Returns ``(scenario, trajectory, u0, domain)``; the wall time of the
    simulation is kept in ``trajectory.meta["wall"]``.
    """
    scn = STANDARD[name]
    if h is not None:
        changes["h"] = h
    if changes:
        scn = replace(scn, **changes)
    key = (name, tuple(sorted(changes.items())))
    if key not in _CACHE:
        t0 = time.perf_counter()
        traj, u0, dom = simulate(scn)
        traj.meta["wall"] = time.perf_counter() - t0
        _CACHE[key] = (scn, traj, u0, dom)
    return _CACHE[key]


@pytest.fixture(scope="session")
def planar_run():
    return standard_run("planar")


@pytest.fixture(scope="session")
def coarse_circle_run():
    return standard_run("circle", 1.0 / 64)
