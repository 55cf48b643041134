"""Analyze, certify and oracle steps on a scenario's trajectory."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from .barriers import (
    CertificationReport,
    annulus_omega,
    bad_ball_sandwich,
    certify_report,
    inf_convolution_supersolution,
    max_gradient,
    supersolution_audit,
)
from .elliptic import growth_exponents
from .geometry import PlanarDomain, ProbeSet, ScalarField, StarDomain, build_probes
from .scenarios import Scenario, build_u0
from .stefan import Trajectory, neumann_lambda, neumann_residual

log = logging.getLogger(__name__)

HARNACK_MAX = 10.0
RECIPROCAL_MAX = 4.0
DIST_FRACTION = 0.9
GRAD_BAND = (1.0 / 20.0, 20.0)
CERT_FACTOR = 5.0


def expected_times(scn: Scenario) -> list[float]:
    """Snapshot times a run of ``scn`` stores (same rounding as :func:`stefan.run`)."""
    dt = scn.solver_config.time_step(scn.h)
    n_end = int(round(scn.t_end / dt))
    wanted = sorted({int(round(t / dt)) for t in scn.snapshot_times if 0 <= t <= scn.t_end + 0.5 * dt})
    wanted = [n for n in wanted if 0 < n <= n_end]
    if n_end > 0 and (not wanted or wanted[-1] != n_end):
        wanted.append(n_end)
    return [0.0] + [n * dt for n in wanted]


def check_complete(traj: Trajectory, scn: Scenario) -> None:
    want = expected_times(scn)
    have = traj.times
    if have.size != len(want) or not np.allclose(have, want, rtol=0, atol=0.5 * scn.solver_config.time_step(scn.h)):
        raise ValueError(f"trajectory has {have.size} snapshots, scenario expects {len(want)}: manifest incomplete or from another scenario")


def growth_probes(probes: ProbeSet, h: float, collar: float) -> ProbeSet:
    lo = max(4.0 * h, collar / 8.0)
    return ProbeSet(probes.points, probes.normals, np.geomspace(lo, collar, 6))


# ---------------------------------------------------------------------------
# Analyze
# ---------------------------------------------------------------------------


def analyze(traj: Trajectory, scn: Scenario, dom: StarDomain | PlanarDomain) -> an.RegularityReport:
    """Per (probe, d, t) measurements and the asserted checks."""
    h = traj.h
    u0 = traj.states[0].u
    probes = build_probes(dom, scn.n_probes, scn.d_ladder)
    growth = growth_exponents(u0, dom, growth_probes(probes, h, scn.collar), collar=scn.collar)
    fits = an.distance_law_fit(traj, probes, growth)
    rep = an.RegularityReport()
    recip = 0.0
    good_max = 0.0
    recip_const = 0.0
    K0 = 0.0
    K0_tol = math.inf
    K_all: list[float] = []
    C1 = 0.0
    grad_lo, grad_hi = math.inf, 0.0
    band_flags = 0
    bad_C: dict[tuple[int, float], float] = {}
    K1s: list[float] = []
    ts = traj.times
    for i, (x0, en) in enumerate(zip(probes.points, probes.normals)):
        for d in scn.d_ladder:
            pr = an.make_probe(u0, x0, en, d)
            tw = an.waiting_time(pr)
            if not an.in_time_band(pr):
                band_flags += 1
            fr = an.flux_ratios(pr)
            if not fr.one_phase:
                recip = max(recip, abs(fr.R_plus * fr.R_minus - 1.0))
            C0 = an.probe_C0(pr)
            is_bad = fr.one_phase or fr.R_plus >= scn.M or fr.R_minus >= scn.M
            hs = an.harnack_ratios(traj, pr)
            C1 = max(C1, hs.C1_hat)
            Kser: dict[float, float] = {}
            if d < 1:
                dec = an.decompose(u0, dom, x0, d, scn.M)
                good_max = max(good_max, dec.good_region_max)
                recip_const = max(recip_const, dec.reciprocal_constant)
                try:
                    Kser = dict(an.condition_A_series(traj, dec, dom))
                except ValueError:
                    Kser = {}
                if Kser:
                    K_all.append(max(Kser.values()))
                    if 0.0 in Kser:
                        K0 = max(K0, Kser[0.0])
                        K0_tol = min(K0_tol, 4.0 * h / d**1.25)
                    k1 = least_K1(traj, dec, dom, scn.K1_sweep)
                    if k1 is not None:
                        K1s.append(k1)
            if is_bad and not fr.one_phase:
                try:
                    bb = an.bad_ball_gradient_check(traj, x0, en, d, scn.M)
                    c_grad = bb.C_hat
                    bad_C[(i, d)] = c_grad
                except ValueError:
                    c_grad = math.nan
            elif not is_bad:
                try:
                    lo, hi = an.gradient_comparability_check(traj, pr, scn.M)
                    grad_lo, grad_hi = min(grad_lo, lo), max(grad_hi, hi)
                    c_grad = hi
                except ValueError:
                    c_grad = math.nan
            else:
                c_grad = math.nan
            for t in ts:
                k = np.nonzero(hs.times == t)[0]
                rep.rows.append(
                    {
                        "x0x": x0[0], "x0y": x0[1], "d": d, "t": t, "t_wait": tw,
                        "Rplus": fr.R_plus, "Rminus": fr.R_minus, "C0": C0, "is_bad": bool(is_bad),
                        "harnack_fwd": hs.forward[k[0]] if k.size else math.nan,
                        "harnack_bwd": hs.backward[k[0]] if k.size else math.nan,
                        "K_cond_A": Kser.get(float(t), math.nan),
                        "p_hat": fits[i].p_hat, "C_grad": c_grad,
                    }
                )
    rep.add_check("flux ratio reciprocity", recip <= 1e-15, f"max |R+ R- - 1| = {recip:.2e}")
    rep.add_check("good-region bound at t=0", good_max <= 1.0, f"max ratio/(M C0) on Gamma_0 cap Sigma_0 = {good_max:.4f}")
    rep.add_check("reciprocal bound constant", recip_const <= RECIPROCAL_MAX, f"measured constant = {recip_const:.4f} (limit {RECIPROCAL_MAX})")
    if K_all:
        rep.add_check("condition (A) finite", all(math.isfinite(k) for k in K_all), f"max K = {max(K_all):.4f}")
        rep.add_check("condition (A) at t=0", K0 <= 1.0 + K0_tol, f"K(0) = {K0:.4f}, tolerance {K0_tol:.3f}")
    rep.add_check("Harnack envelope", C1 <= HARNACK_MAX, f"C1_hat = {C1:.3f} (limit {HARNACK_MAX})")
    concl = [f for f in fits if not f.inconclusive]
    if concl:
        frac = sum(f.passed for f in concl) / len(concl)
        ps = [f.p_hat for f in concl]
        rep.add_check(
            "distance-law exponent",
            frac >= DIST_FRACTION,
            f"{frac:.0%} of {len(concl)} probes in [{concl[0].band[0]:.3f}, {concl[0].band[1]:.3f}], p_hat range [{min(ps):.3f}, {max(ps):.3f}]",
        )
    else:
        rep.notes.append("distance law: inconclusive (no probe front moved 4h)")
    if K1s:
        worst = max(K1s)
        rep.add_check(
            "Lipschitz in time", math.isfinite(worst), f"least passing K1 over {len(K1s)} balls: max {worst:g} (sweep {list(scn.K1_sweep)})"
        )
    if grad_hi > 0:
        ok = GRAD_BAND[0] <= grad_lo and grad_hi <= GRAD_BAND[1]
        rep.add_check("gradient comparability", ok, f"band [{grad_lo:.3f}, {grad_hi:.3f}]")
    rep.notes.append(f"growth exponents alpha_hat={growth.alpha_hat:.4f} beta_hat={growth.beta_hat:.4f}")
    rep.notes.append(f"waiting times outside [d^(7/6), d^(5/6)]: {band_flags}")
    if bad_C:
        rep.notes.append(f"bad-ball C_hat max = {max(bad_C.values()):.3f}")
    rep.metrics.update(
        {
            "reciprocity": recip, "good_region": good_max, "reciprocal": recip_const, "K_max": max(K_all, default=math.nan),
            "K0": K0, "C1_hat": C1, "grad_band": (grad_lo, grad_hi), "bad_C": bad_C, "K1": K1s,
            "fits": fits, "growth": growth, "band_flags": band_flags,
        }
    )
    return rep


def least_K1(traj: Trajectory, dec: an.DecompositionReport, dom, sweep) -> float | None:
    """Least passing ``K1`` of the sweep; ``inf`` if none passes, None without samples."""
    for K1 in sorted(sweep):
        try:
            res = an.time_lipschitz_check(traj, dec, dom, K1)
        except ValueError:
            continue
        if not res.samples:
            return None
        if res.passed:
            return float(K1)
    return math.inf


# ---------------------------------------------------------------------------
# Certify
# ---------------------------------------------------------------------------


@dataclass
class CertifyResult:
    reports: dict[str, CertificationReport] = field(default_factory=dict)
    tolerances: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> dict[str, bool]:
        return {k: r.max_violation <= self.tolerances[k] for k, r in self.reports.items()}

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def summary(self) -> str:
        lines = []
        for k, r in self.reports.items():
            ok = r.max_violation <= self.tolerances[k]
            lines.append(f"{'PASS' if ok else 'FAIL'} {k}: max violation {r.max_violation:.3e}, tolerance {self.tolerances[k]:.3e}")
        lines += [f"INFO {n}" for n in self.notes]
        lines.append(f"overall: {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def certify_inf_convolution(traj: Trajectory, dom: StarDomain, r: float, b: float, C_n: float) -> tuple[CertificationReport, float, dict]:
    """``u <= Phi`` outside ``(1 + r^b)D`` over ``[0, r^2]``; returns (report, tolerance, audit)."""
    c = np.asarray(dom.center, dtype=float)
    omega = annulus_omega(dom, r, traj.grid, b=b, C_n=C_n)
    times = [float(t) for t in traj.times if t <= r * r * (1 + 1e-12)]
    phi = inf_convolution_supersolution(omega, r, b, 0.0, times=times)

    def region(P: np.ndarray) -> np.ndarray:
        return dom.level(c + (P - c) / (1.0 + r**b)) > 0

    def inner_rim(P: np.ndarray) -> np.ndarray:
        return dom.level(c + (P - c) / (1.0 + 2.0 * r**b)) <= 0

    rep = certify_report(traj, phi, region)
    sub = Trajectory([traj.states[traj.index_of(t, 1e-12)] for t in times], traj.dt, traj.h_sim)
    tol = CERT_FACTOR * traj.h * max_gradient(sub, region)
    return rep, tol, supersolution_audit(phi, exclude=inner_rim)


def certify(traj: Trajectory, scn: Scenario, dom: StarDomain | PlanarDomain, u0_full: ScalarField | None = None) -> CertifyResult:
    res = CertifyResult()
    if scn.inf_barrier and isinstance(dom, StarDomain):
        rep, tol, audit = certify_inf_convolution(traj, dom, scn.barrier_r, scn.barrier_b, scn.C_n)
        res.reports["u<=Phi"] = rep
        res.tolerances["u<=Phi"] = tol
        res.notes.append(
            f"inf-convolution audit: speed {audit['speed']:.4f}, max |D Phi| {audit['gradient']:.4f}, margin {audit['margin']:.4f}"
        )
    if scn.sandwich and isinstance(dom, StarDomain):
        if u0_full is None:
            u0_full, _ = build_u0(scn, dom)
        x0 = dom.boundary_point(scn.spike_angle)
        en = dom.normal(x0[None, :])[0]
        sw = bad_ball_sandwich(u0_full, traj, x0, en, scn.sandwich_r, scn.solver_config, R=scn.R, crop=scn.crop_box)
        tol = CERT_FACTOR * traj.h * sw.grad_scale
        for k, r in sw.reports.items():
            res.reports[k] = r
            res.tolerances[k] = tol
        res.notes.append(f"sandwich: N = {sw.N:.3f}, eps = {sw.eps:.4f}")
    return res


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

ORACLE_SUPERHEATS = (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
ORACLE_SUBCOOLS = (0.0, 0.5, 1.0)


def oracle_table() -> list[tuple[float, float, float, float]]:
    """Rows ``(superheat, subcool, lambda, residual)`` of the Neumann front condition."""
    rows = []
    for sc in ORACLE_SUBCOOLS:
        for sh in ORACLE_SUPERHEATS:
            lam = neumann_lambda(sh, sc)
            rows.append((sh, sc, lam, abs(neumann_residual(lam, sh, sc))))
    return rows


def write_oracle(path: str | Path) -> list[tuple[float, float, float, float]]:
    rows = oracle_table()
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["superheat", "subcool", "lambda", "residual"])
        for r in rows:
            w.writerow([repr(v) for v in r])
    return rows
