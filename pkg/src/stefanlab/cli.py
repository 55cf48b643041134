"""Command line entry point: ``stefanlab {simulate,analyze,certify,oracle,all}``.

Exit codes: 0 when every asserted check passed, 1 when a check failed, 2
for usage or input errors (messages go to standard error).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import analyze, certify, check_complete, write_oracle
from .scenarios import Scenario, build_domain, load_scenario, simulate, write_scenario
from .stefan import Trajectory

log = logging.getLogger("stefanlab")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _scenario(args) -> Scenario:
    if args.scenario is None:
        raise ValueError("--scenario is required for this command")
    scn = load_scenario(args.scenario)
    if args.grid_refine:
        scn = scn.refined(args.grid_refine)
    return scn


def _manifest(args, out: Path) -> Path:
    return Path(args.manifest) if args.manifest else out / "trajectory" / "manifest.txt"


def cmd_simulate(args) -> int:
    scn = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj, _, _ = simulate(scn)
    traj.save(out / "trajectory")
    write_scenario(scn, out / "scenario.cfg")
    print(f"wrote {len(traj)} snapshots to {out / 'trajectory'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    scn = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = Trajectory.load(_manifest(args, out))
    check_complete(traj, scn)
    rep = analyze(traj, scn, build_domain(scn))
    rep.to_csv(out / "report.csv")
    text = rep.summary()
    (out / "summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if rep.all_passed else EXIT_FAIL


def cmd_certify(args) -> int:
    scn = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    traj = Trajectory.load(_manifest(args, out))
    check_complete(traj, scn)
    res = certify(traj, scn, build_domain(scn))
    for name, rep in res.reports.items():
        safe = name.replace("<=", "_le_")
        rep.to_csv(out / f"certify_{safe}.csv")
    text = res.summary()
    (out / "certify_summary.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK if res.all_passed else EXIT_FAIL


def cmd_oracle(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = write_oracle(out / "oracle.csv")
    worst = max(r[3] for r in rows)
    print(f"wrote {len(rows)} rows to {out / 'oracle.csv'}; max residual {worst:.2e}")
    return EXIT_OK if worst <= 1e-10 else EXIT_FAIL


def cmd_all(args) -> int:
    codes = [cmd_simulate(args), cmd_analyze(args), cmd_certify(args), cmd_oracle(args)]
    return max(codes)


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "certify": cmd_certify, "oracle": cmd_oracle, "all": cmd_all}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stefanlab", description="Two-phase Stefan simulations and free-boundary regularity measurements.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--scenario", help="scenario file (INI format)")
    p.add_argument("--out", default="out", help="output directory (default: out)")
    p.add_argument("--manifest", help="trajectory manifest (default: OUT/trajectory/manifest.txt)")
    p.add_argument("--threads", type=int, default=None, help="number of numba threads")
    p.add_argument("--grid-refine", type=int, default=0, help="halve h (and quarter an explicit dt) k times")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None:
            import numba

            if args.threads < 1:
                raise ValueError("--threads must be at least 1")
            numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
        return COMMANDS[args.command](args)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"stefanlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
