"""``permflow`` command line: run, sweep, verify.

Exit codes: 0 success, 2 configuration or compatibility error, 3 solver
abort, 4 acceptance violation.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
import time
from pathlib import Path

from ..evolution import SolverAbort
from ..geometry import CompatibilityError
from . import io
from .config import ConfigError, load_config, shipped_experiments
from .runner import run_single, sweep
from .verify import ITEMS, run_items

EXIT_OK, EXIT_CONFIG, EXIT_ABORT, EXIT_ACCEPT = 0, 2, 3, 4


def _resolve_config(value: str) -> Path:
    """Path to a YAML file, or the name of a shipped experiment."""
    p = Path(value)
    if p.exists() or p.suffix:
        return p
    shipped = shipped_experiments()
    if value in shipped:
        return shipped[value]
    return p


def _grid(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)[xX](\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"grid must look like 128x256, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="permflow", description="Annulus flow with permeable walls: runs, viscosity sweeps, oracles.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one viscosity of an experiment")
    r.add_argument("--config", required=True, help="YAML path or shipped experiment name")
    r.add_argument("--out", default="out", help="output directory")
    r.add_argument("--nu", type=float, default=None, help="viscosity (default: smallest in the config)")
    r.add_argument("--list", action="store_true", help="list shipped experiments and exit")

    s = sub.add_parser("sweep", help="run every viscosity of an experiment and compare")
    s.add_argument("--config", required=True, help="YAML path or shipped experiment name")
    s.add_argument("--out", default="out", help="output directory")
    s.add_argument("--parallel", type=int, default=1, help="concurrent sweep members")

    v = sub.add_parser("verify", help="built-in oracle suite")
    v.add_argument("--grid", type=_grid, default=(128, 256), help="finest grid RxT (default 128x256)")
    v.add_argument("--list", action="store_true", help="print item names without running")
    v.add_argument("--out", default=None, help="optional directory for report.json")
    return ap


def _summary(report: dict) -> None:
    final = report.get("final", {})
    keys = [k for k in ("t", "l2", "l4", "l8", "linf", "lambda_1", "energy", "nu_grad_omega") if k in final]
    print(f"{report['experiment']}  nu={report['nu']:g}  steps={report['steps']}")
    for k in keys:
        print(f"  {k:14s} {final[k]: .6e}")
    print(f"  {'l2 drift':14s} {report['l2_drift']: .3e}")


def cmd_run(args) -> int:
    if args.list:
        for name in shipped_experiments():
            print(name)
        return EXIT_OK
    cfg = load_config(_resolve_config(args.config))
    started = time.time()
    res = run_single(cfg, Path(args.out), args.nu)
    io.write_meta(args.out, "run", started, {"config": str(args.config)})
    _summary(res.report)
    if res.fatal:
        print("acceptance violation: " + "; ".join(res.fatal), file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(_resolve_config(args.config))
    started = time.time()
    res = sweep(cfg, Path(args.out), max(1, args.parallel))
    io.write_meta(args.out, "sweep", started, {"config": str(args.config), "parallel": args.parallel})
    rep = res.report
    print(f"{cfg.name}: nu = {rep.nus}")
    print(f"  {'nu':>10s} {'interior diff':>14s} {'nu grad^2':>12s}")
    for nu, d, g in zip(rep.nus, rep.interior_diff, rep.grad_totals):
        print(f"  {nu:10.1e} {d:14.6e} {g:12.4e}")
    for k, ok in rep.verdicts.items():
        print(f"  {'ok  ' if ok else 'FAIL'} {k}")
    if res.failed:
        print("acceptance violation: " + ", ".join(res.failed), file=sys.stderr)
        return EXIT_ACCEPT
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.list:
        for item in ITEMS:
            print(f"{item.name:24s} {item.description}")
        return EXIT_OK
    n_r, n_t = args.grid
    results = run_items(n_r, n_t)
    if args.out:
        io.write_json(Path(args.out) / "report.json",
                      {"grid": [n_r, n_t], "items": [{"name": n, "passed": ok, "detail": d} for n, ok, d in results]})
    failed = [n for n, ok, _ in results if not ok]
    print(f"{len(results) - len(failed)}/{len(results)} items passed")
    return EXIT_ACCEPT if failed else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except (ConfigError, CompatibilityError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverAbort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
