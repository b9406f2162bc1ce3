"""``h2sim verify|simulate|sweep --config FILE [--set key=value ...] --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import RunConfig
from .errors import H2SimError

log = logging.getLogger("h2sim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="h2sim", description="Three-engine SNN training accelerator simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("verify", "run oracle-equivalence and invariant checks"),
                       ("simulate", "simulate one training iteration"),
                       ("sweep", "simulate every point of the config's sweep grid")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted key, JSON value); repeatable")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
    return parser


def _verify(cfg: RunConfig, out: Path) -> int:
    from .simulate import write_json
    from .verify import run_suites
    out.mkdir(parents=True, exist_ok=True)
    opts = {"configs": 100, "tiles": 1000, "pipeline": 200, **cfg.verify}
    results = run_suites(cfg.seed, opts["configs"], opts["tiles"], opts["pipeline"], cfg.engine_configs(),
                         log=print)
    ok = all(r.passed for r in results)
    write_json(out / "verify.json", {
        "schema": "h2sim.verify/1", "config_hash": cfg.hash, "passed": ok,
        "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]})
    print(f"verify: {'all checks passed' if ok else 'FAILED'}")
    return 0 if ok else 1


def _simulate(cfg: RunConfig, out: Path, figures: bool) -> int:
    from .simulate import run_simulate
    res = run_simulate(cfg, out, figures)
    s = res.schedule
    print(f"{cfg.network_spec().describe()}: {s.total_cycles:,} cycles "
          f"(sequential {s.sequential_cycles:,}, speedup {s.speedup_over_sequential:.2f}x), "
          f"energy {res.energy.total:.4g}")
    print(f"report: {out / 'report.json'}")
    return 0


def _sweep(cfg: RunConfig, out: Path, figures: bool, jobs: int) -> int:
    from .simulate import run_sweep
    rows = run_sweep(cfg, out, jobs, figures)
    for r in rows:
        params = ", ".join(f"{k}={r[k]}" for k in cfg.sweep)
        print(f"point {r['point']}: {params}: {r['total_cycles']:,} cycles")
    print(f"csv: {out / 'sweep.csv'}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config, args.overrides)
        figures = False if args.no_figures else None
        if args.command == "verify":
            return _verify(cfg, args.out)
        if args.command == "simulate":
            return _simulate(cfg, args.out, figures)
        return _sweep(cfg, args.out, figures, args.jobs)
    except H2SimError as exc:
        print(f"h2sim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
