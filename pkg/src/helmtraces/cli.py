"""Command line entry: solve, study, and snapshots subcommands.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import ConfigError, RunConfig, run_scaling_study, run_solve, snapshot_iterations


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML run configuration")
    p.add_argument("--out", default=None, help="output directory (overrides config)")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--threads", type=int, default=1,
                   help="reserved; solver kernels run sequentially for "
                        "bit-reproducible output")


def _load(args) -> RunConfig:
    cfg = RunConfig.from_yaml(args.config)
    if args.out is not None:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="helmtraces",
                                     description="2D Helmholtz solver via nested "
                                                 "polarized interface traces")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (("solve", "run one configuration and write report + field"),
                      ("study", "scaling study over sizes and decompositions"),
                      ("snapshots", "dump the field after each outer iteration")):
        _add_common(sub.add_parser(name, help=doc))

    args = parser.parse_args(argv)
    try:
        cfg = _load(args)
        cfg.validate()
    except (ConfigError, OSError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "solve":
            report = run_solve(cfg)
            print(f"iterations={report.iterations} converged={report.converged} "
                  f"trace_residual={report.trace_residual:.3e} "
                  f"volume_residual={report.volume_residual:.3e}")
            if not report.converged:
                return 3
        elif args.command == "study":
            with open(args.config) as fh:
                import yaml
                doc = yaml.safe_load(fh)
            study = doc.get("study", {})
            sizes = [int(s) for s in study.get("sizes", [])]
            p_grid = [tuple(int(v) for v in p) for p in study.get("P_grid", [[cfg.L, cfg.L_c]])]
            out = Path(cfg.out_dir or "out")
            out.mkdir(parents=True, exist_ok=True)
            rows = run_scaling_study(cfg, sizes, p_grid, out_path=out / "study.csv")
            bad = [r for r in rows if str(r.get("status", "")).startswith("error")]
            print(f"study: {len(rows)} rows, {len(bad)} failures -> {out / 'study.csv'}")
        elif args.command == "snapshots":
            out = Path(cfg.out_dir or "out")
            snaps = snapshot_iterations(cfg, out_dir=out)
            print(f"wrote {len(snaps)} snapshots to {out}")
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
