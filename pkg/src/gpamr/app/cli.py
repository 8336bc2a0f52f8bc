"""Command line: ``gpamr run <config|preset> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from .config import ConfigError, load_config
from .driver import EXIT_ERROR, RunError, run
from .export import format_timing_table
from .presets import PRESETS


def build_parser():
    p = argparse.ArgumentParser(prog="gpamr",
                                description="Bar-based topology optimization on adaptive quadtree meshes.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="optimize a problem from a YAML config or a built-in preset")
    r.add_argument("config", help=f"YAML file or preset name ({', '.join(PRESETS)})")
    r.add_argument("--full-resolution", action="store_true",
                   help="refine uniformly to the finest level once and skip adaptation")
    r.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP threads")
    r.add_argument("--out", default=None, help="output directory")
    r.add_argument("--max-iters", type=int, default=None, help="maximum optimizer iterations")
    r.add_argument("--design", default=None, help="design file to start (or resume) from")
    r.add_argument("-q", "--quiet", action="store_true", help="only print the summary")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s")
    try:
        cfg = load_config(args.config, design=args.design)
        if args.max_iters is not None and args.max_iters < 0:
            raise ConfigError("--max-iters must be >= 0")
        with threadpool_limits(limits=args.threads):
            result = run(cfg, full_resolution=args.full_resolution, max_iters=args.max_iters,
                         output_dir=args.out)
    except (ConfigError, RunError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    f = result.final
    print(f"status: {result.status} after {result.iterations} iterations")
    print(f"compliance {f.compliance:.6g}  volume fraction {f.volume_fraction:.4f}  "
          f"max relaxed stress / limit {f.max_stress_ratio:.4f}  cells {f.n_cells}")
    print(format_timing_table(result.timing))
    print(f"output: {result.output_dir}")
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
