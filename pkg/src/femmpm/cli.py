"""Command line entry points for the simulation pipeline."""

import argparse
import contextlib
import json
import sys
from pathlib import Path

from . import __version__, driver, transfer
from .errors import FemMpmError


def _add_common(sub, config_required=True):
    sub.add_argument("--config", required=config_required,
                     help="scenario YAML file")
    sub.add_argument("--out", default="out", help="output root directory")
    sub.add_argument("--frames-every", type=float, default=None,
                     help="override the frame dump interval (s)")
    sub.add_argument("--override-entanglement", action="store_true",
                     help="keep going past mesh inversion")
    sub.add_argument("--threads", type=int, default=None,
                     help="cap BLAS thread count (solver kernels are serial)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="femmpm",
        description="Two-phase slope/column failure simulator: mesh-based "
                    "initiation, state transfer, particle-based runout.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fem", help="run the mesh phase and dump frames")
    _add_common(p)

    p = sub.add_parser("transfer", help="convert a dumped mesh state to particles")
    _add_common(p)
    p.add_argument("--in", dest="indir", required=True,
                   help="fem_phase directory with dumped frames")
    p.add_argument("--transfer-time", type=float, required=True)

    p = sub.add_parser("mpm", help="run the runout phase from a bundle file")
    _add_common(p)
    p.add_argument("--in", dest="infile", required=True, help="bundle file")
    p.add_argument("--transfer-time", type=float, default=0.0,
                   help="simulated time at which the bundle was produced")

    p = sub.add_parser("hybrid", help="full pipeline for one transfer time")
    _add_common(p)
    p.add_argument("--transfer-time", type=float, required=True)

    p = sub.add_parser("sweep", help="hybrid runs for all configured transfer "
                                     "times plus a particle-only reference")
    _add_common(p)

    p = sub.add_parser("analyze", help="rebuild summary.csv from frame files")
    _add_common(p)

    p = sub.add_parser("pure-mpm", help="particle-only reference run")
    _add_common(p)

    p = sub.add_parser("pure-fem", help="mesh-only run until entanglement")
    _add_common(p)
    return parser


@contextlib.contextmanager
def _thread_cap(threads):
    if threads is None:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        print("threadpoolctl not installed; --threads ignored", file=sys.stderr)
        yield
        return
    with threadpool_limits(limits=threads):
        yield


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with _thread_cap(args.threads):
            return _dispatch(args)
    except FemMpmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args):
    config = driver.load_config(args.config)
    if args.frames_every is not None:
        config.output.frames_every = args.frames_every

    if args.command == "fem":
        path = driver.run_fem_phase(config, args.out,
                                    args.override_entanglement)
    elif args.command == "transfer":
        mesh, state = driver.load_fem_state(args.indir, args.transfer_time,
                                            config)
        bundle = transfer.execute_transfer(
            state, mesh, config.transfer, config.material,
            override_entanglement=args.override_entanglement)
        out_dir = Path(args.out) / config.scenario / \
            f"transfer_tT{args.transfer_time:g}"
        out_dir.mkdir(parents=True, exist_ok=True)
        bundle.write(out_dir / "bundle.txt")
        (out_dir / "meta.json").write_text(
            json.dumps(bundle.diagnostics, indent=2, sort_keys=True) + "\n")
        path = out_dir
    elif args.command == "mpm":
        path = driver.run_mpm_from_bundle(config, args.infile, args.out,
                                          t_start=args.transfer_time)
    elif args.command == "hybrid":
        path = driver.run_hybrid(config, args.transfer_time, args.out,
                                 args.override_entanglement)
    elif args.command == "sweep":
        path = driver.run_sweep(config, args.out, args.override_entanglement)
    elif args.command == "analyze":
        scenario_dir = Path(args.out) / config.scenario
        driver.rebuild_summary(scenario_dir, config)
        path = scenario_dir / "summary.csv"
    elif args.command == "pure-mpm":
        path = driver.run_pure_mpm(config, args.out)
    elif args.command == "pure-fem":
        path = driver.run_pure_fem(config, args.out,
                                   args.override_entanglement)
    else:
        raise AssertionError(args.command)
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
