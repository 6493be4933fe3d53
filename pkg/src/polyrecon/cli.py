"""Command line entry point.

Exit codes: 0 success, 1 internal error, 2 input error, 3 configuration
error, 4 reconstruction failure.
"""
import argparse
import logging
import sys
from pathlib import Path

from .cloud import load_cloud, load_mesh
from .errors import ConfigError, MeshIOError, ParseError, ReconstructionError
from .partition import dump_complex
from .pipeline import (PipelineConfig, StageTimer, build_partition, load_input, make_bundle, metrics_report,
                       run_pipeline, write_json)

log = logging.getLogger("polyrecon")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_CONFIG, EXIT_RECONSTRUCTION = 0, 1, 2, 3, 4


def exit_code(exc):
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (ParseError, MeshIOError, FileNotFoundError, IsADirectoryError)):
        return EXIT_INPUT
    if isinstance(exc, ReconstructionError):
        return EXIT_RECONSTRUCTION
    return EXIT_INTERNAL


def _common(p):
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int, help="random seed for resampling and plane detection")
    p.add_argument("--debug-dir", help="write intermediate results to this directory")
    p.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")


def build_parser():
    parser = argparse.ArgumentParser(prog="polyrecon", description="Polygonal surface reconstruction from point clouds.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reconstruct", help="point cloud (or stage bundle) to polygon mesh")
    p.add_argument("input")
    p.add_argument("output", help="mesh path (.obj or .ply)")
    p.add_argument("--report", help="metrics JSON path (default: output with .json suffix)")
    p.add_argument("--t-r", type=float, dest="t_r", help="candidate face coverage threshold")
    p.add_argument("--lambda-v", type=float, dest="lambda_v", help="weight of the coverage term")
    p.add_argument("--max-iter", type=int, dest="max_iter")
    p.add_argument("--metrics-cloud", choices=("preprocessed", "raw"), dest="metrics_cloud")
    _common(p)

    p = sub.add_parser("planes", help="detect and refine planes; writes a JSON bundle")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="bundle path (default: <input>.planes.json)")
    p.add_argument("--eps-inlier", type=float, dest="eps_inlier")
    p.add_argument("--min-support", type=int, dest="min_support")
    _common(p)

    p = sub.add_parser("partition", help="partition space from a cloud or planes bundle; writes a JSON bundle")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="bundle path (default: <input>.partition.json)")
    p.add_argument("--sigma", type=float)
    _common(p)

    p = sub.add_parser("metrics", help="distance and simplification metrics of a mesh against a cloud")
    p.add_argument("cloud")
    p.add_argument("mesh")
    p.add_argument("--raw-count", type=int, help="point count for the simplification rate (default: cloud size)")
    p.add_argument("--symmetric", action="store_true", default=None)
    _common(p)
    return parser


def resolve_config(args):
    config = PipelineConfig.from_toml(args.config) if args.config else PipelineConfig()
    overrides = {k: getattr(args, k, None) for k in (
        "seed", "debug_dir", "t_r", "lambda_v", "max_iter", "metrics_cloud", "eps_inlier", "min_support",
        "sigma", "symmetric", "report")}
    config = config.replace(**overrides)
    if args.command == "reconstruct":
        config = config.replace(input=args.input, output=args.output)
    elif args.command in ("planes", "partition"):
        config = config.replace(input=args.input)
    config.validate()
    return config


def _default_out(path, suffix):
    p = Path(path)
    name = p.name[: -len(".planes.json")] if p.name.endswith(".planes.json") else p.stem
    return str(p.with_name(name + suffix))


def cmd_reconstruct(config, args):
    timer = StageTimer()
    mesh, report = run_pipeline(config, timer)
    log.info("wrote %s (%d faces); dis_h=%.4g dis_m=%.4g r=%.4g", config.output, len(mesh.faces),
             report.dis_h, report.dis_m, report.r)
    print(report.to_json(), end="")


def cmd_planes(config, args):
    timer = StageTimer()
    raw_count, raw, cloud, planes, params, _ = load_input(config.input, config, timer)
    out = args.output or _default_out(config.input, ".planes.json")
    write_json(make_bundle(raw_count, raw, cloud, planes, params, config), out)
    print(f"{len(planes)} planes -> {out}")


def cmd_partition(config, args):
    timer = StageTimer()
    raw_count, raw, cloud, planes, params, _ = load_input(config.input, config, timer)
    with timer.stage("partition"):
        cplx, classes = build_partition(planes, cloud, config)
    if config.debug_dir:
        dump_complex(cplx, Path(config.debug_dir) / "partition")
    out = args.output or _default_out(config.input, ".partition.json")
    write_json(make_bundle(raw_count, raw, cloud, planes, params, config, cplx, classes.internal), out)
    print(f"{len(cplx.cells)} cells, {len(cplx.adjacency)} shared faces -> {out}")


def cmd_metrics(config, args):
    cloud = load_cloud(args.cloud)
    mesh = load_mesh(args.mesh)
    report = metrics_report(cloud, mesh, args.raw_count or len(cloud), config.symmetric)
    print(report.to_json(), end="")


COMMANDS = {"reconstruct": cmd_reconstruct, "planes": cmd_planes, "partition": cmd_partition, "metrics": cmd_metrics}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        if args.print_config:
            print(config.to_toml(), end="")
            return EXIT_OK
        COMMANDS[args.command](config, args)
    except Exception as exc:  # noqa: BLE001 - mapped to exit codes
        code = exit_code(exc)
        if code == EXIT_INTERNAL:
            log.exception("internal error")
        print(f"error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
