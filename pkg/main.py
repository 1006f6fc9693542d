"""
Engine thermal boundary conditions - command line entry point
"""
import argparse
import logging
import sys
from typing import List, Optional

import config
from services.errors import EngineThermalError
from services.processor import PipelineProcessor

logger = logging.getLogger("engine_thermal")

COMMANDS = ("build-pdf", "gen-bc", "simulate", "steady", "sensor-correct", "report", "synth-lap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="engine-thermal",
        description="Statistical heat-transfer boundary conditions for engine thermal simulation",
    )
    parser.add_argument("--config", default=config.DEFAULT_CONFIG, help="pipeline config (JSON)")
    parser.add_argument("--out", default=config.OUT_DIR, help="output directory")
    parser.add_argument("--dt", type=float, default=None, help="simulation time step [s]")
    parser.add_argument("--threads", type=int, default=config.THREADS, help="worker threads")
    parser.add_argument("--seed", type=int, default=None, help="seed for synthetic generation")
    parser.add_argument("--log-level", default=None, help="overrides ENGINE_THERMAL_LOG_LEVEL")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("build-pdf", help="per-speed HTC PDFs, state histogram and pointer matrix")
    commands.add_parser("gen-bc", help="boundary-condition series per surface zone")
    for name, text in (("simulate", "transient network run"), ("steady", "steady network solve")):
        sub = commands.add_parser(name, help=text)
        sub.add_argument("--water-offset", type=float, default=0.0, help="water reference temperature shift [K]")
        if name == "simulate":
            sub.add_argument("--run-name", default="run", help="output subdirectory of this run")
    sensor = commands.add_parser("sensor-correct", help="sensor-lag correction of water temperatures")
    sensor.add_argument("--tau", type=float, default=None, help="sensor time constant [s]")
    report = commands.add_parser("report", help="compare two simulate runs per node")
    report.add_argument("run_a")
    report.add_argument("run_b")
    synth = commands.add_parser("synth-lap", help="synthetic lap telemetry")
    synth.add_argument("--traces", action="store_true", help="also write Wiebe-fired pressure traces")
    return parser


def run(args: argparse.Namespace) -> None:
    if not args.config:
        raise config.ConfigError("No config given; pass --config or set ENGINE_THERMAL_CONFIG")
    pipeline_config = config.load_config(args.config)
    if args.command != "synth-lap":
        config.validate_config(pipeline_config)

    processor = PipelineProcessor(pipeline_config, args.out, threads=args.threads, seed=args.seed, dt=args.dt)
    if args.command == "build-pdf":
        processor.build_pdf()
    elif args.command == "gen-bc":
        processor.gen_bc()
    elif args.command == "simulate":
        processor.simulate(water_offset=args.water_offset, run_name=args.run_name)
    elif args.command == "steady":
        processor.steady(water_offset=args.water_offset)
    elif args.command == "sensor-correct":
        processor.sensor_correct(tau=args.tau)
    elif args.command == "report":
        processor.report(args.run_a, args.run_b)
    elif args.command == "synth-lap":
        processor.synth_lap(traces=args.traces)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.setup_logging(args.log_level)
    try:
        run(args)
    except EngineThermalError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
