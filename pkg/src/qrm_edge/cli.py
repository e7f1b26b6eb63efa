"""Command-line entry point: ``qrm-edge {evaluate,simulate,metrics,report}``.

Exit codes are a scripting contract: 0 success, 1 runtime failure (port in
use, I/O error), 2 usage or configuration error (unknown policy, bad TOML,
malformed input line).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import signal
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import ConfigError, NodeSpec, ScenarioConfig, load
from .domain import ConfusionMatrix, DomainError, PredictionRecord
from .energy import evaluate_policy, extension_ratio, reports_csv
from .metrics import MetricsError, macro_metrics, macro_pr, pr_csv
from .qrm import histogram_csv, read_log, summarize, summary_text, timeline_csv
from .runtime import SimulationResult, simulate, simulate_realtime

log = logging.getLogger("qrm_edge")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

LOG_NAME = "monitoring_log.ndjson"


class UsageError(Exception):
    """Bad arguments or input; maps to exit code 2."""


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="TOML scenario file (default: $QRM_EDGE_CONFIG, then the bundled defaults)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: [output] dir)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="qrm-edge", description="Battery-aware reconfiguration of edge recognition nodes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("evaluate", parents=[common], help="analytic working time and weighted F1 per policy")
    p.add_argument("policies", nargs="*", metavar="POLICY")
    p.add_argument("--all", action="store_true", help="every policy in the configuration")
    p.add_argument("--baseline", metavar="NAME", help="add extension columns relative to this policy")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", parents=[common], help="run nodes against the collector")
    p.add_argument("--policy", metavar="NAME", help="apply this policy to every node")
    p.add_argument("--seed", type=int, help="base RNG seed")
    p.add_argument("--nodes", type=int, metavar="N", help="replace the node list with N default nodes")
    p.add_argument("--realtime", action="store_true", help="TCP transport, wall-clock pacing")
    p.add_argument("--speedup", type=float, help="simulated seconds per wall second (real time only)")
    p.add_argument("--port", type=int, help="collector TCP port (real time only; 0 picks a free one)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("metrics", parents=[common], help="macro metrics and PR curves of a predictions file")
    p.add_argument("predictions", metavar="FILE",
                   help='NDJSON, one {"true": k, "confidences": [...]} per line')
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("report", parents=[common], help="re-summarise an existing monitoring log")
    p.add_argument("log", metavar="LOG", help="monitoring log (NDJSON)")
    p.set_defaults(func=cmd_report)
    return parser


def _out_dir(args, config: ScenarioConfig | None) -> Path:
    out = Path(args.out or (config.output.dir if config else "qrm_out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


# -- evaluate -----------------------------------------------------------------

def cmd_evaluate(args, config: ScenarioConfig) -> int:
    names = list(config.policies) if args.all else args.policies
    if not names:
        raise UsageError("name at least one policy or pass --all")
    reports = [evaluate_policy(config.policy(n), config.profiles, config.capacity_wh) for n in names]
    baseline = None
    if args.baseline:
        baseline = evaluate_policy(config.policy(args.baseline), config.profiles, config.capacity_wh)

    header = f"{'policy':<12} {'time':>9} {'seconds':>11} {'F1':>7} {'switches':>8}"
    if baseline:
        header += f" {'ext %':>7} {'dF1':>7}"
    print(header)
    for r in reports:
        row = (f"{r.policy:<12} {r.display_time:>9} {r.total_working_time_s:11.1f} "
               f"{r.weighted_f1_pct:7.2f} {r.reconfiguration_count:8d}")
        if baseline:
            row += f" {extension_ratio(r, baseline):7.2f} {r.weighted_f1_pct - baseline.weighted_f1_pct:7.2f}"
        print(row)

    out = _out_dir(args, config)
    _write(out / "report.csv", reports_csv(reports, baseline))
    _write(out / "report.ndjson", "".join(r.to_json() + "\n" for r in reports))
    return EXIT_OK


# -- simulate -----------------------------------------------------------------

def _simulation_config(args, config: ScenarioConfig) -> ScenarioConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.nodes is not None:
        if args.nodes < 1:
            raise UsageError("--nodes must be >= 1")
        changes["nodes"] = tuple(NodeSpec(f"node-{i + 1}") for i in range(args.nodes))
    if args.speedup is not None:
        if args.speedup <= 0:
            raise UsageError("--speedup must be > 0")
        changes["simulation"] = replace(config.simulation, speedup=args.speedup)
    if args.policy is not None:
        config.policy(args.policy)
    config = config.with_overrides(**changes) if changes else config
    if not config.nodes:
        raise UsageError("no nodes configured")
    return config


def _run_realtime(config: ScenarioConfig, log_path: Path, policy: str | None,
                  port: int | None) -> SimulationResult:
    async def main():
        stop = asyncio.Event()
        loop = asyncio.get_running_loop()
        try:
            loop.add_signal_handler(signal.SIGINT, stop.set)
        except (NotImplementedError, RuntimeError):
            pass
        return await simulate_realtime(config, log_path, policy, port, stop=stop)

    return asyncio.run(main())


def cmd_simulate(args, config: ScenarioConfig) -> int:
    config = _simulation_config(args, config)
    out = _out_dir(args, config)
    log_path = out / LOG_NAME
    if args.realtime:
        try:
            result = _run_realtime(config, log_path, args.policy, args.port)
        except OSError as exc:
            print(f"qrm-edge: cannot run collector: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        result = simulate(config, log_path, args.policy)
    _write_summary(out, result.summaries)
    print(summary_text(result.summaries), end="")
    print(f"{result.log_entries} log entries -> {log_path}")
    return EXIT_OK


def _write_summary(out: Path, summaries) -> None:
    _write(out / "summary.txt", summary_text(summaries))
    _write(out / "histogram.csv", histogram_csv(summaries))
    _write(out / "timeline.csv", timeline_csv(summaries))


# -- metrics ------------------------------------------------------------------

def read_predictions(path: str | Path) -> list[PredictionRecord]:
    """Parse a predictions file, naming the first bad line.

    Raises:
        UsageError: on unreadable JSON, wrong keys, or inconsistent vector lengths.
    """
    records: list[PredictionRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, 1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
                if not isinstance(obj, dict) or set(obj) != {"true", "confidences"}:
                    raise ValueError('expected exactly the keys "true" and "confidences"')
                true, conf = obj["true"], obj["confidences"]
                if isinstance(true, bool) or not isinstance(true, int) or not isinstance(conf, list):
                    raise ValueError('"true" must be an integer and "confidences" a list')
                if any(isinstance(c, bool) or not isinstance(c, (int, float)) for c in conf):
                    raise ValueError("confidences must be numbers")
                record = PredictionRecord(true, tuple(conf))
                if records and len(record.confidences) != len(records[0].confidences):
                    raise ValueError(f"expected {len(records[0].confidences)} confidences, "
                                     f"got {len(record.confidences)}")
            except (ValueError, DomainError) as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
            records.append(record)
    if not records:
        raise UsageError(f"{path}: no prediction records")
    return records


def cmd_metrics(args, config: ScenarioConfig | None) -> int:
    records = read_predictions(args.predictions)
    k = len(records[0].confidences)
    labels = config.class_labels if config is not None and len(config.class_labels) == k else None
    cm = ConfusionMatrix.from_records(records, labels or ())
    m = macro_metrics(cm)
    pr = macro_pr(records)
    print(f"records          {cm.total}")
    print(f"accuracy         {m.accuracy:.6f}")
    print(f"macro precision  {m.precision:.6f}")
    print(f"macro recall     {m.recall:.6f}")
    print(f"macro F1         {m.f1:.6f}")
    print(f"macro AUC        {pr.macro_auc:.6f}")
    if pr.excluded:
        print(f"classes without positives (excluded from PR): {pr.excluded}")
    out = _out_dir(args, config)
    _write(out / "pr_curve.csv", pr_csv(pr, labels))
    return EXIT_OK


# -- report -------------------------------------------------------------------

def cmd_report(args, config: ScenarioConfig | None) -> int:
    profiles = config.profiles if config is not None else None
    try:
        summaries = summarize(read_log(args.log), profiles)
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"{args.log}: not a monitoring log ({exc})") from None
    out = _out_dir(args, config)
    _write_summary(out, summaries)
    print(summary_text(summaries), end="")
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load(args.config)
        return args.func(args, config)
    except (UsageError, ConfigError, MetricsError) as exc:
        print(f"qrm-edge: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"qrm-edge: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"qrm-edge: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
