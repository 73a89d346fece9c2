"""Command-line entrypoint: train, eval, sweep, heatmap and compare subcommands."""

from __future__ import annotations

import argparse
import logging
from collections.abc import Callable, Sequence
from dataclasses import replace
from pathlib import Path

import altair as alt
import pandas as pd

from src.charts import save_chart
from src.charts.heatmap import build_localize_heatmap_chart
from src.charts.metrics import build_metrics_chart
from src.charts.training import build_training_chart
from src.config import RunConfig, get_config, load_run_config
from src.harness.campaigns import (
    SWEEP_AXES,
    MetricsSummary,
    compare,
    default_planner_groups,
    heatmap,
    run_campaign,
    sweep,
)
from src.harness.episode import LEARNED_KINDS, build_planner, train_policy

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="TOML run configuration")
    parser.add_argument("--map", type=Path, help="map file, overrides [run] map")
    parser.add_argument("--planner", help="planner spec such as static:2, threshold:0.2 or riskrl:<checkpoint>")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--risk", type=float, help="allowed failure probability c_hat")
    parser.add_argument("--output-dir", type=Path)
    parser.add_argument("--charts", action="store_true", help="also write an altair chart next to each CSV")
    parser.add_argument("--log-level", default="INFO")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="app.py", description="Risk-aware active localization experiments.")
    commands = parser.add_subparsers(dest="command", required=True)

    train_parser = commands.add_parser("train", help="train a RiskRL or BaseRL planner")
    _add_common_arguments(train_parser)
    train_parser.add_argument("--kind", choices=LEARNED_KINDS, default="riskrl")
    train_parser.add_argument("--budget", type=int, help="training episodes, overrides [run] train_episodes")
    train_parser.add_argument("--log-every", type=int, default=10)

    eval_parser = commands.add_parser("eval", help="evaluate one planner")
    _add_common_arguments(eval_parser)
    eval_parser.add_argument("--traces", action="store_true", help="write per-step traces as JSON lines")

    sweep_parser = commands.add_parser("sweep", help="evaluate across noise or risk values")
    _add_common_arguments(sweep_parser)
    sweep_parser.add_argument("--axis", choices=SWEEP_AXES, required=True)
    sweep_parser.add_argument("--values", required=True, help="comma-separated values, e.g. 0.9,0.8,0.7")

    heatmap_parser = commands.add_parser("heatmap", help="localize probability per belief-mean cell")
    _add_common_arguments(heatmap_parser)
    heatmap_parser.add_argument("--runs", type=int, help="episodes, overrides [run] heatmap_runs")

    compare_parser = commands.add_parser("compare", help="compare planner groups across maps")
    _add_common_arguments(compare_parser)
    compare_parser.add_argument("--maps", type=Path, nargs="+", help="maps to compare on (default: the run map)")
    compare_parser.add_argument("--riskrl", help="RiskRL checkpoint")
    compare_parser.add_argument("--baserl", help="BaseRL checkpoint")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config) if args.config else get_config()
    overrides = {
        "map_path": args.map,
        "planner": args.planner,
        "seed": args.seed,
        "episodes": args.episodes,
        "output_dir": args.output_dir,
    }
    config = replace(config, **{key: value for key, value in overrides.items() if value is not None})
    if args.risk is not None:
        config = replace(config, risk=config.risk.with_c_hat(args.risk))
    return config


def _write_table(frame: pd.DataFrame, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    logger.info("Wrote %s (%d rows)", path, len(frame))
    return path


def _write_chart(
    enabled: bool,
    chart_builder: Callable[[pd.DataFrame], alt.TopLevelMixin],
    frame: pd.DataFrame,
    path: Path,
) -> None:
    if not enabled:
        return
    try:
        save_chart(chart_builder(frame), path)
    except ValueError as exc:
        logger.warning("Skipping chart %s: %s", path, exc)


def _run_train(args: argparse.Namespace, config: RunConfig) -> None:
    result = train_policy(config, args.kind, budget=args.budget, log_every=args.log_every)
    checkpoint = result.save(config.output_dir / f"{args.kind}.pt", kind=args.kind)
    logger.info("Saved checkpoint %s (lambda %.4f)", checkpoint, result.dual.lambda_val)
    curves_path = _write_table(result.curves, config.output_dir / f"{args.kind}_training.csv")
    _write_chart(args.charts, build_training_chart, result.curves, curves_path.with_suffix(".html"))


def _run_eval(args: argparse.Namespace, config: RunConfig) -> None:
    planner = build_planner(config.planner)
    results = run_campaign(config, planner)
    summary = MetricsSummary.from_results(results)
    table = pd.DataFrame([{"planner": planner.name, **summary.as_row()}])
    _write_table(table, config.output_dir / "eval.csv")
    if args.traces:
        traces = pd.concat(
            [result.trace.assign(episode=index) for index, result in enumerate(results)], ignore_index=True
        )
        trace_path = config.output_dir / "traces.jsonl"
        traces.to_json(trace_path, orient="records", lines=True)
        logger.info("Wrote %s (%d steps)", trace_path, len(traces))


def _run_sweep(args: argparse.Namespace, config: RunConfig) -> None:
    values = [float(item) for item in args.values.split(",") if item.strip()]
    planner = None if args.axis == "risk" else build_planner(config.planner)
    table = sweep(config, args.axis, values, planner)
    path = _write_table(table, config.output_dir / f"sweep_{args.axis}.csv")
    _write_chart(args.charts, build_metrics_chart, table, path.with_suffix(".html"))


def _run_heatmap(args: argparse.Namespace, config: RunConfig) -> None:
    grid = heatmap(config, build_planner(config.planner), args.runs)
    frame = grid.to_frame()
    path = _write_table(frame, config.output_dir / "heatmap.csv")
    _write_chart(args.charts, build_localize_heatmap_chart, frame, path.with_suffix(".html"))


def _run_compare(args: argparse.Namespace, config: RunConfig) -> None:
    maps = args.maps or [config.map_path]
    configs = {path.stem: replace(config, map_path=path) for path in maps}
    groups = default_planner_groups(args.riskrl, args.baserl)
    table = compare(configs, groups)
    path = _write_table(table, config.output_dir / "compare.csv")
    _write_chart(args.charts, build_metrics_chart, table, path.with_suffix(".html"))


COMMANDS = {
    "train": _run_train,
    "eval": _run_eval,
    "sweep": _run_sweep,
    "heatmap": _run_heatmap,
    "compare": _run_compare,
}


def run(argv: Sequence[str] | None = None) -> int:
    """Run the CLI entrypoint; returns the process exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    alt.data_transformers.disable_max_rows()

    try:
        config = resolve_config(args)
        COMMANDS[args.command](args, config)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 1
    except ValueError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return 1
    return 0
