"""Command-line entry points: run scenarios, score traces, serve sessions.

``run`` and ``score`` are fully offline; ``serve`` exposes the live
gateway for the browser playground. Relative output paths resolve under
$PARLEY_REPORT_DIR when it is set.

Exit codes: 0 success, 2 scenario/schema validation failure, 3 ground
truth coverage gap while scoring.
"""

from __future__ import annotations

import asyncio
import json
import logging
import os
import sys
from pathlib import Path

import click

from parley import metrics
from parley.bus import EngineConfig
from parley.scenario import GroundTruth, NoiseConfig, ScenarioError, load_scenario
from parley.simulator import EventTrace, run as run_scenario


def _resolve_out(path_str: str) -> Path:
    path = Path(path_str)
    base = os.environ.get("PARLEY_REPORT_DIR")
    if base and not path.is_absolute():
        return Path(base) / path
    return path


def _render(report, fmt: str) -> str:
    if fmt == "tabular":
        return metrics.render_tabular(report)
    return metrics.render_structured(report)


def _load_truth(path: Path) -> GroundTruth:
    doc = json.loads(path.read_text(encoding="utf-8"))
    if "events" in doc:  # a full scenario document
        return load_scenario(doc).truth
    truth_doc = doc.get("ground_truth", doc)
    return GroundTruth(
        segments=list(truth_doc.get("segments", [])),
        responses=list(truth_doc.get("responses", [])),
    )


@click.group()
def main():
    """Multi-party interaction engine: simulate, score, and serve."""
    logging.basicConfig(level=os.environ.get("PARLEY_LOG", "WARNING"))


@main.command("run")
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int, default=None, help="Override the scenario's noise seed.")
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the metrics report here (default: stdout).")
@click.option("--trace", "trace_path", type=click.Path(), default=None,
              help="Write the event trace here (default: <scenario>.trace.jsonl "
                   "next to the report or under $PARLEY_REPORT_DIR).")
@click.option("--format", "fmt", type=click.Choice(["structured", "tabular"]),
              default="structured", show_default=True)
def cmd_run(scenario_path, seed, report_path, trace_path, fmt):
    """Simulate a scenario, write its trace, and score it."""
    try:
        script = load_scenario(scenario_path)
    except ScenarioError as exc:
        click.echo(f"scenario error: {exc}", err=True)
        sys.exit(2)
    trace = run_scenario(script, seed=seed)
    if trace_path is None:
        trace_path = f"{script.scenario_id}.trace.jsonl"
    out_trace = _resolve_out(trace_path)
    out_trace.parent.mkdir(parents=True, exist_ok=True)
    trace.save(out_trace)
    try:
        report = metrics.build_report(trace, script.truth)
    except metrics.AlignmentError as exc:
        click.echo(f"alignment error: {exc}", err=True)
        sys.exit(3)
    rendered = _render(report, fmt)
    if report_path is None:
        click.echo(rendered, nl=False)
    else:
        out_report = _resolve_out(report_path)
        out_report.parent.mkdir(parents=True, exist_ok=True)
        out_report.write_text(rendered, encoding="utf-8")
    click.echo(f"trace written to {out_trace}", err=True)


@main.command("score")
@click.option("--trace", "trace_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--truth", "truth_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="A scenario file or a bare ground-truth JSON document.")
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--format", "fmt", type=click.Choice(["structured", "tabular"]),
              default="structured", show_default=True)
def cmd_score(trace_path, truth_path, report_path, fmt):
    """Score an existing trace against ground truth."""
    try:
        trace = EventTrace.load(trace_path)
        truth = _load_truth(Path(truth_path))
    except (json.JSONDecodeError, ScenarioError, OSError) as exc:
        click.echo(f"input error: {exc}", err=True)
        sys.exit(2)
    try:
        report = metrics.build_report(trace, truth)
    except metrics.AlignmentError as exc:
        click.echo(f"coverage gap: {exc}", err=True)
        sys.exit(3)
    rendered = _render(report, fmt)
    if report_path is None:
        click.echo(rendered, nl=False)
    else:
        out = _resolve_out(report_path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(rendered, encoding="utf-8")


@main.command("serve")
@click.option("--port", type=int, default=8790, show_default=True)
@click.option("--noise", "noise_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file with NoiseConfig fields for live sessions.")
def cmd_serve(port, noise_path):
    """Serve the live session gateway over WebSocket."""
    from parley.gateway import serve

    noise = None
    if noise_path is not None:
        doc = json.loads(Path(noise_path).read_text(encoding="utf-8"))
        try:
            noise = NoiseConfig(**doc)
            noise.validate()
        except (TypeError, ScenarioError) as exc:
            click.echo(f"noise config error: {exc}", err=True)
            sys.exit(2)
    try:
        asyncio.run(serve(port, EngineConfig(), noise))
    except KeyboardInterrupt:
        pass


if __name__ == "__main__":
    main()
