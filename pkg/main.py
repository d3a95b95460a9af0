"""
Command-line entry point.

    python main.py --config fixture/config.json kb-augment
    python main.py --config fixture/config.json --set params.k=20 link
    python main.py --config fixture/config.json sweep --grid 0.45,0.55
"""

import json
import logging
from pathlib import Path
from typing import List, Optional

import typer
from pydantic import BaseModel

from services.base import ConfigError, ConfigurationManager, OperationResult, ToolkitError
from services.factory import ServiceRegistry
from services.fixtures import make_fixture
from services.orchestrator import PipelineOrchestrator

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
MISSING = object()
STAGES = ["kb-augment", "preprocess", "downsample", "stats", "index", "link", "evaluate", "negatives"]

logger = logging.getLogger(__name__)

app = typer.Typer(add_completion=False, help="Biomedical entity disambiguation pipeline")


class CliState:
    def __init__(self, config_path: Optional[str], overrides: List[str], jobs: Optional[int]):
        self.config_path = config_path
        self.overrides = list(overrides)
        self.jobs = jobs

    def load_config(self) -> ConfigurationManager:
        try:
            manager = ConfigurationManager.from_sources(self.config_path, self.overrides)
            if self.jobs is not None:
                manager.update({"jobs": self.jobs})
        except ConfigError as e:
            logger.error(f"Configuration error: {e}")
            raise typer.Exit(code=e.exit_code)
        ServiceRegistry.set_config(manager)
        return manager


def exit_code_for(result: OperationResult) -> int:
    """0 on success, otherwise the exit code carried by the failing exception"""
    if result.is_success:
        return 0
    error = result.metadata.get("exception")
    return error.exit_code if isinstance(error, ToolkitError) else 1


def _finish(result: OperationResult):
    code = exit_code_for(result)
    if code:
        typer.echo(f"error: {result.error_message}", err=True)
        raise typer.Exit(code=code)


@app.callback()
def main(
        ctx: typer.Context,
        config: Optional[str] = typer.Option(None, "--config", help="JSON config file (or NED_TOOLKIT_CONFIG)"),
        overrides: List[str] = typer.Option([], "--set", help="Dotted key=value override, repeatable"),
        jobs: Optional[int] = typer.Option(None, "--jobs", min=1, help="Worker threads (default: logical cores)"),
        log_level: str = typer.Option("INFO", "--log-level"),
):
    level = logging.getLevelName(log_level.upper())
    if not isinstance(level, int):
        typer.echo(f"error: unknown log level '{log_level}'", err=True)
        raise typer.Exit(code=ConfigError.exit_code)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    ctx.obj = CliState(config, overrides, jobs)


def run_stage_command(state: CliState, stage: str):
    orchestrator = PipelineOrchestrator(state.load_config())
    result = orchestrator.run_stage(stage)
    logger.debug(f"Stage metrics: {orchestrator.metrics.get_summary()}")
    _finish(result)
    typer.echo(json.dumps(result.data, sort_keys=True))


def _register_stage(stage: str):
    def command(ctx: typer.Context):
        run_stage_command(ctx.obj, stage)

    command.__name__ = stage.replace("-", "_")
    app.command(stage, help=f"Run the {stage} stage")(command)


for _stage in STAGES:
    _register_stage(_stage)


@app.command("sweep")
def sweep(
        ctx: typer.Context,
        grid: str = typer.Option("0.45,0.55", "--grid", help="Comma-separated thresholds in [0, 1]"),
):
    """Dev accuracy at each backoff threshold; writes sweep.dev.json"""
    try:
        points = [float(value) for value in grid.split(",") if value.strip()]
    except ValueError:
        typer.echo(f"error: threshold grid '{grid}' is not a list of numbers", err=True)
        raise typer.Exit(code=ConfigError.exit_code)

    result = PipelineOrchestrator(ctx.obj.load_config()).sweep_threshold(points)
    _finish(result)
    for threshold, value in result.data.rows:
        typer.echo(f"{threshold:g}\t{value:.4f}")
    typer.echo(f"best\t{result.data.best_threshold:g}\t{result.data.best_accuracy:.4f}")


@app.command("make-fixture")
def make_fixture_command(
        directory: Path = typer.Argument(..., help="Directory to write the fixture into"),
        seed: int = typer.Option(7, "--seed"),
):
    """Write the synthetic fixture (KBs, mapping, raw corpora and config.json)"""
    files = make_fixture(directory, seed=seed)
    typer.echo(str(files["config"]))


@app.command("config-dump")
def config_dump(
        ctx: typer.Context,
        key: Optional[str] = typer.Option(None, "--key", help="Print only this dotted key, e.g. params.k"),
):
    """Print the effective configuration as JSON"""
    manager = ctx.obj.load_config()
    if key is None:
        typer.echo(json.dumps(manager.dump(), indent=2, sort_keys=True))
        return
    value = manager.get(key, MISSING)
    if value is MISSING:
        typer.echo(f"error: unknown configuration key '{key}'", err=True)
        raise typer.Exit(code=ConfigError.exit_code)
    if isinstance(value, BaseModel):
        value = value.model_dump(mode="json")
    typer.echo(json.dumps(value, indent=2, sort_keys=True))


if __name__ == "__main__":
    app()
