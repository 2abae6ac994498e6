"""Command-line interface.

Batch work (selection runs, evaluation, audits, reports) executes the core
library directly on local files; `serve` starts the HTTP service for
per-query use. Exit codes: 0 success, 1 data error, 2 configuration or
usage error.
"""

from __future__ import annotations

import os
import sys
from typing import Optional

import click

from .completion import EndpointConfig, complete_prompts
from .errors import ConfigError, DataError
from .harness import (
    ExperimentConfig,
    compare_report,
    coverage_audit,
    evaluate_predictions,
    run_selection,
)
from .terms import TermScheme

METRIC_CHOICES = ("cosine", "bm25", "bsr", "bsp", "bsf1")
SELECTOR_CHOICES = ("independent", "set_greedy", "random")
ORDERING_CHOICES = ("by_instance_score", "selection_order")


def _abspath(value: Optional[str]) -> Optional[str]:
    return os.path.abspath(value) if value is not None else None


@click.group()
def cli() -> None:
    """Coverage-based demonstration selection for in-context learning."""


@cli.command("select")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="TOML or JSON experiment config; flags override its fields.")
@click.option("--pool", type=click.Path(), default=None, help="Candidate pool jsonl.")
@click.option("--test", "test_path", type=click.Path(), default=None,
              help="Test split jsonl.")
@click.option("--out", "output_dir", type=click.Path(), default=None,
              help="Run directory for selections.jsonl / prompts.jsonl / run.json.")
@click.option("--metric", type=click.Choice(METRIC_CHOICES), default=None)
@click.option("--terms", default=None,
              help="Term scheme for bm25: unigram, <n>gram, or <s>depst.")
@click.option("--k1", type=float, default=None, help="BM25 saturation parameter.")
@click.option("--b", type=float, default=None, help="BM25 length normalization.")
@click.option("--idf-weights", type=bool, default=None,
              help="Weight BERTScore tokens by inverse document frequency.")
@click.option("--candidate-text", type=click.Choice(["input_only", "input_plus_output"]),
              default=None)
@click.option("--selector", type=click.Choice(SELECTOR_CHOICES), default=None)
@click.option("--k", type=int, default=None, help="Demonstrations per test instance.")
@click.option("--seed", type=int, default=None)
@click.option("--ordering", type=click.Choice(ORDERING_CHOICES), default=None)
@click.option("--embeddings", "embeddings_dir", type=click.Path(), default=None,
              help="Embedding container directory (cosine/bsr/bsp/bsf1).")
@click.option("--parses", "parses_path", type=click.Path(), default=None,
              help="Dependency parses jsonl (subtree terms).")
@click.option("--templates", "templates_path", type=click.Path(), default=None,
              help="templates.json with per-dataset prompt patterns.")
@click.option("--dataset", default=None, help="Template key inside --templates.")
@click.option("--budget", type=int, default=None,
              help="Context budget in counter units.")
@click.option("--budget-counter", type=click.Choice(["whitespace_tokens", "characters"]),
              default=None)
@click.option("--subsample", type=int, default=None,
              help="Evaluate on a seeded sample of this many test instances.")
@click.option("--workers", type=int, default=None)
def select_cmd(config_path, pool, test_path, output_dir, metric, terms, k1, b,
               idf_weights, candidate_text, selector, k, seed, ordering,
               embeddings_dir, parses_path, templates_path, dataset, budget,
               budget_counter, subsample, workers) -> None:
    """Run demonstration selection over a test split."""
    raw: dict = {}
    base_dir = None
    if config_path is not None:
        from pathlib import Path
        import json as _json
        path = Path(config_path)
        if path.suffix == ".toml":
            if sys.version_info >= (3, 11):
                import tomllib
            else:
                import tomli as tomllib
            try:
                with open(path, "rb") as fh:
                    raw = tomllib.load(fh)
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        elif path.suffix == ".json":
            try:
                raw = _json.loads(path.read_text(encoding="utf-8"))
            except (OSError, _json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        else:
            raise ConfigError(f"config file {path} must end in .toml or .json")
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must hold an object")
        base_dir = path.parent

    m = raw.get("metric", {"kind": "bm25"})
    if isinstance(m, str):
        m = {"kind": m}
    m = dict(m)
    for key, value in (("kind", metric), ("terms", terms), ("k1", k1), ("b", b),
                       ("idf_weights", idf_weights), ("candidate_text", candidate_text)):
        if value is not None:
            m[key] = value
    raw["metric"] = m

    overrides = {
        "pool_path": _abspath(pool),
        "test_path": _abspath(test_path),
        "output_dir": _abspath(output_dir),
        "selector": selector,
        "k": k,
        "seed": seed,
        "ordering": ordering,
        "embeddings_dir": _abspath(embeddings_dir),
        "parses_path": _abspath(parses_path),
        "templates_path": _abspath(templates_path),
        "dataset": dataset,
        "subsample": subsample,
        "workers": workers,
    }
    for key, value in overrides.items():
        if value is not None:
            raw[key] = value
    if budget is not None or budget_counter is not None:
        entry = dict(raw.get("budget", {}))
        if budget is not None:
            entry["max_units"] = budget
        if budget_counter is not None:
            entry["counter"] = budget_counter
        raw["budget"] = entry

    config = ExperimentConfig.from_dict(raw, base_dir=base_dir)
    report = run_selection(config)
    click.echo(
        f"{report.method}: selected for {report.n_test} test instances "
        f"in {report.elapsed_s:.2f}s -> {config.output_dir}"
    )
    if report.set_score_mean is not None:
        click.echo(f"mean set coverage: {report.set_score_mean:.4f}")


@cli.command("eval")
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False),
              help="predictions.jsonl with test_id and prediction fields.")
def eval_cmd(run_dir, predictions) -> None:
    """Exact-match predictions against a run's references."""
    result = evaluate_predictions(run_dir, predictions)
    click.echo(
        f"exact match: {result['n_correct']}/{result['n']} = {result['em_rate']:.4f}"
    )


@cli.command("coverage")
@click.option("--run-dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--schemes", default="unigram",
              help="Comma-separated term schemes, e.g. unigram,4gram,4depst.")
def coverage_cmd(run_dir, schemes) -> None:
    """Audit substructure recall of a run's selections."""
    parsed = [TermScheme.parse(s.strip()) for s in schemes.split(",") if s.strip()]
    result = coverage_audit(run_dir, parsed)
    for name, value in result["recalls"].items():
        click.echo(f"recall[{name}]: {value:.4f}")


@cli.command("report")
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Also write the table as CSV to this path.")
def report_cmd(run_dirs, csv_path) -> None:
    """Compare runs that share a test split."""
    text, csv_text = compare_report(list(run_dirs))
    click.echo(text, nl=False)
    if csv_path is not None:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(csv_text)
        click.echo(f"csv written to {csv_path}")


@cli.command("complete")
@click.option("--prompts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path())
@click.option("--endpoint", required=True, help="Completions endpoint URL.")
@click.option("--model", required=True)
@click.option("--max-tokens", type=int, default=256, show_default=True)
@click.option("--temperature", type=float, default=0.0, show_default=True)
@click.option("--timeout", type=float, default=60.0, show_default=True)
@click.option("--max-retries", type=int, default=3, show_default=True)
def complete_cmd(prompts, out, endpoint, model, max_tokens, temperature, timeout,
                 max_retries) -> None:
    """Send rendered prompts to a completions endpoint.

    Credentials come from the DEMOSELECT_API_KEY environment variable.
    """
    config = EndpointConfig(
        url=endpoint, model=model, max_tokens=max_tokens,
        temperature=temperature, timeout_s=timeout, max_retries=max_retries,
    )
    n = complete_prompts(prompts, out, config)
    click.echo(f"{n} predictions written to {out}")


@cli.command("serve")
@click.option("--pool", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--embeddings", "embeddings_dir",
              type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--parses", "parses_path", type=click.Path(exists=True, dir_okay=False),
              default=None)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve_cmd(pool, test_path, embeddings_dir, parses_path, host, port) -> None:
    """Start the HTTP selection service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    app = create_app(ServiceConfig(
        pool_path=pool, test_path=test_path,
        embeddings_dir=embeddings_dir, parses_path=parses_path,
    ))
    uvicorn.run(app, host=host, port=port)


def main() -> None:
    try:
        cli.main(standalone_mode=True)
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
