"""Headless driver: validate, run, cache management, and serving."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .executor import Engine, SampleSpec, table_to_jsonl
from .gateway import (Gateway, HttpProvider, MockProvider, NullProvider,
                      ProviderError, load_mock_rules)
from .model import load_dataset
from .spec import pipeline_from_yaml, validate_pipeline
from .viz import render_text_chart, viz_specs_for_rows


def _fail(message: str, code: int = 1) -> None:
    print(json.dumps({"error": message}), file=sys.stderr)
    sys.exit(code)


def _build_gateway(mock: str | None) -> Gateway:
    if mock:
        return Gateway(MockProvider(load_mock_rules(mock)))
    if os.environ.get("SEMFORGE_LLM_BASE_URL"):
        return Gateway(HttpProvider())
    return Gateway(NullProvider())


@click.group()
def main() -> None:
    """Semantic data-processing pipelines over document collections."""


@main.command()
@click.argument("pipeline_file", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True), default=None,
              help="Dataset file; enables attribute-existence checks.")
def validate(pipeline_file: str, data_path: str | None) -> None:
    """Exit 0 iff the pipeline has no diagnostics."""
    try:
        pipeline = pipeline_from_yaml(Path(pipeline_file).read_text(encoding="utf-8"))
    except Exception as e:
        _fail(f"unparseable pipeline: {e}")
    attrs = None
    if data_path:
        attrs = load_dataset(data_path).attribute_names()
    diagnostics = validate_pipeline(pipeline, attrs)
    for d in diagnostics:
        click.echo(str(d))
    if diagnostics:
        _fail(f"{len(diagnostics)} diagnostic(s)")
    click.echo("ok")


@main.command()
@click.argument("pipeline_file", type=click.Path(exists=True))
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--sample", type=int, default=None, help="Run on the first N documents.")
@click.option("--fresh", is_flag=True, help="Bypass the cache and recompute everything.")
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Write per-op rows.jsonl, viz.json, and run.json here.")
@click.option("--max-parallel", type=int, default=10)
@click.option("--mock", "mock_rules", type=click.Path(exists=True), default=None,
              help="Mock provider rules for offline, deterministic runs.")
@click.option("--cache-dir", type=click.Path(), default=None)
def run(pipeline_file: str, data_path: str, sample: int | None, fresh: bool,
        out_dir: str | None, max_parallel: int, mock_rules: str | None,
        cache_dir: str | None) -> None:
    """Execute a pipeline; prints per-op selectivity (e.g. 10 in → 47 out, 4.70×)."""
    try:
        pipeline = pipeline_from_yaml(Path(pipeline_file).read_text(encoding="utf-8"))
    except Exception as e:
        _fail(f"unparseable pipeline: {e}")
    dataset = load_dataset(data_path, dataset_id=pipeline.dataset_id)
    diagnostics = validate_pipeline(pipeline, dataset.attribute_names())
    if diagnostics:
        for d in diagnostics:
            click.echo(str(d), err=True)
        _fail(f"{len(diagnostics)} diagnostic(s)")
    gateway = _build_gateway(mock_rules)
    engine = Engine(gateway, cache_dir=cache_dir, max_parallel=max_parallel)
    sample_spec = SampleSpec(sample) if sample else None
    result = engine.execute(pipeline, dataset, sample=sample_spec, fresh=fresh)

    for name, st in result.op_stats.items():
        cached = " (cached)" if st.cached else ""
        click.echo(f"{name}: {st.selectivity_display()}{cached}")

    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, docs in result.tables.items():
            op_dir = out / name
            op_dir.mkdir(exist_ok=True)
            (op_dir / "rows.jsonl").write_text(table_to_jsonl(docs), encoding="utf-8")
            rows = [d.attrs for d in docs]
            specs = viz_specs_for_rows(rows)
            (op_dir / "viz.json").write_text(
                json.dumps([s.to_obj() for s in specs], ensure_ascii=False, indent=2),
                encoding="utf-8")
        (out / "run.json").write_text(
            json.dumps({"run_id": result.run_id,
                        "events": [e.to_obj() for e in result.events]},
                       ensure_ascii=False, indent=2),
            encoding="utf-8")
        click.echo(f"artifacts written to {out}")

    final = result.final_docs()
    if final:
        specs = viz_specs_for_rows([d.attrs for d in final])
        for spec in specs:
            if spec.chart != "none":
                click.echo(render_text_chart(spec))


@main.group()
def cache() -> None:
    """Cache maintenance."""


@cache.command("gc")
@click.option("--max-bytes", type=int, required=True)
@click.option("--cache-dir", type=click.Path(), default=None)
def cache_gc(max_bytes: int, cache_dir: str | None) -> None:
    """Evict least-recently-used cache entries until under the budget."""
    from .cache import DiskCache

    root = cache_dir or os.environ.get("SEMFORGE_CACHE_DIR", ".semforge-cache")
    store = DiskCache(root)
    evicted = store.gc(max_bytes)
    click.echo(f"evicted {evicted} entries; {store.total_bytes()} bytes in use")


@main.command()
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--workspace", "workspace_dir", type=click.Path(), default=".semforge")
@click.option("--mock", "mock_rules", type=click.Path(exists=True), default=None)
@click.option("--max-parallel", type=int, default=10)
def serve(port: int, host: str, workspace_dir: str, mock_rules: str | None,
          max_parallel: int) -> None:
    """Start the workbench server."""
    import uvicorn

    from .server import Workspace, create_app

    gateway = _build_gateway(mock_rules)
    engine = Engine(gateway, cache_dir=Path(workspace_dir) / "cache",
                    max_parallel=max_parallel)
    ws = Workspace(workspace_dir, engine)
    uvicorn.run(create_app(ws), host=host, port=port)


if __name__ == "__main__":
    main()
