"""Consumer and contributor command line: discover, run, validate, benchmark.

Exit code discipline: 0 success, 1 validation/benchmark failure, 2 I/O or
configuration error, 3 not found, 4 environment conflict (occupied port,
missing runtime). The registry index path comes from ``--registry`` or the
``HUBFORGE_REGISTRY`` environment variable.
"""

from __future__ import annotations

import json
import os
import signal
import sys
import time
from pathlib import Path

import click

from . import bench as bench_mod
from . import registry as registry_mod
from . import runtime, template, validator
from .config import config_digest, serialize_config, to_document

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_IO = 2
EXIT_NOT_FOUND = 3
EXIT_ENV = 4

DEFAULT_REGISTRY_PATH = "registry.json"


def _registry_path(value: str | None) -> str:
    return value or os.environ.get("HUBFORGE_REGISTRY", DEFAULT_REGISTRY_PATH)


def _load_index_or_exit(path: str) -> registry_mod.RegistryIndex:
    try:
        return registry_mod.load_index(path)
    except registry_mod.CorruptIndex as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)


def _get_entry_or_exit(index: registry_mod.RegistryIndex, name: str) -> registry_mod.RegistryEntry:
    try:
        return registry_mod.get_entry(index, name)
    except registry_mod.NotFound as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_NOT_FOUND)


registry_option = click.option("--registry", "registry_path", default=None, help="Registry index path.")
driver_option = click.option(
    "--driver",
    type=click.Choice(sorted(runtime.DRIVERS)),
    default="process",
    show_default=True,
    help="Container lifecycle driver.",
)


@click.group()
def main():
    """Package, register, serve, and benchmark inference models."""


@main.command("list")
@registry_option
@click.option("--task", default=None, help="Substring filter on the task field.")
@click.option("--area", default=None, help="Substring filter on the application area.")
@click.option("--data-type", default=None, help="Substring filter on the data type.")
def cmd_list(registry_path, task, area, data_type):
    """List registered models, optionally filtered."""
    index = _load_index_or_exit(_registry_path(registry_path))
    rows = registry_mod.list_models(index, task=task, application_area=area, data_type=data_type)
    headers = ("NAME", "TASK", "AREA", "DATA TYPE")
    table = [headers] + [(name, m.task, m.application_area, m.data_type) for name, m in rows]
    widths = [max(len(row[i]) for row in table) for i in range(len(headers))]
    for row in table:
        click.echo("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())


@main.command("info")
@registry_option
@click.option("--raw", is_flag=True, help="Print the full manifest document verbatim.")
@click.argument("model_name")
def cmd_info(registry_path, raw, model_name):
    """Show a model's metadata and manuscript information."""
    index = _load_index_or_exit(_registry_path(registry_path))
    entry = _get_entry_or_exit(index, model_name)
    try:
        cfg = template.load_template_config(entry.source_repo)
    except Exception as exc:
        click.echo(f"error: cannot read manifest from {entry.source_repo}: {exc}", err=True)
        sys.exit(EXIT_IO)
    if raw:
        click.echo(serialize_config(cfg))
        return
    click.echo(f"name:             {cfg.meta.name}")
    click.echo(f"id:               {cfg.id}")
    click.echo(f"task:             {cfg.meta.task}")
    click.echo(f"application area: {cfg.meta.application_area}")
    click.echo(f"data type:        {cfg.meta.data_type}")
    click.echo(f"publication:      {cfg.publication.title} ({cfg.publication.year})")
    click.echo(f"authors:          {', '.join(cfg.publication.authors)}")
    click.echo(f"source:           {cfg.publication.source}")
    click.echo(f"url:              {cfg.publication.url}")
    if cfg.publication.doi:
        click.echo(f"doi:              {cfg.publication.doi}")
    click.echo(f"license:          {cfg.legal.model_license}")
    click.echo(f"source repo:      {entry.source_repo}")


@main.command("run")
@registry_option
@driver_option
@click.option("-p", "--port", "host_port", type=int, default=None, help="Host port for the gateway.")
@click.option("--mount", "data_mount", default=None, help="Host directory mounted read-only at the data path.")
@click.argument("model_name")
def cmd_run(registry_path, driver, host_port, data_mount, model_name):
    """Start a model and serve it until interrupted."""
    index = _load_index_or_exit(_registry_path(registry_path))
    entry = _get_entry_or_exit(index, model_name)
    port = host_port or int(os.environ.get("GATEWAY_PORT", 0)) or runtime.find_free_port()
    try:
        handle = runtime.start_model(entry, host_port=port, data_mount=data_mount, driver=driver)
    except (runtime.PortInUse, runtime.DriverUnavailable) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_ENV)
    except runtime.ImageMissing as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)

    def _interrupt(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, _interrupt)
    try:
        result = runtime.await_ready(handle)
        if result != runtime.READY:
            click.echo(f"error: model failed to become ready ({result})", err=True)
            sys.exit(EXIT_ENV)
        click.echo(f"http://localhost:{port}")
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        runtime.stop(handle)


def _print_outcome(outcome: validator.ValidationOutcome) -> None:
    for check in outcome.checks:
        status = "SKIP" if check.skipped else ("PASS" if check.passed else "FAIL")
        click.echo(f"[{status}] {check.name}: {check.detail}")
    click.echo(f"result: {'passed' if outcome.passed else 'failed'}")


@main.command("validate")
@driver_option
@click.option("--report", "report_path", default=None, help="Write the machine-readable outcome to this path.")
@click.option("--no-integration", is_flag=True, help="Run only the static template checks.")
@click.argument("template_dir", type=click.Path(exists=True, file_okay=False))
def cmd_validate(driver, report_path, no_integration, template_dir):
    """Run the contribution gate over a model template."""
    outcome = validator.validate_template(
        template_dir, driver=runtime.get_driver(driver), integration=not no_integration
    )
    _print_outcome(outcome)
    if report_path:
        Path(report_path).write_text(json.dumps(outcome.to_document(), indent=2), encoding="utf-8")
    sys.exit(EXIT_OK if outcome.passed else EXIT_FAILURE)


@main.command("add")
@registry_option
@driver_option
@click.option("--source-repo", default=None, help="Locator recorded for the model's own repository.")
@click.option("--no-integration", is_flag=True, help="Gate on static checks only.")
@click.argument("template_dir", type=click.Path(exists=True, file_okay=False))
def cmd_add(registry_path, driver, source_repo, no_integration, template_dir):
    """Validate a template and insert it into the registry."""
    outcome = validator.validate_template(
        template_dir, driver=runtime.get_driver(driver), integration=not no_integration
    )
    _print_outcome(outcome)
    if not outcome.passed:
        sys.exit(EXIT_FAILURE)
    cfg = template.load_template_config(template_dir)
    entry = registry_mod.RegistryEntry(
        name=cfg.meta.name,
        source_repo=source_repo or str(Path(template_dir).resolve()),
        config_digest=config_digest(cfg),
        image_refs=runtime.plan_images(cfg).image_refs(),
        added_at=registry_mod.now_timestamp(),
        meta=registry_mod.MetaSummary(
            cfg.meta.name, cfg.meta.task, cfg.meta.application_area, cfg.meta.data_type
        ),
        sample_locators=tuple(p.name for p in template.sample_files(template_dir)),
    )
    path = _registry_path(registry_path)
    index = _load_index_or_exit(path)
    try:
        registry_mod.add_entry(index, entry, outcome)
    except registry_mod.DuplicateName as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)
    registry_mod.save_index(index, path)
    click.echo(f"added {entry.name} (config digest {entry.config_digest[:12]})")


@main.command("benchmark")
@registry_option
@driver_option
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=click.Choice(["topk", "dice"]), required=True)
@click.option("--k", type=int, default=5, show_default=True, help="Cutoff for top-k accuracy.")
@click.option("--parallel", type=int, default=1, show_default=True, help="Concurrent request degree.")
@click.option("--report", "report_path", default=None, help="Write the JSON report to this path.")
@click.argument("target")
def cmd_benchmark(registry_path, driver, manifest_path, metric, k, parallel, report_path, target):
    """Benchmark a model (registry name) or a live gateway URL."""
    try:
        manifest = bench_mod.load_manifest(manifest_path)
    except bench_mod.ManifestError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_IO)

    handle = None
    model_name = None
    if target.startswith(("http://", "https://")):
        base_url = target
    else:
        index = _load_index_or_exit(_registry_path(registry_path))
        entry = _get_entry_or_exit(index, target)
        model_name = entry.name
        port = runtime.find_free_port()
        try:
            handle = runtime.start_model(entry, host_port=port, driver=driver)
        except (runtime.PortInUse, runtime.DriverUnavailable) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ENV)
        if runtime.await_ready(handle) != runtime.READY:
            runtime.stop(handle)
            click.echo("error: model failed to become ready", err=True)
            sys.exit(EXIT_ENV)
        base_url = f"http://127.0.0.1:{port}"

    try:
        report = bench_mod.run_benchmark(
            base_url, manifest, metric, k=k, parallel=parallel, model_name=model_name
        )
    except (bench_mod.BenchAborted, bench_mod.BenchTransportError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(EXIT_FAILURE)
    finally:
        if handle is not None:
            runtime.stop(handle)

    click.echo(bench_mod.render_table([report]))
    if report_path:
        Path(report_path).write_text(json.dumps(report.to_document(), indent=2), encoding="utf-8")


@main.command("serve-model")
@click.option("--host", default="0.0.0.0", show_default=True)
@click.option("--port", type=int, default=None, help="Defaults to GATEWAY_PORT or 80.")
@click.option("--store", "store_dir", default=None, help="Artifact store directory.")
@click.option("--upload-cap", type=int, default=None, help="Upload size cap in bytes.")
@click.option("--fetch-allow", multiple=True, help="Host glob allowed for fileurl fetches.")
@click.argument("template_dir", type=click.Path(exists=True, file_okay=False))
def cmd_serve_model(host, port, store_dir, upload_cap, fetch_allow, template_dir):
    """Serve one model template over HTTP (used by the process driver)."""
    import uvicorn

    from .gateway import DEFAULT_UPLOAD_CAP, create_gateway

    port = port or int(os.environ.get("GATEWAY_PORT", 80))
    app = create_gateway(
        template_dir,
        store_dir=store_dir,
        upload_cap=upload_cap or DEFAULT_UPLOAD_CAP,
        fetch_allow=tuple(fetch_allow),
    )
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("registry-serve")
@registry_option
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8500, show_default=True)
@click.option(
    "--serve",
    "serve_map",
    multiple=True,
    help="name=url mapping announcing where a registered model's gateway runs.",
)
@click.option("--static", "static_dir", default=None, help="Directory of console assets to serve at /.")
def cmd_registry_serve(registry_path, host, port, serve_map, static_dir):
    """Serve the read-only registry facade consumed by the web console."""
    import uvicorn

    index = _load_index_or_exit(_registry_path(registry_path))
    gateway_urls = {}
    for mapping in serve_map:
        if "=" not in mapping:
            click.echo(f"error: --serve expects name=url, got {mapping!r}", err=True)
            sys.exit(EXIT_IO)
        name, url = mapping.split("=", 1)
        gateway_urls[name] = url
    app = create_registry_app(index, gateway_urls, static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def create_registry_app(index: registry_mod.RegistryIndex, gateway_urls=None, static_dir=None):
    """Read-only HTTP facade over a registry index."""
    from fastapi import FastAPI
    from fastapi.responses import FileResponse, JSONResponse

    gateway_urls = gateway_urls or {}
    app = FastAPI(title="hubforge registry")

    def _projection(name: str, meta: registry_mod.MetaSummary) -> dict:
        return {
            "name": name,
            "task": meta.task,
            "application_area": meta.application_area,
            "data_type": meta.data_type,
            "gateway_url": gateway_urls.get(name),
        }

    @app.get("/registry/models")
    def models(task: str | None = None, area: str | None = None, data_type: str | None = None):
        rows = registry_mod.list_models(index, task=task, application_area=area, data_type=data_type)
        return {"models": [_projection(name, meta) for name, meta in rows]}

    @app.get("/registry/models/{name}")
    def model(name: str):
        try:
            entry = registry_mod.get_entry(index, name)
        except registry_mod.NotFound as exc:
            return JSONResponse({"error": "not_found", "message": str(exc)}, status_code=404)
        doc = {
            "name": entry.name,
            "source_repo": entry.source_repo,
            "config_digest": entry.config_digest,
            "image_refs": list(entry.image_refs),
            "added_at": entry.added_at,
            "meta": _projection(entry.name, entry.meta),
            "sample_locators": list(entry.sample_locators),
        }
        return doc

    if static_dir:
        static_root = Path(static_dir)

        @app.get("/")
        def console_index():
            return FileResponse(static_root / "index.html")

        @app.get("/assets/{name:path}")
        def console_assets(name: str):
            path = (static_root / name).resolve()
            if static_root.resolve() not in path.parents or not path.is_file():
                return JSONResponse({"error": "not_found", "message": name}, status_code=404)
            return FileResponse(path)

    return app


if __name__ == "__main__":
    main()
