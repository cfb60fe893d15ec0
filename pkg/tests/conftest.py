"""Shared fixtures: shipped templates, broken-template corpus, live gateways."""

from __future__ import annotations

import contextlib
import json
import shutil
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from hubforge import runtime

REPO_ROOT = Path(__file__).resolve().parent.parent
TEMPLATES_DIR = REPO_ROOT / "templates"

SHIPPED_TEMPLATES = (
    "stub-identity-image",
    "stub-constant-classifier",
    "stub-threshold-mask",
    "stub-mean-vector",
)

CRASHING_BACKEND = '''\
class CrashingBackend:
    def initialize(self, config):
        raise RuntimeError("weights incompatible with declared architecture")

    def load_weights(self, locator):
        pass

    def infer(self, arr):
        return arr


def create_backend():
    return CrashingBackend()
'''

MISMATCH_BACKEND = '''\
from hubforge.backends import MeanVectorBackend


def create_backend():
    return MeanVectorBackend()
'''

# kind -> (mutation, check expected to fail)
BROKEN_KINDS = {
    "missing_license": "legal.model_license",
    "bad_config": "config.parses",
    "output_type_mismatch": "output_type.match",
    "crashing_backend": "integration.start",
    "missing_weights": "template.weights",
    "inverted_dim_limits": "config.valid",
    "absent_env_recipe": "template.env_recipe",
    "sample_without_license": "legal.sample_data_license",
}


def template_path(name: str) -> Path:
    return TEMPLATES_DIR / name


def make_broken_template(kind: str, dest_root: Path) -> Path:
    """Copy the complete classifier template and break it one named way."""
    source = template_path("stub-constant-classifier")
    dest = dest_root / f"broken-{kind.replace('_', '-')}"
    shutil.copytree(source, dest)
    if kind == "missing_license":
        (dest / "LICENSE").unlink()
    elif kind == "bad_config":
        (dest / "config.json").write_text("{ not json at all", encoding="utf-8")
    elif kind == "output_type_mismatch":
        (dest / "backend.py").write_text(MISMATCH_BACKEND, encoding="utf-8")
    elif kind == "crashing_backend":
        (dest / "backend.py").write_text(CRASHING_BACKEND, encoding="utf-8")
    elif kind == "missing_weights":
        (dest / "weights.json").unlink()
    elif kind == "inverted_dim_limits":
        doc = json.loads((dest / "config.json").read_text(encoding="utf-8"))
        doc["io_spec"]["dim_limits"] = [[[512, 64], [1, 4096], [1, 4]]]
        (dest / "config.json").write_text(json.dumps(doc, indent=2), encoding="utf-8")
    elif kind == "absent_env_recipe":
        (dest / "Dockerfile").unlink()
    elif kind == "sample_without_license":
        (dest / "SAMPLE_LICENSE").unlink()
    else:
        raise ValueError(f"unknown broken kind {kind!r}")
    return dest


def write_png(path: Path, pixels: np.ndarray) -> Path:
    Image.fromarray(pixels).save(path)
    return path


def white_png(path: Path, height: int = 2, width: int = 2) -> Path:
    return write_png(path, np.full((height, width, 3), 255, dtype=np.uint8))


@contextlib.contextmanager
def started_gateway(template_dir: Path):
    """Start a template under the process driver; yields (base_url, handle)."""
    from hubforge import registry, template
    from hubforge.config import config_digest

    cfg = template.load_template_config(template_dir)
    entry = registry.RegistryEntry(
        name=cfg.meta.name,
        source_repo=str(template_dir),
        config_digest=config_digest(cfg),
        image_refs=runtime.plan_images(cfg).image_refs(),
        added_at=registry.now_timestamp(),
        meta=registry.MetaSummary(
            cfg.meta.name, cfg.meta.task, cfg.meta.application_area, cfg.meta.data_type
        ),
        sample_locators=tuple(str(p) for p in template.sample_files(template_dir)),
    )
    port = runtime.find_free_port()
    handle = runtime.start_model(entry, host_port=port, driver="process")
    try:
        result = runtime.await_ready(handle, timeout_ms=30000)
        assert result == runtime.READY, f"gateway for {template_dir.name} reported {result}"
        yield f"http://127.0.0.1:{port}", handle
    finally:
        runtime.stop(handle)


@pytest.fixture(scope="session")
def classifier_gateway():
    with started_gateway(template_path("stub-constant-classifier")) as (url, _):
        yield url


@pytest.fixture(scope="session")
def mask_gateway():
    with started_gateway(template_path("stub-threshold-mask")) as (url, _):
        yield url


@pytest.fixture()
def populated_registry(tmp_path):
    """Registry index over all shipped templates, gated on static checks."""
    from hubforge import registry, template, validator
    from hubforge.config import config_digest

    index = registry.RegistryIndex()
    for name in SHIPPED_TEMPLATES:
        tdir = template_path(name)
        cfg = template.load_template_config(tdir)
        outcome = validator.check_template(tdir)
        entry = registry.RegistryEntry(
            name=cfg.meta.name,
            source_repo=str(tdir),
            config_digest=config_digest(cfg),
            image_refs=runtime.plan_images(cfg).image_refs(),
            added_at=registry.now_timestamp(),
            meta=registry.MetaSummary(
                cfg.meta.name, cfg.meta.task, cfg.meta.application_area, cfg.meta.data_type
            ),
            sample_locators=tuple(p.name for p in template.sample_files(tdir)),
        )
        registry.add_entry(index, entry, outcome)
    path = tmp_path / "registry.json"
    registry.save_index(index, path)
    return path


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    results: dict[str, bool] = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            ok = outcome == "passed" and report.when == "call"
            if report.when != "call" and outcome == "passed":
                continue
            results[name] = results.get(name, True) and ok
    if results:
        terminalreporter.write_sep("-", "acceptance criteria")
        for name in sorted(results):
            terminalreporter.write_line(f"[{'PASS' if results[name] else 'FAIL'}] {name}")
