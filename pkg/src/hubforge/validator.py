"""The contribution gate: static template checks plus live endpoint tests.

A template enters the registry only after both phases pass. Static checks
inspect the directory (build recipe, weights, licenses, manifest, backend
entry points); integration checks start the model under a driver and assert
the endpoint contract against the running instance, stopping it regardless
of outcome. Check names are stable dotted identifiers for machine-readable
CI output.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import requests as requests_lib

from . import registry as registry_mod
from . import runtime, template
from .config import (
    ConfigError,
    MANIFEST_FILENAME,
    config_digest,
    validate_config,
)

INTEGRATION_TIMEOUT_MS = 20000


class StartFailure(Exception):
    """The model instance never became ready under the driver."""

    def __init__(self, detail: str):
        super().__init__(f"model failed to start: {detail}")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    skipped: bool = False


@dataclass(frozen=True)
class ValidationOutcome:
    checks: tuple[CheckResult, ...] = ()

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def named(self, name: str) -> CheckResult:
        for check in self.checks:
            if check.name == name:
                return check
        raise KeyError(name)

    def to_document(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail, "skipped": c.skipped}
                for c in self.checks
            ],
        }


@dataclass
class _Collector:
    checks: list[CheckResult] = field(default_factory=list)

    def record(self, name: str, passed: bool, detail: str = "") -> bool:
        self.checks.append(CheckResult(name, passed, detail))
        return passed

    def skip(self, name: str, detail: str) -> None:
        self.checks.append(CheckResult(name, True, detail, skipped=True))

    def outcome(self) -> ValidationOutcome:
        return ValidationOutcome(tuple(self.checks))


def check_template(template_dir) -> ValidationOutcome:
    """Static checks over the template directory; failures are data."""
    root = Path(template_dir)
    out = _Collector()

    out.record(
        "template.env_recipe",
        (root / template.ENV_RECIPE).is_file(),
        f"{template.ENV_RECIPE} present" if (root / template.ENV_RECIPE).is_file() else f"{template.ENV_RECIPE} missing",
    )
    weights = template.weights_files(root)
    out.record(
        "template.weights",
        bool(weights),
        f"found {weights[0].name}" if weights else "no weights.* file",
    )
    out.record(
        "legal.model_license",
        (root / template.LICENSE_FILE).is_file(),
        "license file present" if (root / template.LICENSE_FILE).is_file() else f"{template.LICENSE_FILE} missing",
    )

    cfg = None
    try:
        cfg = template.load_template_config(root)
        out.record("config.parses", True, "manifest parsed")
    except FileNotFoundError:
        out.record("config.parses", False, f"{MANIFEST_FILENAME} missing")
    except ConfigError as exc:
        out.record("config.parses", False, str(exc))

    if cfg is None:
        out.skip("config.valid", "not evaluated: manifest did not parse")
    else:
        report = validate_config(cfg)
        out.record(
            "config.valid",
            report.ok,
            "manifest valid" if report.ok else "; ".join(f"{v.rule} ({v.path})" for v in report.violations),
        )

    try:
        template.resolve_backend_factory(root)
        out.record("backend.entry_points", True, "create_backend resolvable")
    except template.BackendResolutionError as exc:
        out.record("backend.entry_points", False, str(exc))

    samples = template.sample_files(root)
    has_sample_license = (root / template.SAMPLE_LICENSE_FILE).is_file()
    if bool(samples) == has_sample_license:
        out.record(
            "legal.sample_data_license",
            True,
            "sample license present" if samples else "no samples, no sample license",
        )
    elif samples:
        out.record("legal.sample_data_license", False, "sample data present without a sample data license")
    else:
        out.record("legal.sample_data_license", False, "sample data license present without sample data")

    return out.outcome()


def _endpoint(base: str, path: str) -> str:
    return base.rstrip("/") + path


def run_integration(template_dir, driver=None, timeout_ms: int = INTEGRATION_TIMEOUT_MS) -> ValidationOutcome:
    """Start the template and exercise the live endpoint contract.

    Raises :class:`StartFailure` when the instance never becomes ready; the
    instance is stopped regardless of outcome.
    """
    root = Path(template_dir)
    cfg = template.load_template_config(root)
    driver = driver or runtime.ProcessDriver()
    port = runtime.find_free_port()
    entry = registry_mod.RegistryEntry(
        name=cfg.meta.name,
        source_repo=str(root),
        config_digest=config_digest(cfg),
        image_refs=runtime.plan_images(cfg).image_refs(),
        added_at=registry_mod.now_timestamp(),
        meta=registry_mod.MetaSummary(cfg.meta.name, cfg.meta.task, cfg.meta.application_area, cfg.meta.data_type),
        sample_locators=tuple(str(p) for p in template.sample_files(root)),
    )
    handle = runtime.start_model(entry, host_port=port, driver=driver)
    try:
        result = runtime.await_ready(handle, timeout_ms=timeout_ms)
        if result != runtime.READY:
            raise StartFailure(f"instance reported {result} within {timeout_ms} ms")
        return _exercise_endpoints(f"http://127.0.0.1:{port}", cfg, root)
    finally:
        runtime.stop(handle)


def _exercise_endpoints(base: str, cfg, root: Path) -> ValidationOutcome:
    out = _Collector()

    response = requests_lib.get(_endpoint(base, "/api/get_config"), timeout=10)
    if out.record("endpoint.get_config", response.status_code == 200, f"status {response.status_code}"):
        from .config import parse_config

        reparsed = parse_config(json.dumps(response.json()))
        out.record(
            "endpoint.get_config.roundtrip",
            config_digest(reparsed) == config_digest(cfg),
            "response reparses to the template manifest",
        )

    response = requests_lib.get(_endpoint(base, "/api/get_legal"), timeout=10)
    out.record("endpoint.get_legal", response.status_code == 200, f"status {response.status_code}")

    response = requests_lib.get(_endpoint(base, "/api/get_model_files"), timeout=30)
    if out.record("endpoint.get_model_files", response.status_code == 200, f"status {response.status_code}"):
        with zipfile.ZipFile(io.BytesIO(response.content)) as archive:
            out.record(
                "endpoint.get_model_files.contains_config",
                MANIFEST_FILENAME in archive.namelist(),
                "archive contains the manifest",
            )

    response = requests_lib.get(_endpoint(base, "/api/get_samples"), timeout=10)
    out.record("endpoint.get_samples", response.status_code == 200, f"status {response.status_code}")

    samples = template.sample_files(root)
    declared_type = cfg.io_spec.output_decls[0].type
    if not samples:
        out.skip("endpoint.predict_sample", "template has no samples")
        out.skip("output_type.match", "template has no samples")
        out.skip("endpoint.predict", "template has no samples")
        return out.outcome()

    response = requests_lib.get(_endpoint(base, "/api/predict_sample"), params={"index": 0}, timeout=30)
    sample_envelope = None
    if out.record("endpoint.predict_sample", response.status_code == 200, f"status {response.status_code}"):
        sample_envelope = response.json()
        out.record(
            "output_type.match",
            sample_envelope["output"]["type"] == declared_type,
            f"declared {declared_type}, got {sample_envelope['output']['type']}",
        )
    else:
        detail = ""
        try:
            detail = response.json().get("message", "")
        except ValueError:
            pass
        out.record("output_type.match", False, f"predict_sample failed: {detail}")

    first = samples[0]
    with open(first, "rb") as fh:
        response = requests_lib.post(
            _endpoint(base, "/api/predict"), files={"file": (first.name, fh)}, timeout=30
        )
    if out.record("endpoint.predict", response.status_code == 200, f"status {response.status_code}"):
        if sample_envelope is not None:
            uploaded = response.json()
            out.record(
                "endpoint.predict.roundtrip",
                uploaded["output"] == sample_envelope["output"],
                "uploading the first sample reproduces the sample prediction",
            )
    return out.outcome()


def validate_template(template_dir, driver=None, integration: bool = True) -> ValidationOutcome:
    """Full gate: static checks, then (when they pass) the live integration run."""
    static = check_template(template_dir)
    if not integration:
        return static
    checks = list(static.checks)
    if not static.passed:
        checks.append(CheckResult("integration.start", True, "not attempted: static checks failed", skipped=True))
        return ValidationOutcome(tuple(checks))
    try:
        live = run_integration(template_dir, driver=driver)
        checks.append(CheckResult("integration.start", True, "instance became ready"))
        checks.extend(live.checks)
    except StartFailure as exc:
        checks.append(CheckResult("integration.start", False, str(exc)))
    return ValidationOutcome(tuple(checks))
