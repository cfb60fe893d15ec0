"""Image stack planning and model container lifecycle under pluggable drivers.

Images are planned as a stack of three or four layers — base OS, model
runtime environment, hub engine, optional self-contained deployment — where
the model-environment layer is keyed by a digest of its environment manifest
so identical runtimes are reused across models.

Lifecycle is tracked by :class:`ContainerHandle` with a strict transition
table. Two drivers are provided: ``process`` launches the gateway as a
supervised local process (no container engine needed), ``engine`` shells out
to the host container CLI with a fixed argv contract.
"""

from __future__ import annotations

import hashlib
import json
import shutil
import socket
import subprocess
import sys
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import requests as requests_lib

from .config import ModelConfig
from .registry import RegistryEntry

TEMPLATE_MOUNT = "/model"
DATA_MOUNT = "/data"
CONTAINER_PORT = 80
DEFAULT_REGISTRY_NAME = "hubforge"


class LifecycleError(Exception):
    pass


class DriverUnavailable(LifecycleError):
    def __init__(self, tag: str, detail: str = ""):
        self.tag = tag
        super().__init__(f"driver {tag!r} unavailable" + (f": {detail}" if detail else ""))


class PortInUse(LifecycleError):
    def __init__(self, port: int):
        self.port = port
        super().__init__(f"host port {port} is already in use")


class ImageMissing(LifecycleError):
    def __init__(self, what: str):
        super().__init__(f"model source unavailable: {what}")


class IllegalTransition(LifecycleError):
    def __init__(self, current: str, target: str):
        super().__init__(f"illegal container state transition {current} -> {target}")


# ---------------------------------------------------------------------------
# Image planning
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvManifest:
    """Runtime requirements for the model-environment layer."""

    base_image: str = "python:3.11-slim"
    requirements: tuple[str, ...] = ()


DEFAULT_ENV = EnvManifest()


@dataclass(frozen=True)
class ImageLayer:
    name: str
    parent: str | None
    build_inputs: tuple[str, ...]


@dataclass(frozen=True)
class ImagePlan:
    layers: tuple[ImageLayer, ...]

    def image_refs(self) -> tuple[str, ...]:
        return tuple(layer.name for layer in self.layers)

    @property
    def run_image(self) -> str:
        """The image a consumer runs: deployment when present, else hub_env."""
        return self.layers[-1].name


def env_digest(env: EnvManifest) -> str:
    doc = json.dumps({"base_image": env.base_image, "requirements": sorted(env.requirements)}, sort_keys=True)
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()


def _model_slug(cfg: ModelConfig) -> str:
    return cfg.meta.name.lower().replace(" ", "-")


def plan_images(
    cfg: ModelConfig,
    env: EnvManifest = DEFAULT_ENV,
    deployment_sources: tuple[str, ...] | None = None,
    registry_name: str = DEFAULT_REGISTRY_NAME,
) -> ImagePlan:
    """Plan the layer stack for one model.

    The model-environment layer is named by the manifest digest, not the
    model, so two models with identical manifests share the same layer
    reference. Passing ``deployment_sources`` appends a fourth layer that
    embeds the model source file list for a fully self-contained image.
    """
    slug = _model_slug(cfg)
    base = ImageLayer(name=env.base_image, parent=None, build_inputs=(f"pull:{env.base_image}",))
    model_env = ImageLayer(
        name=f"{registry_name}/runtime-env:{env_digest(env)[:12]}",
        parent=base.name,
        build_inputs=tuple(env.requirements),
    )
    hub_env = ImageLayer(
        name=f"{registry_name}/{slug}:hub_env",
        parent=model_env.name,
        build_inputs=("hubforge-engine",),
    )
    layers = [base, model_env, hub_env]
    if deployment_sources is not None:
        layers.append(
            ImageLayer(
                name=f"{registry_name}/{slug}:deployment",
                parent=hub_env.name,
                build_inputs=tuple(sorted(deployment_sources)),
            )
        )
    return ImagePlan(tuple(layers))


# ---------------------------------------------------------------------------
# Container handles
# ---------------------------------------------------------------------------

CREATED = "created"
STARTING = "starting"
READY = "ready"
STOPPED = "stopped"
FAILED = "failed"

LEGAL_TRANSITIONS: dict[str, frozenset[str]] = {
    CREATED: frozenset({STARTING}),
    STARTING: frozenset({READY, FAILED, STOPPED}),
    READY: frozenset({STOPPED}),
    FAILED: frozenset({STOPPED}),
    STOPPED: frozenset(),
}


@dataclass
class ContainerHandle:
    id: str
    driver: str
    state: str = CREATED
    port_map: dict[int, int] = field(default_factory=dict)
    mounts: list[tuple[str, str]] = field(default_factory=list)
    runtime_info: dict = field(default_factory=dict)

    def transition(self, target: str) -> None:
        if target == self.state == STOPPED:
            return  # stop is idempotent
        if target not in LEGAL_TRANSITIONS[self.state]:
            raise IllegalTransition(self.state, target)
        self.state = target

    @property
    def host_port(self) -> int:
        return next(iter(self.port_map), 0)


# Handles created through start_model, for post-run cleanup audits.
_ACTIVE_HANDLES: list[ContainerHandle] = []


def active_handles() -> list[ContainerHandle]:
    return [h for h in _ACTIVE_HANDLES if h.state not in (STOPPED,)]


def reset_handle_audit() -> None:
    _ACTIVE_HANDLES.clear()


# ---------------------------------------------------------------------------
# Drivers
# ---------------------------------------------------------------------------


class ProcessDriver:
    """Runs the gateway as a supervised local process; no container engine."""

    tag = "process"

    def available(self) -> bool:
        return True

    def launch(self, handle: ContainerHandle, source_dir: str, host_port: int) -> None:
        argv = [
            sys.executable,
            "-m",
            "hubforge.cli",
            "serve-model",
            source_dir,
            "--host",
            "127.0.0.1",
            "--port",
            str(host_port),
        ]
        process = subprocess.Popen(
            argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL
        )
        handle.runtime_info["process"] = process

    def health(self, handle: ContainerHandle) -> dict | None:
        try:
            response = requests_lib.get(
                f"http://127.0.0.1:{handle.host_port}/health", timeout=1.0
            )
            return response.json()
        except (requests_lib.RequestException, ValueError):
            return None

    def terminate(self, handle: ContainerHandle) -> None:
        process = handle.runtime_info.get("process")
        if process is None or process.poll() is not None:
            return
        process.terminate()
        try:
            process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait()


def engine_run_argv(
    binary: str, image: str, host_port: int, template_dir: str, data_mount: str | None
) -> list[str]:
    """Fixed argv contract for running a model under the host container CLI."""
    argv = [
        binary,
        "run",
        "--detach",
        "--rm",
        "-p",
        f"{host_port}:{CONTAINER_PORT}",
        "-v",
        f"{template_dir}:{TEMPLATE_MOUNT}:ro",
    ]
    if data_mount:
        argv += ["-v", f"{data_mount}:{DATA_MOUNT}:ro"]
    argv.append(image)
    return argv


class EngineDriver:
    """Delegates lifecycle to the host container CLI (docker-compatible)."""

    tag = "engine"

    def __init__(self, binary: str = "docker"):
        self.binary = binary

    def available(self) -> bool:
        return shutil.which(self.binary) is not None

    def launch(self, handle: ContainerHandle, source_dir: str, host_port: int) -> None:
        image = handle.runtime_info["image"]
        data_mount = handle.runtime_info.get("data_mount")
        argv = engine_run_argv(self.binary, image, host_port, source_dir, data_mount)
        container_id = subprocess.check_output(argv, text=True).strip()
        handle.runtime_info["container_id"] = container_id

    def health(self, handle: ContainerHandle) -> dict | None:
        try:
            response = requests_lib.get(
                f"http://127.0.0.1:{handle.host_port}/health", timeout=1.0
            )
            return response.json()
        except (requests_lib.RequestException, ValueError):
            return None

    def terminate(self, handle: ContainerHandle) -> None:
        container_id = handle.runtime_info.get("container_id")
        if container_id:
            subprocess.run([self.binary, "stop", container_id], capture_output=True)


DRIVERS = {"process": ProcessDriver, "engine": EngineDriver}


def get_driver(tag: str):
    if tag not in DRIVERS:
        raise DriverUnavailable(tag, f"known drivers: {', '.join(sorted(DRIVERS))}")
    return DRIVERS[tag]()


def port_is_free(port: int) -> bool:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        try:
            probe.bind(("127.0.0.1", port))
        except OSError:
            return False
    return True


def find_free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as probe:
        probe.bind(("127.0.0.1", 0))
        return probe.getsockname()[1]


# ---------------------------------------------------------------------------
# Lifecycle operations
# ---------------------------------------------------------------------------


def start_model(
    entry: RegistryEntry,
    host_port: int,
    data_mount: str | None = None,
    driver=None,
) -> ContainerHandle:
    """Start a registered model; returns a handle in ``starting``.

    The template directory mounts read-only at the fixed container path, the
    optional data directory likewise; the gateway port maps to ``host_port``.
    """
    driver = driver or ProcessDriver()
    if isinstance(driver, str):
        driver = get_driver(driver)
    if not driver.available():
        raise DriverUnavailable(driver.tag, "runtime binary not found")
    source_dir = entry.source_repo
    if not Path(source_dir).is_dir():
        raise ImageMissing(f"template directory {source_dir} does not exist")
    if not port_is_free(host_port):
        raise PortInUse(host_port)

    handle = ContainerHandle(
        id=f"{entry.name}-{uuid.uuid4().hex[:8]}",
        driver=driver.tag,
        port_map={host_port: CONTAINER_PORT},
        mounts=[(str(source_dir), TEMPLATE_MOUNT)] + ([(str(data_mount), DATA_MOUNT)] if data_mount else []),
    )
    if driver.tag == "engine":
        handle.runtime_info["image"] = entry.image_refs[-1] if entry.image_refs else entry.name
        handle.runtime_info["data_mount"] = data_mount
    handle.runtime_info["driver_obj"] = driver
    handle.transition(STARTING)
    driver.launch(handle, str(source_dir), host_port)
    _ACTIVE_HANDLES.append(handle)
    return handle


def await_ready(handle: ContainerHandle, timeout_ms: int = 15000, poll_ms: int = 100) -> str:
    """Poll the gateway health probe until ready, failed, or timeout."""
    driver = handle.runtime_info["driver_obj"]
    deadline = time.monotonic() + timeout_ms / 1000.0
    while time.monotonic() < deadline:
        report = driver.health(handle)
        if report is not None:
            status = report.get("status")
            if status == "ready":
                if handle.state == STARTING:
                    handle.transition(READY)
                return READY
            if status == "failed":
                if handle.state == STARTING:
                    handle.transition(FAILED)
                return FAILED
        time.sleep(poll_ms / 1000.0)
    return "timeout"


def stop(handle: ContainerHandle) -> ContainerHandle:
    """Stop the instance; idempotent, legal from any live state."""
    if handle.state == STOPPED:
        return handle
    driver = handle.runtime_info.get("driver_obj")
    if driver is not None:
        driver.terminate(handle)
    handle.transition(STOPPED)
    return handle
