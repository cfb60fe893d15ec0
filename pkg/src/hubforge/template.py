"""Model template conventions: the contributor-supplied directory layout.

A template packages everything a model needs to run behind the gateway:

    template/
      config.json        the manifest (see hubforge.config)
      Dockerfile         runtime environment build recipe
      weights.*          pretrained weights (any single extension)
      backend.py         entry point module defining create_backend()
      LICENSE            model license text
      sample_data/       optional sample inputs
      SAMPLE_LICENSE     required exactly when sample_data/ is non-empty

``backend.py`` is imported by path and must expose a zero-argument
``create_backend()`` returning a :class:`hubforge.engine.ModelBackend`.
"""

from __future__ import annotations

import importlib.util
import sys
from pathlib import Path

from .backends import WEIGHTS_GLOB
from .config import MANIFEST_FILENAME, ModelConfig, load_config
from .engine import ModelBackend

ENV_RECIPE = "Dockerfile"
BACKEND_MODULE = "backend.py"
LICENSE_FILE = "LICENSE"
SAMPLE_LICENSE_FILE = "SAMPLE_LICENSE"
SAMPLE_DIR = "sample_data"


class BackendResolutionError(Exception):
    """backend.py is missing, fails to import, or lacks create_backend()."""


def config_path(template_dir) -> Path:
    return Path(template_dir) / MANIFEST_FILENAME


def load_template_config(template_dir) -> ModelConfig:
    return load_config(config_path(template_dir))


def weights_files(template_dir) -> list[Path]:
    return sorted(Path(template_dir).glob(WEIGHTS_GLOB))


def sample_files(template_dir) -> list[Path]:
    """Sample inputs in deterministic (name-sorted) order; [] when absent."""
    sample_dir = Path(template_dir) / SAMPLE_DIR
    if not sample_dir.is_dir():
        return []
    return sorted(p for p in sample_dir.iterdir() if p.is_file())


def template_files(template_dir) -> list[str]:
    """All template member paths, relative and sorted, for packaging.

    Bytecode caches are excluded so archives stay deterministic.
    """
    root = Path(template_dir)
    return sorted(
        str(p.relative_to(root))
        for p in root.rglob("*")
        if p.is_file() and "__pycache__" not in p.parts and p.suffix != ".pyc"
    )


def resolve_backend_factory(template_dir):
    """Import the template's backend module and return its create_backend."""
    module_path = Path(template_dir) / BACKEND_MODULE
    if not module_path.is_file():
        raise BackendResolutionError(f"{BACKEND_MODULE} not found in {template_dir}")
    module_name = f"_hubforge_template_{abs(hash(str(module_path.resolve())))}"
    spec = importlib.util.spec_from_file_location(module_name, module_path)
    if spec is None or spec.loader is None:
        raise BackendResolutionError(f"cannot import {module_path}")
    module = importlib.util.module_from_spec(spec)
    dont_write = sys.dont_write_bytecode
    try:
        # Keep bytecode caches out of (possibly read-only) template mounts.
        sys.dont_write_bytecode = True
        sys.modules[module_name] = module
        spec.loader.exec_module(module)
    except Exception as exc:
        sys.modules.pop(module_name, None)
        raise BackendResolutionError(f"error importing {module_path}: {exc}") from exc
    finally:
        sys.dont_write_bytecode = dont_write
    factory = getattr(module, "create_backend", None)
    if not callable(factory):
        raise BackendResolutionError(f"{module_path} does not define create_backend()")
    return factory


def load_backend(template_dir) -> ModelBackend:
    """Instantiate the template's backend (uninitialized)."""
    backend = resolve_backend_factory(template_dir)()
    if not hasattr(backend, "infer"):
        raise BackendResolutionError("create_backend() did not return a model backend")
    return backend
