"""The inference cycle: input loading, conversion, dim checks, and dispatch.

A pipeline run executes a fixed stage order over a pluggable model backend:

    load -> [preprocess_native] -> convert -> [preprocess_array]
         -> check_dims -> infer -> [postprocess]

Input loading goes through an ordered chain of format loaders
(chain-of-responsibility: first registered claimant wins), conversion turns
native payloads into immutable :class:`DataArray` values, and the dimension
check runs on whatever array is actually fed to the model, i.e. after
array-stage preprocessing.
"""

from __future__ import annotations

import abc
import io
import time
from dataclasses import dataclass, field
from urllib.parse import urlparse

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import artifacts
from .arrays import INTEGER_DTYPES, DataArray
from .config import OUTPUT_TYPES, ModelConfig


# ---------------------------------------------------------------------------
# Errors. Every pipeline error names the stage it surfaced in so that the
# gateway and validator can report it.
# ---------------------------------------------------------------------------


class PipelineError(Exception):
    stage = "pipeline"


class UnsupportedFormat(PipelineError):
    stage = "load"

    def __init__(self, message: str, allowed=()):
        self.allowed = tuple(sorted(allowed))
        if self.allowed:
            message += f" (accepted formats: {', '.join(self.allowed)})"
        super().__init__(message)


class ReadError(PipelineError):
    stage = "load"

    def __init__(self, locator: str, cause: Exception):
        self.locator = locator
        super().__init__(f"cannot read {locator}: {cause}")


class ConversionError(PipelineError):
    stage = "convert"


class DimViolationError(PipelineError):
    stage = "check_dims"

    def __init__(self, violation: "DimViolation"):
        self.violation = violation
        super().__init__(str(violation))


class BackendError(PipelineError):
    """Wraps any exception raised by backend-supplied code, naming the stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"backend failed in stage {stage!r}: {cause}")


class OutputTypeMismatch(PipelineError):
    stage = "output_type"

    def __init__(self, declared: str, detail: str):
        self.declared = declared
        super().__init__(f"payload does not match declared output type {declared!r}: {detail}")


class DuplicateExactClaim(Exception):
    """A loader with the same name and claim set is already registered."""


# ---------------------------------------------------------------------------
# Native inputs and loaders
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NativeInput:
    format_tag: str
    payload: bytes
    source_locator: str


class Loader(abc.ABC):
    """One link in the input-loading chain."""

    name: str = "loader"
    formats: frozenset[str] = frozenset()

    def claims(self, format_tag: str) -> bool:
        return format_tag in self.formats

    def load(self, payload: bytes, locator: str) -> NativeInput:
        tag = format_tag_for(locator)
        return NativeInput(format_tag=tag, payload=payload, source_locator=locator)


class RasterLoader(Loader):
    name = "raster"
    formats = frozenset({"png", "jpeg"})


class RawArrayLoader(Loader):
    """Accepts the artifact container reused as an input format."""

    name = "raw-array"
    formats = frozenset({"raw-array"})


# Locator extension -> format tag. Loader chain extension is a registration
# concern, not a wire concern, so this map is module-level and append-only.
_EXTENSION_TAGS = {
    ".png": "png",
    ".jpg": "jpeg",
    ".jpeg": "jpeg",
    artifacts.FILE_EXTENSION: "raw-array",
}


def format_tag_for(locator: str) -> str:
    """Map a locator to its format tag by extension."""
    path = urlparse(locator).path if "://" in locator else locator
    lowered = path.lower()
    for ext, tag in _EXTENSION_TAGS.items():
        if lowered.endswith(ext):
            return tag
    suffix = "." + lowered.rsplit(".", 1)[-1] if "." in lowered else ""
    raise UnsupportedFormat(f"no format tag for {suffix or locator!r}")


class LoaderChain:
    """Ordered loader registry; earlier registrations win on overlapping claims."""

    def __init__(self, loaders=()):
        self._loaders: list[Loader] = []
        for loader in loaders:
            self.register(loader)

    def register(self, loader: Loader) -> None:
        if not loader.formats:
            raise ValueError(f"loader {loader.name!r} claims no formats")
        for existing in self._loaders:
            if existing.name == loader.name and existing.formats == loader.formats:
                raise DuplicateExactClaim(
                    f"loader {loader.name!r} with claims {sorted(loader.formats)} already registered"
                )
        self._loaders.append(loader)

    def resolve(self, format_tag: str) -> Loader:
        for loader in self._loaders:
            if loader.claims(format_tag):
                return loader
        raise UnsupportedFormat(f"no loader claims format {format_tag!r}")

    def load_input(self, locator: str, allowed) -> NativeInput:
        """Read ``locator`` and wrap it as a NativeInput whose tag is allowed."""
        allowed = frozenset(allowed)
        try:
            tag = format_tag_for(locator)
        except UnsupportedFormat as exc:
            raise UnsupportedFormat(str(exc), allowed=allowed) from None
        if tag not in allowed:
            raise UnsupportedFormat(f"format {tag!r} not accepted", allowed=allowed)
        loader = self.resolve(tag)
        try:
            with open(locator, "rb") as fh:
                payload = fh.read()
        except OSError as exc:
            raise ReadError(locator, exc) from exc
        return loader.load(payload, locator)


def default_chain() -> LoaderChain:
    return LoaderChain([RasterLoader(), RawArrayLoader()])


# ---------------------------------------------------------------------------
# Conversion to arrays
# ---------------------------------------------------------------------------

_CHANNEL_COUNTS = {"L": 1, "LA": 2, "RGB": 3, "RGBA": 4}


def convert(native: NativeInput) -> DataArray:
    """Deterministically convert a native input into a :class:`DataArray`.

    Raster images become [height, width, channels] u8 arrays with channels
    preserved as decoded (1 for grayscale, 3 for RGB, 4 for RGBA); palette
    and exotic modes are decoded to RGB(A) first. Raw-array containers pass
    their first entry through unchanged.
    """
    if native.format_tag in ("png", "jpeg"):
        try:
            image = Image.open(io.BytesIO(native.payload))
            image.load()
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise ConversionError(f"cannot decode {native.format_tag} payload: {exc}") from exc
        if image.mode not in _CHANNEL_COUNTS:
            image = image.convert("RGBA" if "A" in image.mode or image.mode == "P" else "RGB")
        pixels = np.asarray(image, dtype=np.uint8)
        if pixels.ndim == 2:
            pixels = pixels[:, :, np.newaxis]
        return DataArray(pixels, dtype="u8")
    if native.format_tag == "raw-array":
        try:
            entries = artifacts.decode_entries(native.payload)
        except artifacts.FormatError as exc:
            raise ConversionError(f"corrupt raw-array container: {exc}") from exc
        if not entries:
            raise ConversionError("raw-array container holds no entries")
        return entries[0].array
    raise ConversionError(f"no converter for format {native.format_tag!r}")


# ---------------------------------------------------------------------------
# Dimension checks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DimViolation:
    kind: str  # "rank" or "axis"
    axis: int | None
    detail: str

    def __str__(self) -> str:
        return self.detail


def check_dims(arr: DataArray, limits) -> DimViolation | None:
    """None when some accepted rank matches and every axis is within bounds."""
    if not limits:
        return None
    matching = [spec for spec in limits if len(spec) == arr.rank]
    if not matching:
        accepted = sorted({len(spec) for spec in limits})
        return DimViolation("rank", None, f"rank {arr.rank} not accepted (accepted ranks: {accepted})")
    first_failure = None
    for spec in matching:
        failure = None
        for axis, ((lo, hi), extent) in enumerate(zip(spec, arr.shape)):
            if not lo <= extent <= hi:
                failure = DimViolation(
                    "axis", axis, f"axis {axis} extent {extent} outside [{lo}, {hi}]"
                )
                break
        if failure is None:
            return None
        if first_failure is None:
            first_failure = failure
    return first_failure


# ---------------------------------------------------------------------------
# Backends and outcomes
# ---------------------------------------------------------------------------


class ModelBackend(abc.ABC):
    """Behavior contract every model implementation fulfills.

    Subclasses may additionally define ``preprocess_native(native)``,
    ``preprocess_array(arr)``, and ``postprocess(payload)``; the pipeline
    invokes whichever are present and records them in the stage log.
    ``infer`` must not mutate its input array (inputs are read-only).
    """

    @abc.abstractmethod
    def initialize(self, config: ModelConfig) -> None: ...

    @abc.abstractmethod
    def load_weights(self, locator: str) -> None: ...

    @abc.abstractmethod
    def infer(self, arr: DataArray):
        """Return the output payload for one input array."""


@dataclass(frozen=True)
class InferenceOutcome:
    output_type: str
    payload: object
    model_id: str
    processing_ms: float
    stage_log: tuple[str, ...] = field(default_factory=tuple)


def _is_label_pair(item) -> bool:
    return (
        isinstance(item, (tuple, list))
        and len(item) == 2
        and isinstance(item[0], str)
        and isinstance(item[1], (int, float))
        and not isinstance(item[1], bool)
    )


def _is_point(item) -> bool:
    return (
        isinstance(item, (tuple, list))
        and len(item) == 2
        and all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in item)
    )


def validate_payload(output_type: str, payload) -> None:
    """Raise :class:`OutputTypeMismatch` unless the payload fits the declared type."""
    if output_type not in OUTPUT_TYPES:
        raise OutputTypeMismatch(output_type, "declared type is not a known output type")
    if output_type == "label_list":
        if not isinstance(payload, (list, tuple)) or not all(_is_label_pair(p) for p in payload):
            raise OutputTypeMismatch(output_type, "expected a list of (label, probability) pairs")
        bad = [p for _, p in payload if not 0.0 <= float(p) <= 1.0]
        if bad:
            raise OutputTypeMismatch(output_type, f"probabilities outside [0, 1]: {bad}")
        return
    if output_type == "contour":
        if not isinstance(payload, (list, tuple)) or not all(_is_point(p) for p in payload):
            raise OutputTypeMismatch(output_type, "expected an ordered list of 2-D points")
        return
    if not isinstance(payload, DataArray):
        raise OutputTypeMismatch(output_type, f"expected a DataArray, got {type(payload).__name__}")
    if output_type == "vector" and payload.rank != 1:
        raise OutputTypeMismatch(output_type, f"expected rank 1, got rank {payload.rank}")
    if output_type == "mask_image":
        if payload.rank != 2:
            raise OutputTypeMismatch(output_type, f"expected rank 2, got rank {payload.rank}")
        if payload.dtype not in INTEGER_DTYPES:
            raise OutputTypeMismatch(output_type, f"expected integer labels, got {payload.dtype}")
    if output_type == "image" and payload.rank not in (2, 3):
        raise OutputTypeMismatch(output_type, f"expected rank 2 or 3, got rank {payload.rank}")


def _hook(backend, name):
    fn = getattr(backend, name, None)
    return fn if callable(fn) else None


def run_pipeline(
    backend: ModelBackend,
    locator: str,
    cfg: ModelConfig,
    chain: LoaderChain | None = None,
) -> InferenceOutcome:
    """Run one input through the full inference cycle.

    The backend must already be initialized with its weights loaded. Stage
    failures propagate as :class:`PipelineError` subtypes; backend-raised
    exceptions are wrapped in :class:`BackendError` naming the stage.
    """
    chain = chain or default_chain()
    stage_log: list[str] = []

    native = chain.load_input(locator, cfg.io_spec.input_formats)
    stage_log.append("load")

    pre_native = _hook(backend, "preprocess_native")
    if pre_native is not None:
        try:
            native = pre_native(native)
        except Exception as exc:
            raise BackendError("preprocess_native", exc) from exc
        stage_log.append("preprocess_native")

    arr = convert(native)
    stage_log.append("convert")

    pre_array = _hook(backend, "preprocess_array")
    if pre_array is not None:
        try:
            arr = pre_array(arr)
        except Exception as exc:
            raise BackendError("preprocess_array", exc) from exc
        stage_log.append("preprocess_array")

    violation = check_dims(arr, cfg.io_spec.dim_limits)
    if violation is not None:
        raise DimViolationError(violation)
    stage_log.append("check_dims")

    started = time.perf_counter()
    try:
        payload = backend.infer(arr)
    except Exception as exc:
        raise BackendError("infer", exc) from exc
    processing_ms = (time.perf_counter() - started) * 1000.0
    stage_log.append("infer")

    post = _hook(backend, "postprocess")
    if post is not None:
        try:
            payload = post(payload)
        except Exception as exc:
            raise BackendError("postprocess", exc) from exc
        stage_log.append("postprocess")

    declared = cfg.io_spec.output_decls[0].type
    validate_payload(declared, payload)
    return InferenceOutcome(
        output_type=declared,
        payload=payload,
        model_id=cfg.id,
        processing_ms=processing_ms,
        stage_log=tuple(stage_log),
    )
