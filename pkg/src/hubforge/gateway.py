"""HTTP service exposing the fixed endpoint set over one running model.

Routes (all JSON except the zip and binary ones):

    GET  /api/get_config       full manifest document
    GET  /api/get_legal        license information
    GET  /api/get_model_files  deterministic zip of the template
    GET  /api/get_samples      absolute sample URLs
    GET  /api/predict_sample   inference on sample k (?index=k, default 0)
    GET  /api/predict          inference on ?fileurl=<http(s) url>
    POST /api/predict          inference on one uploaded file
    GET  /health               {status, stage} readiness probe
    GET  /samples/<name>       sample bytes
    GET  /artifacts/<name>     .mhaf artifact bytes

Inference responses are envelopes: model identity, the typed output (inline
payload or artifact URL, never both), the infer wall time, and a timestamp.
Errors share the body shape {error, message, details?}.
"""

from __future__ import annotations

import fnmatch
import io
import ipaddress
import os
import socket
import tempfile
import threading
import zipfile
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from pathlib import Path
from urllib.parse import urlparse

import requests as requests_lib
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response

from . import artifacts, engine, template
from .config import ModelConfig, to_document

DEFAULT_UPLOAD_CAP = 64 * 1024 * 1024
FETCH_TIMEOUT_S = 10.0

STATUS_STARTING = "starting"
STATUS_READY = "ready"
STATUS_FAILED = "failed"


def _error(status: int, code: str, message: str, details: dict | None = None) -> JSONResponse:
    body: dict = {"error": code, "message": message}
    if details:
        body["details"] = details
    return JSONResponse(body, status_code=status)


def host_is_allowed(host: str, allow_globs: tuple[str, ...]) -> bool:
    """Fetch policy: allow-listed hosts pass; private address ranges are denied."""
    for pattern in allow_globs:
        if fnmatch.fnmatch(host, pattern):
            return True
    try:
        infos = socket.getaddrinfo(host, None)
    except OSError:
        # Unresolvable hosts fall through to the fetch, which will 502.
        return True
    for info in infos:
        address = ipaddress.ip_address(info[4][0])
        if address.is_private or address.is_loopback or address.is_link_local or address.is_reserved:
            return False
    return True


class GatewayState:
    """Everything one serving instance owns: config, backend, store, status."""

    def __init__(
        self,
        template_dir,
        store_dir=None,
        upload_cap: int = DEFAULT_UPLOAD_CAP,
        fetch_allow: tuple[str, ...] = (),
    ):
        self.template_dir = Path(template_dir)
        self.store_dir = Path(store_dir) if store_dir else Path(tempfile.mkdtemp(prefix="hubforge-store-"))
        self.upload_cap = upload_cap
        self.fetch_allow = tuple(fetch_allow)
        self.chain = engine.default_chain()
        self.config: ModelConfig | None = None
        self.backend: engine.ModelBackend | None = None
        self.status = STATUS_STARTING
        self.stage = "created"
        self.failure: str | None = None
        self._infer_lock = threading.Lock()

    def load(self) -> None:
        """Bring the model to readiness; on failure record the failing stage."""
        try:
            self.stage = "parse_config"
            self.config = template.load_template_config(self.template_dir)
            self.stage = "resolve_backend"
            self.backend = template.load_backend(self.template_dir)
            self.stage = "initialize"
            self.backend.initialize(self.config)
            self.stage = "load_weights"
            self.backend.load_weights(str(self.template_dir))
            self.stage = "serving"
            self.status = STATUS_READY
        except Exception as exc:
            self.failure = f"{self.stage}: {exc}"
            self.status = STATUS_FAILED

    def load_in_background(self) -> None:
        threading.Thread(target=self.load, daemon=True).start()

    @property
    def ready(self) -> bool:
        return self.status == STATUS_READY

    def samples(self) -> list[Path]:
        return template.sample_files(self.template_dir)

    def run(self, locator: str) -> engine.InferenceOutcome:
        with self._infer_lock:
            return engine.run_pipeline(self.backend, locator, self.config, self.chain)


def _inline_payload(outcome: engine.InferenceOutcome):
    if outcome.output_type == "label_list":
        return [[name, float(p)] for name, p in outcome.payload]
    if outcome.output_type == "contour":
        return [[float(a), float(b)] for a, b in outcome.payload]
    return outcome.payload.tolist()  # vector


def build_envelope(state: GatewayState, outcome: engine.InferenceOutcome, base_url: str) -> dict:
    """Envelope with exactly one of inline payload / artifact url."""
    if artifacts.is_envelope_representable(outcome):
        output = {"type": outcome.output_type, "payload": _inline_payload(outcome)}
    else:
        ref = artifacts.write_artifact(outcome, state.store_dir)
        output = {"type": outcome.output_type, "artifact_url": base_url.rstrip("/") + ref.url}
    return {
        "model": {"id": state.config.id, "name": state.config.meta.name},
        "output": output,
        "processing_ms": outcome.processing_ms,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }


def build_template_zip(template_dir) -> bytes:
    """Deterministic zip of the template: sorted members, zeroed timestamps."""
    buffer = io.BytesIO()
    root = Path(template_dir)
    with zipfile.ZipFile(buffer, "w", compression=zipfile.ZIP_DEFLATED) as archive:
        for relpath in template.template_files(root):
            info = zipfile.ZipInfo(filename=relpath, date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            archive.writestr(info, (root / relpath).read_bytes())
    return buffer.getvalue()


def _predict_on_file(state: GatewayState, path: str, request: Request):
    try:
        outcome = state.run(path)
    except engine.UnsupportedFormat as exc:
        return _error(415, "unsupported_format", str(exc), {"allowed": list(exc.allowed)})
    except engine.PipelineError as exc:
        return _error(422, "pipeline_failure", str(exc), {"stage": exc.stage})
    return JSONResponse(build_envelope(state, outcome, str(request.base_url)))


def _suffix_for(name: str) -> str:
    return Path(name).suffix or ".bin"


def create_gateway(
    template_dir,
    store_dir=None,
    upload_cap: int = DEFAULT_UPLOAD_CAP,
    fetch_allow: tuple[str, ...] = (),
    auto_load: bool = True,
) -> FastAPI:
    """Build the serving app for one model template.

    With ``auto_load`` the backend is brought up in a background thread on
    startup so /health answers while weights load; pass False to drive
    ``app.state.gateway.load()`` explicitly (tests, synchronous embedding).
    """
    state = GatewayState(template_dir, store_dir, upload_cap, fetch_allow)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if auto_load:
            state.load_in_background()
        yield

    app = FastAPI(title="hubforge gateway", lifespan=lifespan)
    app.state.gateway = state

    def not_ready() -> JSONResponse:
        return _error(503, "not_ready", f"model is not ready (status: {state.status})", {"stage": state.stage})

    @app.get("/health")
    def health():
        body = {"status": state.status, "stage": state.stage}
        if state.failure:
            body["failure"] = state.failure
        return body

    @app.get("/api/get_config")
    def get_config():
        if not state.ready:
            return not_ready()
        return to_document(state.config)

    @app.get("/api/get_legal")
    def get_legal():
        if not state.ready:
            return not_ready()
        legal = {"model_license": state.config.legal.model_license}
        if state.samples() and state.config.legal.sample_data_license is not None:
            legal["sample_data_license"] = state.config.legal.sample_data_license
        return legal

    @app.get("/api/get_model_files")
    def get_model_files():
        if not state.ready:
            return not_ready()
        try:
            payload = build_template_zip(state.template_dir)
        except OSError as exc:
            return _error(500, "packaging_failure", f"cannot package template: {exc}")
        disposition = f'attachment; filename="{state.config.meta.name}.zip"'
        return Response(payload, media_type="application/zip", headers={"Content-Disposition": disposition})

    @app.get("/api/get_samples")
    def get_samples(request: Request):
        if not state.ready:
            return not_ready()
        base = str(request.base_url).rstrip("/")
        return {"samples": [f"{base}/samples/{p.name}" for p in state.samples()]}

    @app.get("/samples/{name}")
    def sample_bytes(name: str):
        for path in state.samples():
            if path.name == name:
                return FileResponse(path)
        return _error(404, "no_such_sample", f"no sample named {name!r}")

    @app.get("/artifacts/{name}")
    def artifact_bytes(name: str):
        path = state.store_dir / Path(name).name
        if not path.is_file():
            return _error(404, "no_such_artifact", f"no artifact named {name!r}")
        return FileResponse(path, media_type="application/octet-stream")

    @app.get("/api/predict_sample")
    def predict_sample(request: Request, index: str = "0"):
        if not state.ready:
            return not_ready()
        try:
            k = int(index)
        except ValueError:
            return _error(400, "bad_input", f"index must be an integer, got {index!r}")
        samples = state.samples()
        if k < 0 or k >= len(samples):
            return _error(404, "no_such_sample", f"sample index {k} out of range (have {len(samples)})")
        return _predict_on_file(state, str(samples[k]), request)

    @app.get("/api/predict")
    def predict_url(request: Request, fileurl: str = ""):
        if not state.ready:
            return not_ready()
        if not fileurl:
            return _error(400, "bad_input", "fileurl query parameter is required")
        parsed = urlparse(fileurl)
        if parsed.scheme not in ("http", "https") or not parsed.hostname:
            return _error(400, "bad_input", f"fileurl must be an absolute http(s) URL, got {fileurl!r}")
        if not host_is_allowed(parsed.hostname, state.fetch_allow):
            return _error(403, "fetch_denied", f"fetching from {parsed.hostname!r} is not permitted")
        try:
            response = requests_lib.get(fileurl, timeout=FETCH_TIMEOUT_S)
            response.raise_for_status()
        except requests_lib.RequestException as exc:
            return _error(502, "fetch_failed", f"cannot fetch {fileurl}: {exc}")
        if len(response.content) > state.upload_cap:
            return _error(413, "payload_too_large", f"fetched file exceeds {state.upload_cap} bytes")
        return _run_on_bytes(state, response.content, parsed.path or "download", request)

    @app.post("/api/predict")
    async def predict_upload(request: Request):
        if not state.ready:
            return not_ready()
        length = request.headers.get("content-length")
        if length and length.isdigit() and int(length) > state.upload_cap + 4096:
            return _error(413, "payload_too_large", f"upload exceeds {state.upload_cap} bytes")
        form = await request.form()
        uploads = [v for v in form.values() if hasattr(v, "filename")]
        if len(uploads) != 1:
            return _error(400, "bad_input", f"exactly one file part is required, got {len(uploads)}")
        upload = uploads[0]
        payload = await upload.read()
        if len(payload) > state.upload_cap:
            return _error(413, "payload_too_large", f"upload exceeds {state.upload_cap} bytes")
        return _run_on_bytes(state, payload, upload.filename or "upload", request)

    def _run_on_bytes(state: GatewayState, payload: bytes, name: str, request: Request):
        suffix = _suffix_for(name)
        fd, tmp_path = tempfile.mkstemp(suffix=suffix, prefix="hubforge-input-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(payload)
            return _predict_on_file(state, tmp_path, request)
        finally:
            os.unlink(tmp_path)

    return app
