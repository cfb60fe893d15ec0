"""Benchmark harness: top-k accuracy, Dice overlap, and per-case model ranking.

A labeled manifest (one ``input<TAB>truth`` record per line) is replayed
against a running gateway; per-item metric values are aggregated into a
report that can be rendered as an aligned text table. Classification truths
are label strings; segmentation truths are locators of artifact files
holding the reference mask.
"""

from __future__ import annotations

import io
import statistics
import time
import urllib.parse
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests as requests_lib
from scipy import stats as scipy_stats

from . import artifacts
from .arrays import DataArray


class BenchError(Exception):
    pass


class LengthMismatch(BenchError):
    def __init__(self, n_predictions: int, n_truths: int):
        super().__init__(f"{n_predictions} predictions vs {n_truths} truths")


class ShapeMismatch(BenchError):
    def __init__(self, a, b):
        super().__init__(f"mask shapes differ: {list(a)} vs {list(b)}")


class RaggedMatrix(BenchError):
    def __init__(self):
        super().__init__("every model must be scored on every case")


class ManifestError(BenchError):
    pass


class BenchTransportError(BenchError):
    """The gateway could not be reached at all."""


class BenchAborted(BenchError):
    def __init__(self, failed: int, total: int):
        super().__init__(f"aborted: {failed} of {total} items failed")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def top_k_accuracy(predictions: list[list[str]], truths: list[str], k: int) -> float:
    """Fraction of items whose truth appears in the first k predicted labels.

    Predictions shorter than k are used as-is (padded short).
    """
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    if len(predictions) != len(truths):
        raise LengthMismatch(len(predictions), len(truths))
    if not truths:
        raise ValueError("no items to score")
    hits = sum(1 for ranked, truth in zip(predictions, truths) if truth in ranked[:k])
    return hits / len(truths)


def _as_binary(mask: DataArray, side: str) -> np.ndarray:
    values = mask.to_numpy()
    if not np.isin(values, (0, 1)).all():
        raise ValueError(f"{side} mask is not binary (elements outside {{0, 1}})")
    return values != 0


def dice(a: DataArray, b: DataArray) -> float:
    """Overlap 2|A∩B| / (|A| + |B|) between binary masks; 1.0 when both empty."""
    if a.shape != b.shape:
        raise ShapeMismatch(a.shape, b.shape)
    mask_a = _as_binary(a, "first")
    mask_b = _as_binary(b, "second")
    total = int(mask_a.sum()) + int(mask_b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(mask_a, mask_b).sum()) / total


def macro_dice(a: DataArray, b: DataArray) -> float:
    """Per-label Dice averaged over the union of nonzero labels.

    Equals :func:`dice` for binary masks; 1.0 when both masks are empty.
    """
    if a.shape != b.shape:
        raise ShapeMismatch(a.shape, b.shape)
    values_a = a.to_numpy()
    values_b = b.to_numpy()
    labels = sorted(set(np.unique(values_a).tolist()) | set(np.unique(values_b).tolist()))
    labels = [label for label in labels if label != 0]
    if not labels:
        return 1.0
    scores = []
    for label in labels:
        scores.append(
            dice(DataArray(values_a == label, dtype="u8"), DataArray(values_b == label, dtype="u8"))
        )
    return float(statistics.mean(scores))


def rank_models(
    scores: list[list[float]],
    higher_is_better: bool = True,
    names: list[str] | None = None,
) -> list[tuple[str, float]]:
    """Mean per-case rank for each model, sorted ascending (rank 1 best).

    Per case, models receive ranks 1..M with ties sharing the mean of the
    tied rank positions. The result is invariant under any strictly monotone
    transform of all scores.
    """
    if not scores:
        raise RaggedMatrix()
    width = len(scores[0])
    if width == 0 or any(len(row) != width for row in scores):
        raise RaggedMatrix()
    matrix = np.asarray(scores, dtype=np.float64)
    if higher_is_better:
        matrix = -matrix
    per_case = np.column_stack(
        [scipy_stats.rankdata(matrix[:, case], method="average") for case in range(width)]
    )
    means = per_case.mean(axis=1)
    names = names or [f"model-{i}" for i in range(len(scores))]
    ranked = sorted(zip(names, means), key=lambda pair: (pair[1], pair[0]))
    return [(name, float(mean)) for name, mean in ranked]


# ---------------------------------------------------------------------------
# Manifests and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestItem:
    input_locator: str
    truth: str


@dataclass(frozen=True)
class DatasetManifest:
    items: tuple[ManifestItem, ...]

    @property
    def truth_kind(self) -> str:
        return "mask" if self.items[0].truth.endswith(artifacts.FILE_EXTENSION) else "label"


def load_manifest(path) -> DatasetManifest:
    """Parse a tab-separated manifest; ground-truth kind must be uniform."""
    items = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ManifestError(f"{path}:{lineno}: expected 'input<TAB>truth', got {line!r}")
        items.append(ManifestItem(parts[0].strip(), parts[1].strip()))
    if not items:
        raise ManifestError(f"{path}: manifest is empty")
    kinds = {item.truth.endswith(artifacts.FILE_EXTENSION) for item in items}
    if len(kinds) != 1:
        raise ManifestError(f"{path}: ground-truth kind is not uniform across items")
    return DatasetManifest(tuple(items))


@dataclass(frozen=True)
class ItemFailure:
    index: int
    input_locator: str
    reason: str


@dataclass(frozen=True)
class BenchReport:
    model: str
    metric: str
    k: int | None
    per_item: tuple[float | None, ...]
    failures: tuple[ItemFailure, ...]
    aggregate: float
    wall_ms: float

    def to_document(self) -> dict:
        return {
            "model": self.model,
            "metric": self.metric,
            "k": self.k,
            "per_item": list(self.per_item),
            "failures": [
                {"index": f.index, "input": f.input_locator, "reason": f.reason} for f in self.failures
            ],
            "aggregate": self.aggregate,
            "wall_ms": self.wall_ms,
        }


def render_table(reports: list[BenchReport]) -> str:
    """Aligned text table: one row per model, metric columns."""
    headers = ["Model Name", "Metric", "Aggregate", "Items", "Failures", "Wall (ms)"]
    rows = [
        [
            r.model,
            r.metric if r.k is None else f"{r.metric} (k={r.k})",
            f"{r.aggregate:.4f}",
            str(len(r.per_item)),
            str(len(r.failures)),
            f"{r.wall_ms:.0f}",
        ]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Live benchmark runs
# ---------------------------------------------------------------------------


def _post_item(base_url: str, item: ManifestItem) -> dict:
    path = Path(item.input_locator)
    with open(path, "rb") as fh:
        response = requests_lib.post(
            base_url.rstrip("/") + "/api/predict",
            files={"file": (path.name, fh)},
            timeout=60,
        )
    if response.status_code != 200:
        try:
            detail = response.json().get("message", response.text)
        except ValueError:
            detail = response.text
        raise BenchError(f"predict returned {response.status_code}: {detail}")
    return response.json()


def _fetch_mask(envelope: dict, base_url: str) -> DataArray:
    output = envelope["output"]
    if "artifact_url" not in output:
        raise BenchError(f"expected an artifact output, got inline {output['type']}")
    url = urllib.parse.urljoin(base_url.rstrip("/") + "/", output["artifact_url"])
    response = requests_lib.get(url, timeout=60)
    response.raise_for_status()
    entries = artifacts.decode_entries(response.content)
    for entry in entries:
        if entry.name == "output":
            return entry.array
    return entries[0].array


def _label_item_value(envelope: dict, truth: str, k: int) -> float:
    output = envelope["output"]
    if output["type"] != "label_list" or "payload" not in output:
        raise BenchError(f"expected an inline label_list output, got {output['type']}")
    ranked = [name for name, _ in output["payload"]]
    return 1.0 if truth in ranked[:k] else 0.0


def _mask_item_value(envelope: dict, truth: str, base_url: str) -> float:
    predicted = _fetch_mask(envelope, base_url)
    entries = artifacts.read_artifact(truth)
    named = [entry for entry in entries if entry.name == "output"]
    reference = (named or entries)[0].array
    return macro_dice(predicted, reference)


def run_benchmark(
    base_url: str,
    manifest: DatasetManifest,
    metric: str,
    k: int = 5,
    parallel: int = 1,
    model_name: str | None = None,
) -> BenchReport:
    """Replay the manifest against a gateway and aggregate the metric.

    Per-item failures are recorded, not fatal; the run aborts only when the
    gateway is unreachable or more than half the items fail.
    """
    if metric not in ("topk", "dice"):
        raise ValueError(f"unknown metric {metric!r}")
    expected_kind = "label" if metric == "topk" else "mask"
    if manifest.truth_kind != expected_kind:
        raise ManifestError(f"metric {metric} needs {expected_kind} truths, manifest has {manifest.truth_kind}")

    started = time.perf_counter()
    try:
        requests_lib.get(base_url.rstrip("/") + "/health", timeout=10)
    except requests_lib.RequestException as exc:
        raise BenchTransportError(f"gateway unreachable at {base_url}: {exc}") from exc

    def evaluate(indexed_item) -> tuple[int, float | None, str | None]:
        index, item = indexed_item
        try:
            envelope = _post_item(base_url, item)
            if metric == "topk":
                return index, _label_item_value(envelope, item.truth, k), None
            return index, _mask_item_value(envelope, item.truth, base_url), None
        except requests_lib.ConnectionError as exc:
            raise BenchTransportError(f"gateway connection lost: {exc}") from exc
        except (BenchError, OSError, artifacts.FormatError, ValueError, KeyError) as exc:
            return index, None, str(exc)

    indexed = list(enumerate(manifest.items))
    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(evaluate, indexed))
    else:
        results = [evaluate(pair) for pair in indexed]

    per_item: list[float | None] = [None] * len(indexed)
    failures = []
    for index, value, reason in results:
        per_item[index] = value
        if reason is not None:
            failures.append(ItemFailure(index, manifest.items[index].input_locator, reason))

    if len(failures) * 2 > len(indexed):
        raise BenchAborted(len(failures), len(indexed))

    successes = [v for v in per_item if v is not None]
    aggregate = float(statistics.mean(successes)) if successes else 0.0
    wall_ms = (time.perf_counter() - started) * 1000.0
    metric_name = "top_k_accuracy" if metric == "topk" else "dice"
    return BenchReport(
        model=model_name or base_url,
        metric=metric_name,
        k=k if metric == "topk" else None,
        per_item=tuple(per_item),
        failures=tuple(failures),
        aggregate=aggregate,
        wall_ms=wall_ms,
    )
