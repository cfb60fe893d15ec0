"""Reference stub backends covering every output type without an ML framework.

These back the shipped model templates and the test suites:

* identity-image  — echoes the converted input array (``image``)
* constant-classifier — fixed label probabilities read from its weights
  file, sorted by a postprocess hook (``label_list``)
* threshold-mask  — grayscale preprocess then a fixed pixel threshold
  (``mask_image``)
* mean-vector     — float preprocess then per-channel means (``vector``)

Each demonstrates one optional pipeline hook; together they exercise the
whole stage grammar.
"""

from __future__ import annotations

import json
import glob
import os

import numpy as np

from .arrays import DataArray
from .config import ModelConfig
from .engine import ModelBackend

WEIGHTS_GLOB = "weights.*"


def find_weights(locator: str) -> str:
    """Resolve the weights file under a template directory.

    ``locator`` may already be the weights file; otherwise the first
    ``weights.*`` match (sorted) inside the directory is used.
    """
    if os.path.isfile(locator):
        return locator
    matches = sorted(glob.glob(os.path.join(locator, WEIGHTS_GLOB)))
    if not matches:
        raise FileNotFoundError(f"no {WEIGHTS_GLOB} file under {locator}")
    return matches[0]


class IdentityImageBackend(ModelBackend):
    """Echoes its input array unchanged; no optional hooks."""

    def initialize(self, config: ModelConfig) -> None:
        self.config = config

    def load_weights(self, locator: str) -> None:
        find_weights(locator)

    def infer(self, arr: DataArray) -> DataArray:
        return arr


class ConstantClassifierBackend(ModelBackend):
    """Emits a fixed label distribution read from ``weights.json``.

    The weights document holds ``{"labels": [["cat", 1.0], ...]}``. The
    postprocess hook sorts pairs by descending probability, the way a real
    classifier head would rank its logits.
    """

    def __init__(self):
        self.labels: list[tuple[str, float]] = []

    def initialize(self, config: ModelConfig) -> None:
        self.config = config

    def load_weights(self, locator: str) -> None:
        with open(find_weights(locator), encoding="utf-8") as fh:
            doc = json.load(fh)
        self.labels = [(str(name), float(p)) for name, p in doc["labels"]]

    def infer(self, arr: DataArray) -> list[tuple[str, float]]:
        return list(self.labels)

    def postprocess(self, payload: list[tuple[str, float]]) -> list[tuple[str, float]]:
        return sorted(payload, key=lambda pair: (-pair[1], pair[0]))


class ThresholdMaskBackend(ModelBackend):
    """Binary mask of pixels brighter than a threshold stored in its weights.

    The array-stage preprocess collapses channels to a grayscale mean, so the
    template's dimension limits constrain the rank-2 array actually inferred.
    """

    def __init__(self):
        self.threshold = 127.0

    def initialize(self, config: ModelConfig) -> None:
        self.config = config

    def load_weights(self, locator: str) -> None:
        with open(find_weights(locator), encoding="utf-8") as fh:
            self.threshold = float(fh.read().strip())

    def preprocess_array(self, arr: DataArray) -> DataArray:
        pixels = arr.to_numpy().astype(np.float32)
        if pixels.ndim == 3:
            pixels = pixels.mean(axis=2)
        return DataArray(pixels, dtype="f32")

    def infer(self, arr: DataArray) -> DataArray:
        mask = (arr.to_numpy() > self.threshold).astype(np.uint8)
        return DataArray(mask, dtype="u8")


class MeanVectorBackend(ModelBackend):
    """Per-channel mean intensities as a 1-D vector."""

    def initialize(self, config: ModelConfig) -> None:
        self.config = config

    def load_weights(self, locator: str) -> None:
        find_weights(locator)

    def preprocess_array(self, arr: DataArray) -> DataArray:
        return DataArray(arr.to_numpy().astype(np.float64), dtype="f64")

    def infer(self, arr: DataArray) -> DataArray:
        pixels = arr.to_numpy()
        if pixels.ndim >= 3:
            means = pixels.reshape(-1, pixels.shape[-1]).mean(axis=0)
        else:
            means = np.asarray([pixels.mean()])
        return DataArray(means, dtype="f64")
