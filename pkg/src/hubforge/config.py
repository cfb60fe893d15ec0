"""Contributor configuration manifest: parsing, validation, and digesting.

Every model template carries a ``config.json`` manifest holding the model's
identity, provenance, manuscript metadata, I/O contract, and license
information. This module fixes the concrete schema, preserves unknown fields
in per-block extension maps for forward compatibility, and provides a
canonical content digest that is stable under key reordering and whitespace.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

# Closed set of inference output kinds; drives envelope-vs-artifact dispatch
# and client-side rendering.
OUTPUT_TYPES = ("label_list", "vector", "mask_image", "contour", "image", "custom")

MANIFEST_FILENAME = "config.json"


class ConfigError(Exception):
    """Base class for manifest parse failures."""


class ConfigSyntaxError(ConfigError):
    """Malformed document or a field of the wrong type."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{message}" + (f" at {path}" if path else ""))


class MissingField(ConfigError):
    """A structurally required field is absent; names the field path."""

    def __init__(self, path: str):
        self.path = path
        super().__init__(f"missing required field: {path}")


@dataclass(frozen=True)
class MetaBlock:
    name: str
    task: str
    application_area: str
    data_type: str
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PublicationBlock:
    title: str
    authors: tuple[str, ...]
    source: str
    year: int
    url: str
    doi: str | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class OutputDecl:
    name: str
    type: str
    description: str
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class IoSpec:
    input_formats: tuple[str, ...]
    # One axis-bound list per accepted rank; each bound is (min, max).
    dim_limits: tuple[tuple[tuple[int, int], ...], ...]
    output_decls: tuple[OutputDecl, ...]
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LegalBlock:
    model_license: str
    sample_data_license: str | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ModelConfig:
    id: str
    meta: MetaBlock
    publication: PublicationBlock
    io_spec: IoSpec
    legal: LegalBlock
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise MissingField(f"{path}.{key}" if path else key)
    return doc[key]


def _string(value, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigSyntaxError(f"expected string, got {type(value).__name__}", path)
    return value


def _integer(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigSyntaxError(f"expected integer, got {type(value).__name__}", path)
    return value


def _block(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigSyntaxError(f"expected object, got {type(value).__name__}", path)
    return value


def _string_list(value, path: str) -> tuple[str, ...]:
    if not isinstance(value, list):
        raise ConfigSyntaxError(f"expected list, got {type(value).__name__}", path)
    return tuple(_string(v, f"{path}[{i}]") for i, v in enumerate(value))


def _extras(doc: dict, known: set[str]) -> dict:
    return {k: v for k, v in doc.items() if k not in known}


def _parse_meta(doc: dict) -> MetaBlock:
    known = {"name", "task", "application_area", "data_type"}
    return MetaBlock(
        name=_string(_require(doc, "name", "meta"), "meta.name"),
        task=_string(_require(doc, "task", "meta"), "meta.task"),
        application_area=_string(_require(doc, "application_area", "meta"), "meta.application_area"),
        data_type=_string(_require(doc, "data_type", "meta"), "meta.data_type"),
        extras=_extras(doc, known),
    )


def _parse_publication(doc: dict) -> PublicationBlock:
    known = {"title", "authors", "source", "year", "url", "doi"}
    doi = doc.get("doi")
    if doi is not None:
        doi = _string(doi, "publication.doi")
    return PublicationBlock(
        title=_string(_require(doc, "title", "publication"), "publication.title"),
        authors=_string_list(_require(doc, "authors", "publication"), "publication.authors"),
        source=_string(_require(doc, "source", "publication"), "publication.source"),
        year=_integer(_require(doc, "year", "publication"), "publication.year"),
        url=_string(_require(doc, "url", "publication"), "publication.url"),
        doi=doi,
        extras=_extras(doc, known),
    )


def _parse_dim_limits(value, path: str) -> tuple[tuple[tuple[int, int], ...], ...]:
    if not isinstance(value, list):
        raise ConfigSyntaxError(f"expected list, got {type(value).__name__}", path)
    ranks = []
    for i, rank_spec in enumerate(value):
        if not isinstance(rank_spec, list):
            raise ConfigSyntaxError("expected list of axis bounds", f"{path}[{i}]")
        axes = []
        for j, bound in enumerate(rank_spec):
            if not isinstance(bound, list) or len(bound) != 2:
                raise ConfigSyntaxError("expected [min, max] pair", f"{path}[{i}][{j}]")
            axes.append((_integer(bound[0], f"{path}[{i}][{j}][0]"), _integer(bound[1], f"{path}[{i}][{j}][1]")))
        ranks.append(tuple(axes))
    return tuple(ranks)


def _parse_output_decl(doc, path: str) -> OutputDecl:
    doc = _block(doc, path)
    known = {"name", "type", "description"}
    return OutputDecl(
        name=_string(_require(doc, "name", path), f"{path}.name"),
        type=_string(_require(doc, "type", path), f"{path}.type"),
        description=_string(_require(doc, "description", path), f"{path}.description"),
        extras=_extras(doc, known),
    )


def _parse_io_spec(doc: dict) -> IoSpec:
    known = {"input_formats", "dim_limits", "output_decls"}
    decls_raw = _require(doc, "output_decls", "io_spec")
    if not isinstance(decls_raw, list):
        raise ConfigSyntaxError(f"expected list, got {type(decls_raw).__name__}", "io_spec.output_decls")
    return IoSpec(
        input_formats=_string_list(_require(doc, "input_formats", "io_spec"), "io_spec.input_formats"),
        dim_limits=_parse_dim_limits(_require(doc, "dim_limits", "io_spec"), "io_spec.dim_limits"),
        output_decls=tuple(
            _parse_output_decl(d, f"io_spec.output_decls[{i}]") for i, d in enumerate(decls_raw)
        ),
        extras=_extras(doc, known),
    )


def _parse_legal(doc: dict) -> LegalBlock:
    known = {"model_license", "sample_data_license"}
    sample = doc.get("sample_data_license")
    if sample is not None:
        sample = _string(sample, "legal.sample_data_license")
    return LegalBlock(
        model_license=_string(_require(doc, "model_license", "legal"), "legal.model_license"),
        sample_data_license=sample,
        extras=_extras(doc, known),
    )


def parse_config(document: str) -> ModelConfig:
    """Parse a manifest document (JSON text) into a :class:`ModelConfig`.

    Unknown fields at any block level are preserved in ``extras`` so that
    serialize -> parse is the identity even for future schema additions.

    Raises :class:`ConfigSyntaxError` for malformed text or mistyped fields
    and :class:`MissingField` (naming the field path) for absent ones.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"malformed document: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigSyntaxError("top-level value must be an object")
    known = {"id", "meta", "publication", "io_spec", "legal"}
    return ModelConfig(
        id=_string(_require(doc, "id", ""), "id"),
        meta=_parse_meta(_block(_require(doc, "meta", ""), "meta")),
        publication=_parse_publication(_block(_require(doc, "publication", ""), "publication")),
        io_spec=_parse_io_spec(_block(_require(doc, "io_spec", ""), "io_spec")),
        legal=_parse_legal(_block(_require(doc, "legal", ""), "legal")),
        extras=_extras(doc, known),
    )


def load_config(path) -> ModelConfig:
    """Parse the manifest at ``path`` (UTF-8 JSON)."""
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def to_document(cfg: ModelConfig) -> dict:
    """Plain-dict form of a config, extension fields merged back in place."""
    pub: dict = {
        "title": cfg.publication.title,
        "authors": list(cfg.publication.authors),
        "source": cfg.publication.source,
        "year": cfg.publication.year,
        "url": cfg.publication.url,
    }
    if cfg.publication.doi is not None:
        pub["doi"] = cfg.publication.doi
    pub.update(cfg.publication.extras)

    legal: dict = {"model_license": cfg.legal.model_license}
    if cfg.legal.sample_data_license is not None:
        legal["sample_data_license"] = cfg.legal.sample_data_license
    legal.update(cfg.legal.extras)

    decls = []
    for d in cfg.io_spec.output_decls:
        decl = {"name": d.name, "type": d.type, "description": d.description}
        decl.update(d.extras)
        decls.append(decl)

    io_spec: dict = {
        "input_formats": list(cfg.io_spec.input_formats),
        "dim_limits": [[[lo, hi] for lo, hi in rank] for rank in cfg.io_spec.dim_limits],
        "output_decls": decls,
    }
    io_spec.update(cfg.io_spec.extras)

    meta: dict = {
        "name": cfg.meta.name,
        "task": cfg.meta.task,
        "application_area": cfg.meta.application_area,
        "data_type": cfg.meta.data_type,
    }
    meta.update(cfg.meta.extras)

    doc: dict = {
        "id": cfg.id,
        "meta": meta,
        "publication": pub,
        "io_spec": io_spec,
        "legal": legal,
    }
    doc.update(cfg.extras)
    return doc


def serialize_config(cfg: ModelConfig) -> str:
    """Wire-syntax text such that ``parse_config(serialize_config(cfg)) == cfg``."""
    return json.dumps(to_document(cfg), indent=2, ensure_ascii=False)


def canonical_bytes(cfg: ModelConfig) -> bytes:
    """Canonical serialization: keys sorted, no insignificant whitespace, UTF-8."""
    return json.dumps(
        to_document(cfg), sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def config_digest(cfg: ModelConfig) -> str:
    """Deterministic hex content digest; equal configs yield equal digests."""
    return hashlib.sha256(canonical_bytes(cfg)).hexdigest()


def validate_config(cfg: ModelConfig) -> ValidationReport:
    """Check a parsed config against the manifest rules.

    Violations are data, not failures: the report lists each broken rule with
    its field path; an empty report means the config is valid.
    """
    violations: list[Violation] = []

    if not cfg.id:
        violations.append(Violation("id", "id.nonempty", "id must be a non-empty string"))
    if cfg.publication.year <= 0:
        violations.append(
            Violation("publication.year", "publication.year.positive", f"year {cfg.publication.year} is not positive")
        )
    if not cfg.legal.model_license:
        violations.append(
            Violation("legal.model_license", "legal.model_license.nonempty", "model license must be non-empty")
        )
    if not cfg.io_spec.input_formats:
        violations.append(
            Violation("io_spec.input_formats", "input_formats.nonempty", "at least one input format is required")
        )
    for i, rank_spec in enumerate(cfg.io_spec.dim_limits):
        for j, (lo, hi) in enumerate(rank_spec):
            path = f"io_spec.dim_limits[{i}][{j}]"
            if lo <= 0 or hi <= 0:
                violations.append(Violation(path, "dim_limits.positive", f"bounds must be positive, got ({lo}, {hi})"))
            if lo > hi:
                violations.append(Violation(path, "dim_limits.min_le_max", f"min {lo} exceeds max {hi}"))
    if not cfg.io_spec.output_decls:
        violations.append(
            Violation("io_spec.output_decls", "output_decls.nonempty", "at least one output declaration is required")
        )
    for i, decl in enumerate(cfg.io_spec.output_decls):
        if decl.type not in OUTPUT_TYPES:
            violations.append(
                Violation(
                    f"io_spec.output_decls[{i}].type",
                    "output_type.unknown",
                    f"{decl.type!r} is not one of {', '.join(OUTPUT_TYPES)}",
                )
            )
    return ValidationReport(tuple(violations))
