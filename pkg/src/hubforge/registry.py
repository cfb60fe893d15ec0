"""Persistent index of contributed models with gated insertion and search.

Models are registered by reference: the index stores each model's name, its
source repository locator, the digest of its validated config, and the
planned image references. Insertion requires a passing validation outcome;
search is a case-insensitive substring match over the metadata summary while
names remain case-sensitive exact keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path


class RegistryError(Exception):
    pass


class CorruptIndex(RegistryError):
    def __init__(self, path, cause):
        self.path = str(path)
        super().__init__(f"cannot parse registry index {path}: {cause}")


class DuplicateName(RegistryError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"model {name!r} is already registered")


class GateNotPassed(RegistryError):
    def __init__(self, detail: str):
        super().__init__(f"contribution gate not passed: {detail}")


class NotFound(RegistryError):
    def __init__(self, name: str, suggestions=()):
        self.name = name
        self.suggestions = tuple(suggestions)
        message = f"no model named {name!r}"
        if self.suggestions:
            message += f" (nearest: {', '.join(self.suggestions)})"
        super().__init__(message)


@dataclass(frozen=True)
class MetaSummary:
    """Searchable projection of a model's meta block."""

    name: str
    task: str
    application_area: str
    data_type: str


@dataclass(frozen=True)
class RegistryEntry:
    name: str
    source_repo: str
    config_digest: str
    image_refs: tuple[str, ...]
    added_at: str
    meta: MetaSummary
    sample_locators: tuple[str, ...] = ()


@dataclass
class RegistryIndex:
    version: int = 1
    entries: dict[str, RegistryEntry] = field(default_factory=dict)


def _entry_from_doc(doc: dict) -> RegistryEntry:
    meta = doc["meta"]
    return RegistryEntry(
        name=doc["name"],
        source_repo=doc["source_repo"],
        config_digest=doc["config_digest"],
        image_refs=tuple(doc["image_refs"]),
        added_at=doc["added_at"],
        meta=MetaSummary(
            name=meta["name"],
            task=meta["task"],
            application_area=meta["application_area"],
            data_type=meta["data_type"],
        ),
        sample_locators=tuple(doc.get("sample_locators", ())),
    )


def load_index(path) -> RegistryIndex:
    """Load the index document; an absent file is an empty version-1 index."""
    path = Path(path)
    if not path.exists():
        return RegistryIndex()
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        entries = {name: _entry_from_doc(e) for name, e in doc["entries"].items()}
        return RegistryIndex(version=int(doc["version"]), entries=entries)
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptIndex(path, exc) from exc


def save_index(index: RegistryIndex, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": index.version,
        "entries": {name: asdict(entry) for name, entry in index.entries.items()},
    }
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False), encoding="utf-8")


def now_timestamp() -> str:
    return datetime.now(timezone.utc).isoformat()


def add_entry(index: RegistryIndex, entry: RegistryEntry, validation) -> RegistryIndex:
    """Insert an entry behind the contribution gate.

    ``validation`` is the outcome of the contribution checks; insertion
    happens only when it exists and passed. A rejected insertion never
    mutates the index.
    """
    if validation is None or not getattr(validation, "passed", False):
        raise GateNotPassed("validation outcome absent or failing")
    if entry.name in index.entries:
        raise DuplicateName(entry.name)
    index.entries[entry.name] = entry
    index.version += 1
    return index


def list_models(
    index: RegistryIndex,
    task: str | None = None,
    application_area: str | None = None,
    data_type: str | None = None,
) -> list[tuple[str, MetaSummary]]:
    """Names and meta summaries, lexicographic by name.

    Filters are conjunctive case-insensitive substring matches over the meta
    fields; None means no constraint on that field.
    """

    def matches(meta: MetaSummary) -> bool:
        for needle, hay in ((task, meta.task), (application_area, meta.application_area), (data_type, meta.data_type)):
            if needle is not None and needle.lower() not in hay.lower():
                return False
        return True

    return [
        (name, entry.meta)
        for name, entry in sorted(index.entries.items())
        if matches(entry.meta)
    ]


def get_entry(index: RegistryIndex, name: str) -> RegistryEntry:
    """Exact, case-sensitive lookup; NotFound carries nearest names."""
    if name in index.entries:
        return index.entries[name]
    lowered = name.lower()
    near = [n for n in sorted(index.entries) if lowered in n.lower() or n.lower() in lowered]
    raise NotFound(name, suggestions=near[:3] or sorted(index.entries)[:3])
