"""Registry index persistence, gated insertion, search, and lookup."""

from __future__ import annotations

import copy

import pytest

from hubforge import registry
from hubforge.validator import CheckResult, ValidationOutcome

PASSING = ValidationOutcome((CheckResult("config.valid", True),))
FAILING = ValidationOutcome((CheckResult("config.valid", False, "broken"),))


def entry(name: str, task="classification", area="radiology", data_type="2D image") -> registry.RegistryEntry:
    return registry.RegistryEntry(
        name=name,
        source_repo=f"/models/{name}",
        config_digest="ab" * 32,
        image_refs=(f"hubforge/{name}:hub_env",),
        added_at="2026-01-01T00:00:00+00:00",
        meta=registry.MetaSummary(name, task, area, data_type),
        sample_locators=("sample.png",),
    )


class TestPersistence:
    def test_absent_file_is_empty_index(self, tmp_path):
        index = registry.load_index(tmp_path / "registry.json")
        assert index.version == 1
        assert index.entries == {}

    def test_save_load_round_trip(self, tmp_path):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("alpha"), PASSING)
        registry.add_entry(index, entry("beta", task="segmentation"), PASSING)
        path = tmp_path / "registry.json"
        registry.save_index(index, path)
        assert registry.load_index(path) == index

    def test_garbage_bytes(self, tmp_path):
        path = tmp_path / "registry.json"
        path.write_bytes(b"\x00\xffgarbage")
        with pytest.raises(registry.CorruptIndex) as excinfo:
            registry.load_index(path)
        assert str(path) in str(excinfo.value)

    def test_wrong_shape_is_corrupt(self, tmp_path):
        path = tmp_path / "registry.json"
        path.write_text('{"something": "else"}')
        with pytest.raises(registry.CorruptIndex):
            registry.load_index(path)


class TestAddEntry:
    def test_insert_then_read(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("alpha"), PASSING)
        assert [name for name, _ in registry.list_models(index)] == ["alpha"]

    def test_duplicate_name(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("alpha"), PASSING)
        with pytest.raises(registry.DuplicateName):
            registry.add_entry(index, entry("alpha"), PASSING)

    def test_failing_gate_rejected_without_mutation(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("alpha"), PASSING)
        snapshot = copy.deepcopy(index)
        with pytest.raises(registry.GateNotPassed):
            registry.add_entry(index, entry("beta"), FAILING)
        with pytest.raises(registry.GateNotPassed):
            registry.add_entry(index, entry("beta"), None)
        assert index == snapshot

    def test_version_increments(self):
        index = registry.RegistryIndex()
        assert index.version == 1
        registry.add_entry(index, entry("alpha"), PASSING)
        assert index.version == 2


class TestListModels:
    def fixture_index(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("ct-segmenter", task="segmentation", area="radiology"), PASSING)
        registry.add_entry(index, entry("chest-classifier", task="classification", area="radiology"), PASSING)
        registry.add_entry(index, entry("word-tagger", task="tagging", area="nlp", data_type="text"), PASSING)
        return index

    def test_empty_index(self):
        assert registry.list_models(registry.RegistryIndex()) == []

    def test_no_filter_sorted_by_name(self):
        names = [name for name, _ in registry.list_models(self.fixture_index())]
        assert names == sorted(names) == ["chest-classifier", "ct-segmenter", "word-tagger"]

    def test_filter_matches_linear_scan_oracle(self):
        index = self.fixture_index()
        cases = [
            {"task": "segmentation"},
            {"task": "class"},
            {"application_area": "RADIO"},
            {"task": "tag", "data_type": "TEXT"},
            {"task": "segmentation", "application_area": "nlp"},
        ]
        for kwargs in cases:
            got = [name for name, _ in registry.list_models(index, **kwargs)]
            oracle = sorted(
                name
                for name, e in index.entries.items()
                if all(
                    value.lower() in getattr(e.meta, field_).lower()
                    for field_, value in kwargs.items()
                )
            )
            assert got == oracle, kwargs

    def test_singleton_filter(self):
        rows = registry.list_models(self.fixture_index(), task="segmentation")
        assert len(rows) == 1 and rows[0][0] == "ct-segmenter"


class TestGetEntry:
    def test_existing(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("alpha"), PASSING)
        assert registry.get_entry(index, "alpha").name == "alpha"

    def test_unknown(self):
        with pytest.raises(registry.NotFound):
            registry.get_entry(registry.RegistryIndex(), "ghost")

    def test_names_are_case_sensitive(self):
        index = registry.RegistryIndex()
        registry.add_entry(index, entry("Alpha"), PASSING)
        with pytest.raises(registry.NotFound) as excinfo:
            registry.get_entry(index, "alpha")
        assert "Alpha" in excinfo.value.suggestions


def test_list_is_function_of_added_entries(tmp_path):
    # interleaved adds/saves/loads land on the same listing
    index = registry.RegistryIndex()
    registry.add_entry(index, entry("m2"), PASSING)
    path = tmp_path / "registry.json"
    registry.save_index(index, path)
    reloaded = registry.load_index(path)
    registry.add_entry(reloaded, entry("m1"), PASSING)
    registry.save_index(reloaded, path)
    final = registry.load_index(path)

    direct = registry.RegistryIndex()
    registry.add_entry(direct, entry("m1"), PASSING)
    registry.add_entry(direct, entry("m2"), PASSING)
    assert registry.list_models(final) == registry.list_models(direct)
