"""Command-line surface: exit codes, output shapes, and the serve loop."""

from __future__ import annotations

import json
import signal
import socket
import subprocess
import sys
import time

import pytest
import requests
from click.testing import CliRunner

from hubforge import registry
from hubforge.cli import main
from hubforge.config import parse_config

from conftest import make_broken_template, template_path

runner = CliRunner()


def invoke(*args, **kwargs):
    return runner.invoke(main, list(args), catch_exceptions=False, **kwargs)


class TestList:
    def test_empty_registry_header_only(self, tmp_path):
        result = invoke("list", "--registry", str(tmp_path / "absent.json"))
        assert result.exit_code == 0
        lines = result.output.strip().splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("NAME")

    def test_all_models_sorted(self, populated_registry):
        result = invoke("list", "--registry", str(populated_registry))
        assert result.exit_code == 0
        names = [line.split()[0] for line in result.output.strip().splitlines()[1:]]
        assert names == sorted(names)
        assert "stub-constant-classifier" in names

    def test_task_filter_matches_registry_oracle(self, populated_registry):
        result = invoke("list", "--registry", str(populated_registry), "--task", "segmentation")
        rows = result.output.strip().splitlines()[1:]
        index = registry.load_index(populated_registry)
        oracle = registry.list_models(index, task="segmentation")
        assert [r.split()[0] for r in rows] == [name for name, _ in oracle]
        assert len(rows) == 1

    def test_corrupt_registry_exits_2(self, tmp_path):
        path = tmp_path / "registry.json"
        path.write_text("garbage{{{")
        result = runner.invoke(main, ["list", "--registry", str(path)])
        assert result.exit_code == 2
        assert "cannot parse registry index" in result.output

    def test_env_var_registry_path(self, populated_registry, monkeypatch):
        monkeypatch.setenv("HUBFORGE_REGISTRY", str(populated_registry))
        result = invoke("list")
        assert result.exit_code == 0
        assert "stub-mean-vector" in result.output


class TestInfo:
    def test_known_model(self, populated_registry):
        result = invoke("info", "--registry", str(populated_registry), "stub-constant-classifier")
        assert result.exit_code == 0
        assert "image classification" in result.output
        assert "Constant Classifier Reference Model" in result.output

    def test_unknown_model_exits_3(self, populated_registry):
        result = runner.invoke(main, ["info", "--registry", str(populated_registry), "ghost-model"])
        assert result.exit_code == 3
        assert "no model named" in result.output

    def test_raw_prints_reparsable_manifest(self, populated_registry):
        result = invoke("info", "--registry", str(populated_registry), "--raw", "stub-mean-vector")
        assert result.exit_code == 0
        cfg = parse_config(result.output)
        assert cfg.meta.name == "stub-mean-vector"


class TestValidate:
    def test_passing_template_exit_0(self, tmp_path):
        result = invoke(
            "validate", str(template_path("stub-identity-image")), "--report", str(tmp_path / "r.json")
        )
        assert result.exit_code == 0
        assert "result: passed" in result.output
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["passed"] is True
        assert any(c["name"] == "integration.start" for c in report["checks"])

    def test_broken_template_exit_1_with_report(self, tmp_path):
        broken = make_broken_template("missing_license", tmp_path)
        report_path = tmp_path / "report.json"
        result = runner.invoke(main, ["validate", str(broken), "--report", str(report_path)])
        assert result.exit_code == 1
        report = json.loads(report_path.read_text())
        assert report["passed"] is False
        failing = {c["name"] for c in report["checks"] if not c["passed"]}
        assert "legal.model_license" in failing

    def test_static_only_flag(self):
        result = invoke("validate", "--no-integration", str(template_path("stub-threshold-mask")))
        assert result.exit_code == 0
        assert "integration.start" not in result.output


class TestAdd:
    def test_add_then_list(self, tmp_path):
        reg = tmp_path / "registry.json"
        result = invoke(
            "add", str(template_path("stub-constant-classifier")), "--registry", str(reg), "--no-integration"
        )
        assert result.exit_code == 0, result.output
        listed = invoke("list", "--registry", str(reg))
        assert "stub-constant-classifier" in listed.output

    def test_duplicate_add_exits_2(self, tmp_path):
        reg = tmp_path / "registry.json"
        invoke("add", str(template_path("stub-identity-image")), "--registry", str(reg), "--no-integration")
        result = runner.invoke(
            main,
            ["add", str(template_path("stub-identity-image")), "--registry", str(reg), "--no-integration"],
        )
        assert result.exit_code == 2
        assert "already registered" in result.output

    def test_failing_gate_blocks_insertion(self, tmp_path):
        broken = make_broken_template("absent_env_recipe", tmp_path)
        reg = tmp_path / "registry.json"
        result = runner.invoke(main, ["add", str(broken), "--registry", str(reg), "--no-integration"])
        assert result.exit_code == 1
        assert registry.load_index(reg).entries == {}


class TestBenchmarkCommand:
    def test_url_target_with_report(self, classifier_gateway, tmp_path):
        import numpy as np
        from PIL import Image

        lines = []
        for i, truth in enumerate(["cat", "dog"]):
            path = tmp_path / f"img{i}.png"
            Image.fromarray(np.full((4, 4, 3), 200, dtype=np.uint8)).save(path)
            lines.append(f"{path}\t{truth}")
        manifest = tmp_path / "m.tsv"
        manifest.write_text("\n".join(lines) + "\n")
        report_path = tmp_path / "bench.json"
        result = invoke(
            "benchmark",
            classifier_gateway,
            "--manifest",
            str(manifest),
            "--metric",
            "topk",
            "--k",
            "1",
            "--report",
            str(report_path),
        )
        assert result.exit_code == 0, result.output
        assert "Model Name" in result.output
        report = json.loads(report_path.read_text())
        assert report["aggregate"] == 0.5
        assert report["per_item"] == [1.0, 0.0]

    def test_unknown_model_exits_3(self, populated_registry, tmp_path):
        manifest = tmp_path / "m.tsv"
        manifest.write_text("x.png\tcat\n")
        result = runner.invoke(
            main,
            [
                "benchmark",
                "ghost",
                "--registry",
                str(populated_registry),
                "--manifest",
                str(manifest),
                "--metric",
                "topk",
            ],
        )
        assert result.exit_code == 3

    def test_unreachable_url_exits_1(self, tmp_path):
        manifest = tmp_path / "m.tsv"
        manifest.write_text("x.png\tcat\n")
        result = runner.invoke(
            main,
            ["benchmark", "http://127.0.0.1:9", "--manifest", str(manifest), "--metric", "topk"],
        )
        assert result.exit_code == 1


class TestRunCommand:
    def test_serve_until_interrupt(self, populated_registry):
        from hubforge import runtime

        port = runtime.find_free_port()
        process = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "hubforge.cli",
                "run",
                "stub-constant-classifier",
                "--registry",
                str(populated_registry),
                "-p",
                str(port),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
        )
        try:
            url = process.stdout.readline().strip()
            assert url == f"http://localhost:{port}"
            health = requests.get(f"http://127.0.0.1:{port}/health", timeout=5).json()
            assert health["status"] == "ready"
            process.send_signal(signal.SIGINT)
            assert process.wait(timeout=15) == 0
            # the supervised gateway is gone too
            deadline = time.monotonic() + 5
            while time.monotonic() < deadline:
                try:
                    requests.get(f"http://127.0.0.1:{port}/health", timeout=0.5)
                    time.sleep(0.1)
                except requests.RequestException:
                    break
            else:
                pytest.fail("gateway still answering after stop")
        finally:
            if process.poll() is None:
                process.kill()

    def test_unknown_model_exits_3(self, populated_registry):
        result = runner.invoke(main, ["run", "ghost", "--registry", str(populated_registry)])
        assert result.exit_code == 3
        assert "nearest" in result.output

    def test_occupied_port_exits_4(self, populated_registry):
        blocker = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        blocker.bind(("127.0.0.1", 0))
        port = blocker.getsockname()[1]
        try:
            result = runner.invoke(
                main,
                ["run", "stub-identity-image", "--registry", str(populated_registry), "-p", str(port)],
            )
            assert result.exit_code == 4
        finally:
            blocker.close()


class TestHelpAndUsage:
    COMMANDS = ["list", "info", "run", "validate", "add", "benchmark", "serve-model", "registry-serve"]

    def test_every_command_has_help(self):
        for command in self.COMMANDS:
            result = invoke(command, "--help")
            assert result.exit_code == 0, command
            assert "Usage:" in result.output

    def test_unknown_flag_emits_usage_without_side_effects(self, tmp_path):
        registry_path = tmp_path / "registry.json"
        result = runner.invoke(
            main, ["list", "--registry", str(registry_path), "--definitely-not-a-flag"]
        )
        assert result.exit_code == 2
        assert "Usage" in result.output or "no such option" in result.output.lower()
        assert not registry_path.exists()


def test_registry_facade_projection(populated_registry):
    from fastapi.testclient import TestClient

    from hubforge.cli import create_registry_app

    index = registry.load_index(populated_registry)
    app = create_registry_app(index, {"stub-constant-classifier": "http://127.0.0.1:9001"})
    client = TestClient(app)

    body = client.get("/registry/models").json()
    names = [m["name"] for m in body["models"]]
    assert names == [name for name, _ in registry.list_models(index)]
    classifier = next(m for m in body["models"] if m["name"] == "stub-constant-classifier")
    assert classifier["gateway_url"] == "http://127.0.0.1:9001"
    assert classifier["task"] == "image classification"

    detail = client.get("/registry/models/stub-mean-vector")
    assert detail.status_code == 200
    assert detail.json()["config_digest"]
    assert detail.json()["meta"]["gateway_url"] is None

    assert client.get("/registry/models/ghost").status_code == 404

    filtered = client.get("/registry/models", params={"task": "segmentation"}).json()
    oracle = registry.list_models(index, task="segmentation")
    assert [m["name"] for m in filtered["models"]] == [name for name, _ in oracle]
