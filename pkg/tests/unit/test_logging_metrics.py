"""Unit tests for logging setup and metrics export."""

import json
import logging
from pathlib import Path

import pytest

from tubeband.config import settings
from tubeband.core.logging import CustomJsonFormatter, get_logger, setup_logging
from tubeband.core.metrics import (
    export_textfile,
    record_command,
    record_replications,
    registry,
    replications_recorded,
)


@pytest.fixture
def restore_root_logger():
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield root
    root.handlers[:] = handlers
    root.setLevel(level)


class TestLogging:
    """Test logger configuration."""

    def test_json_records_carry_context(self):
        """JSON records include level, logger and app fields."""
        formatter = CustomJsonFormatter("%(timestamp)s %(level)s %(name)s %(message)s")
        record = logging.LogRecord("tubeband.test", logging.INFO, __file__, 1, "solved", None, None)
        record.b = 3.258

        payload = json.loads(formatter.format(record))

        assert payload["message"] == "solved"
        assert payload["level"] == "INFO"
        assert payload["logger"] == "tubeband.test"
        assert payload["app"] == "tubeband"
        assert payload["version"] == settings.app_version
        assert payload["b"] == 3.258

    def test_setup_writes_to_stderr(self, restore_root_logger, monkeypatch, capsys):
        """Log lines never reach stdout, which carries command results."""
        monkeypatch.setattr(settings, "log_format", "text")
        monkeypatch.setattr(settings, "log_level", "INFO")
        setup_logging()

        get_logger("tubeband.test").info("hello")

        captured = capsys.readouterr()
        assert "hello" not in captured.out
        assert len(restore_root_logger.handlers) == 1

    def test_log_file(self, restore_root_logger, monkeypatch, tmp_path: Path):
        path = tmp_path / "run.log"
        monkeypatch.setattr(settings, "log_file_path", str(path))
        monkeypatch.setattr(settings, "log_level", "DEBUG")
        setup_logging()

        get_logger("tubeband.test").debug("to file")
        for handler in restore_root_logger.handlers:
            handler.flush()

        assert "to file" in path.read_text(encoding="utf-8")


class TestMetrics:
    """Test Prometheus counters and textfile export."""

    def test_record_replications(self):
        before = replications_recorded("unit")
        partitions = registry.get_sample_value("tubeband_partitions_total", {"kind": "unit"}) or 0.0

        record_replications("unit", 250)
        record_replications("unit", 250)

        assert replications_recorded("unit") - before == 500
        assert registry.get_sample_value("tubeband_partitions_total", {"kind": "unit"}) == partitions + 2

    def test_unknown_kind_is_zero(self):
        assert replications_recorded("never-used") == 0.0

    def test_export_textfile(self, tmp_path: Path):
        record_command("critical", 0.02)
        path = tmp_path / "tubeband.prom"

        export_textfile(path)

        text = path.read_text(encoding="utf-8")
        assert "tubeband_command_duration_seconds_count" in text
        assert 'command="critical"' in text
