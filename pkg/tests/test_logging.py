import logging

from config import settings
from core.logging_config import RUN_LOG_NAME, get_logger, run_log, setup_logger


def _drop_handlers(logger):
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()


def test_get_logger_adds_handlers_once():
    """A second lookup reuses the logger without stacking handlers."""
    first = get_logger("steinforge.test.once")
    second = get_logger("steinforge.test.once")
    assert first is second
    assert len(first.handlers) == 2


def test_setup_logger_reads_settings(tmp_path, monkeypatch):
    """Level and log directory come from the shared settings object."""
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path / "logs"))
    monkeypatch.setattr(settings, "LOG_LEVEL", "ERROR")
    logger = setup_logger("steinforge.test.settings")
    try:
        assert logger.level == logging.ERROR
        logger.error("energy_nan iteration=%d", 12)
        for handler in logger.handlers:
            handler.flush()
        assert "energy_nan iteration=12" in (tmp_path / "logs" / "steinforge.log").read_text()
    finally:
        _drop_handlers(logger)


def test_explicit_level_overrides_settings(tmp_path, monkeypatch):
    """An explicit level wins over the configured one."""
    monkeypatch.setattr(settings, "LOG_DIR", str(tmp_path))
    logger = setup_logger("steinforge.test.explicit", level=logging.DEBUG)
    try:
        assert logger.level == logging.DEBUG
    finally:
        _drop_handlers(logger)


def test_run_log_captures_records_while_open(tmp_path):
    """Records reach run.log only while the context is open."""
    logger = get_logger("steinforge.test.run_log")
    with run_log(tmp_path, level=logging.WARNING) as path:
        logger.warning("pgm_clamped count=%d", 3)
    logger.warning("after_run")

    assert path == tmp_path / RUN_LOG_NAME
    text = path.read_text()
    assert "[steinforge.test.run_log] WARNING: pgm_clamped count=3" in text
    assert "after_run" not in text
    assert all(not isinstance(h, logging.FileHandler) or h.baseFilename != str(path)
               for h in logging.getLogger().handlers)


def test_run_log_level_follows_settings(tmp_path, monkeypatch):
    """Without an explicit level the run log filters at the configured level."""
    monkeypatch.setattr(settings, "LOG_LEVEL", "ERROR")
    logger = get_logger("steinforge.test.run_log_level")
    with run_log(tmp_path) as path:
        logger.warning("below_threshold")
        logger.error("above_threshold")
    text = path.read_text()
    assert "above_threshold" in text
    assert "below_threshold" not in text


def test_run_log_truncates_previous_file(tmp_path):
    """Opening a run log replaces whatever an earlier run left behind."""
    (tmp_path / RUN_LOG_NAME).write_text("stale\n")
    with run_log(tmp_path):
        pass
    assert (tmp_path / RUN_LOG_NAME).read_text() == ""
