"""Configuration validation test suite."""

import importlib
import sys

import pytest

import src.cisslab as package

MODULE = "src.cisslab.config"


# Helper function to reload the config module
def _reload_config():
    # Remove the config module from cache to force reload
    sys.modules.pop(MODULE, None)
    return importlib.import_module(MODULE)


@pytest.fixture(autouse=True)
def setup_config_env(monkeypatch):
    # Clear all relevant environment variables before each test
    for var in ("CISS_LAB_OUT", "CISS_LAB_WORKERS", "LOG_LEVEL"):
        monkeypatch.delenv(var, raising=False)
    original = sys.modules.get(MODULE)
    yield
    if original is not None:
        sys.modules[MODULE] = original
        package.config = original


def test_defaults():
    config = _reload_config()
    assert config.OUTPUT_ROOT == "./out"
    assert config.LOG_LEVEL_STR == "INFO"
    assert config.WORKERS == 1


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("CISS_LAB_OUT", "/tmp/lab")
    monkeypatch.setenv("CISS_LAB_WORKERS", "4")
    monkeypatch.setenv("LOG_LEVEL", "debug")
    config = _reload_config()
    assert config.OUTPUT_ROOT == "/tmp/lab"
    assert config.WORKERS == 4
    assert config.LOG_LEVEL_STR == "DEBUG"


def test_invalid_log_level(monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "CHATTY")
    with pytest.raises(ValueError, match="Invalid LOG_LEVEL"):
        _reload_config()


@pytest.mark.parametrize("raw", ["zero", "0", "-2"])
def test_invalid_workers(monkeypatch, raw):
    monkeypatch.setenv("CISS_LAB_WORKERS", raw)
    with pytest.raises(ValueError, match="Invalid CISS_LAB_WORKERS"):
        _reload_config()


def test_empty_output_root(monkeypatch):
    monkeypatch.setenv("CISS_LAB_OUT", "  ")
    with pytest.raises(ValueError, match="Empty CISS_LAB_OUT"):
        _reload_config()


def test_log_initial_settings_runs():
    _reload_config().log_initial_settings()
