"""Tests for espsim.config — exception hierarchy and logging setup."""

import logging

from espsim import config
from espsim.config import (
    ConfigError,
    EspSimError,
    OracleBoundError,
    ParseError,
    ProtocolError,
    setup_logging,
)


class TestExceptions:
    def test_hierarchy(self):
        assert issubclass(ConfigError, EspSimError)
        assert issubclass(ParseError, ConfigError)
        assert issubclass(ProtocolError, EspSimError)
        assert issubclass(OracleBoundError, EspSimError)

    def test_parse_error_names_line(self):
        err = ParseError("bad key", "soc.ini", 7)
        assert str(err) == "soc.ini:7: bad key"
        assert err.lineno == 7

    def test_parse_error_without_line(self):
        err = ParseError("missing rows", "soc.ini")
        assert str(err) == "missing rows"

    def test_parse_error_text_source(self):
        assert str(ParseError("oops", None, 3)) == "<text>:3: oops"

    def test_protocol_error_carries_context(self):
        err = ProtocolError("unexpected Inv", addr=0x40, tile=2, state="M")
        assert err.addr == 0x40
        assert err.tile == 2
        assert err.state == "M"


class TestConstants:
    def test_mmio_registers_inside_window(self):
        assert config.MMIO_TRIGGER < config.MMIO_WINDOW
        assert config.MMIO_STATUS < config.MMIO_WINDOW

    def test_fault_kinds(self):
        assert set(config.FAULT_KINDS) == {"duplicate-m", "drop-response", "skip-invack"}

    def test_plane_count(self):
        assert config.NUM_PLANES == 6


class TestSetupLogging:
    def test_env_level(self, monkeypatch):
        monkeypatch.setenv(config.LOG_ENV_VAR, "debug")
        assert config._level_from_env() == logging.DEBUG

    def test_env_numeric(self, monkeypatch):
        monkeypatch.setenv(config.LOG_ENV_VAR, "15")
        assert config._level_from_env() == 15

    def test_env_garbage_falls_back(self, monkeypatch):
        monkeypatch.setenv(config.LOG_ENV_VAR, "chatty")
        assert config._level_from_env() == logging.WARNING

    def test_env_unset(self, monkeypatch):
        monkeypatch.delenv(config.LOG_ENV_VAR, raising=False)
        assert config._level_from_env() == logging.WARNING

    def test_setup_logging_runs(self):
        setup_logging(logging.INFO)
