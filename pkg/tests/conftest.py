from __future__ import annotations

import sys
from pathlib import Path

import pytest

from guardkit import mock

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _clean_mock_registry():
    mock.clear_registry()
    yield
    mock.clear_registry()


@pytest.fixture()
def no_sleep():
    """Sleep callable for clients in tests: backoff without the waiting."""
    return lambda seconds: None
