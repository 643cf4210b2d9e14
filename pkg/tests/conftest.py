from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from zcurate.store import RecordStore


@pytest.fixture
def store(tmp_path) -> RecordStore:
    return RecordStore(tmp_path / "data")


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory) -> Path:
    """Session-scoped 50-image corpus; built once, reused by e2e tests."""
    from fixture_corpus import build_fixture

    root = tmp_path_factory.mktemp("fixture")
    build_fixture(root, seed=0)
    return root
