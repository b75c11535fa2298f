import json
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def vectors() -> dict:
    return json.loads((FIXTURES / "vectors.json").read_text())


@pytest.fixture(scope="session")
def fixture_entry() -> bytes:
    return (FIXTURES / "entry.txt").read_bytes()
