from __future__ import annotations

import os
import shutil
from pathlib import Path

import pytest

from chessloop.board import parse_fen

FIXTURES = Path(__file__).parent / "fixtures"

INVALID_EXAMPLE_FEN = "2q1nk1r/2r1pp1p/1p1p2p1/1R6/5B2/2Q1P3/5PPP/2R3K1 w - - 0 22"
MATE_EXAMPLE_FEN = "3r4/6Rp/pk6/1p3B2/5N2/P3pbP1/1P5P/4K3 b - - 3 36"

INVALID_EXAMPLE_MOVES = (
    "b5b6, b5h5, b5g5, b5f5, b5e5, b5d5, b5c5, b5a5, b5b4, b5b3, b5b2, b5b1, f4h6, f4d6, f4g5, f4e5, "
    "f4g3, c3h8, c3g7, c3c7, c3f6, c3c6, c3e5, c3c5, c3a5, c3d4, c3c4, c3b4, c3d3, c3b3, c3a3, c3d2, "
    "c3c2, c3b2, c3e1, c3a1, g1h1, g1f1, c1c2, c1f1, c1e1, c1d1, c1b1, c1a1, e3e4, h2h3, g2g3, f2f3, "
    "h2h4, g2g4"
).split(", ")
MATE_EXAMPLE_ALTERNATIVES = (
    "d8h8, d8g8, d8f8, d8e8, d8c8, d8b8, d8a8, d8d7, d8d6, d8d5, d8d4, d8d3, d8d2, d8d1, b6c6, b6c5, "
    "b6a5, f3a8, f3b7, f3c6, f3h5, f3d5, f3g4, f3e4, f3g2, f3h1, f3d1, h7h6, a6a5, b5b4, e3e2, h7h5"
).split(", ")

ENGINE = os.environ.get("STOCKFISH_PATH") or shutil.which("stockfish")

requires_engine = pytest.mark.skipif(ENGINE is None, reason="no UCI engine on PATH or STOCKFISH_PATH")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def invalid_example():
    return parse_fen(INVALID_EXAMPLE_FEN)


@pytest.fixture
def mate_example():
    return parse_fen(MATE_EXAMPLE_FEN)


@pytest.fixture(scope="session")
def engine_session():
    if ENGINE is None:
        pytest.skip("no UCI engine available")
    from chessloop.engine import EngineConfig, open_session

    session = open_session(EngineConfig(ENGINE))
    yield session
    session.close()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
