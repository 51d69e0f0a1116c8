from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chessloop.board import (
    STARTING_FEN,
    FenError,
    IllegalMoveError,
    Move,
    apply_move,
    is_checkmate,
    is_stalemate,
    legal_moves,
    parse_fen,
    perft,
    render_fen,
)

from .conftest import INVALID_EXAMPLE_MOVES

KIWIPETE = "r3k2r/p1ppqpb1/bn2pnp1/3PN3/1p2P3/2N2Q1p/PPPBBPPP/R3K2R w KQkq - 0 1"
POSITION_3 = "8/2p5/3p4/KP5r/1R3p1k/8/4P1P1/8 w - - 0 1"
POSITION_4 = "r3k2r/Pppp1ppp/1b3nbN/nP6/BBP1P3/q4N2/Pp1P2PP/R2Q1RK1 w kq - 0 1"


def test_start_position_round_trip():
    assert render_fen(parse_fen(STARTING_FEN)) == STARTING_FEN


def test_invalid_example_move_list_in_order(invalid_example):
    assert [m.uci() for m in legal_moves(invalid_example)] == INVALID_EXAMPLE_MOVES


@pytest.mark.parametrize(
    "fen, depth, nodes",
    [
        (STARTING_FEN, 3, 8902),
        (KIWIPETE, 2, 2039),
        (KIWIPETE, 3, 97862),
        (POSITION_3, 4, 43238),
        (POSITION_4, 3, 9467),
    ],
)
def test_perft_reference_counts(fen, depth, nodes):
    assert perft(parse_fen(fen), depth) == nodes


@pytest.mark.parametrize(
    "fen",
    [
        "",
        "8/8/8/8/8/8/8/8 w - - 0 1",  # no kings
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR x KQkq - 0 1",
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBN w KQkq - 0 1",
        "rnbqkbnr/pppppppp/9/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
        "rnbqkbnr/pppppppp/44/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1",
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq e3 0 1",
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - -1 1",
        "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w QK - 0 1",
        "Pnbqkbnr/pppppppp/8/8/8/8/1PPPPPPP/RNBQKBNR w KQkq - 0 1",  # pawn on back rank
        "4k3/8/8/8/8/8/8/R3K2R w KQkq - 0 1",  # black castling without rooks
        "4k3/4Q3/8/8/8/8/8/4K3 w - - 0 1",  # side not to move in check
    ],
)
def test_malformed_fen_rejected(fen):
    with pytest.raises(FenError):
        parse_fen(fen)


def test_apply_move_rejects_illegal():
    with pytest.raises(IllegalMoveError):
        apply_move(parse_fen(STARTING_FEN), Move.from_uci("e2e5"))


def test_apply_move_updates_clocks_and_ep():
    p = apply_move(parse_fen(STARTING_FEN), Move.from_uci("e2e4"))
    # ep square is only written when a capture is possible
    assert render_fen(p) == "rnbqkbnr/pppppppp/8/8/4P3/8/PPPP1PPP/RNBQKBNR b KQkq - 0 1"
    p = apply_move(apply_move(p, Move.from_uci("g8f6")), Move.from_uci("g1f3"))
    assert p.halfmove_clock == 2 and p.fullmove_number == 2


def test_checkmate_and_stalemate():
    mate = parse_fen("rnb1kbnr/pppp1ppp/8/4p3/6Pq/5P2/PPPPP2P/RNBQKBNR w KQkq - 1 3")
    assert is_checkmate(mate) and not is_stalemate(mate)
    stale = parse_fen("7k/5Q2/6K1/8/8/8/8/8 b - - 0 1")
    assert is_stalemate(stale) and not is_checkmate(stale)
    assert legal_moves(stale) == ()


def test_en_passant_and_position_key():
    p = parse_fen("rnbqkbnr/ppp1p1pp/8/3pPp2/8/8/PPPP1PPP/RNBQKBNR w KQkq f6 0 3")
    assert Move.from_uci("e5f6") in legal_moves(p)
    assert p.position_key().endswith(" f6")
    # same placement without a capturable pawn keeps no ep square in the key
    q = parse_fen("rnbqkbnr/ppppp1pp/8/5p2/8/8/PPPPPPPP/RNBQKBNR w KQkq f6 0 2")
    assert q.position_key().endswith(" -")


def test_pinned_en_passant_is_illegal():
    p = parse_fen("8/8/8/K2pP2r/8/8/8/7k w - d6 0 1")
    assert Move.from_uci("e5d6") not in legal_moves(p)


def test_castling_through_check_is_illegal():
    p = parse_fen("4k3/8/8/8/8/8/5r2/R3K2R w KQ - 0 1")
    ucis = {m.uci() for m in legal_moves(p)}
    assert "e1g1" not in ucis and "e1c1" in ucis


def test_promotions_listed_queen_first():
    p = parse_fen("8/P6k/8/8/8/8/8/K7 w - - 0 1")
    promos = [m.uci() for m in legal_moves(p) if m.promotion]
    assert promos == ["a7a8q", "a7a8r", "a7a8b", "a7a8n"]


# ---------------------------------------------------------------------------
# Property tests against python-chess as an independent oracle
# ---------------------------------------------------------------------------

try:
    import chess
except ImportError:  # python-chess is only a cross-check oracle
    chess = None

needs_reference = pytest.mark.skipif(chess is None, reason="python-chess not installed")

START_FENS = [STARTING_FEN, KIWIPETE, POSITION_3, POSITION_4,
              "r1bqkb1r/pppp1ppp/2n2n2/4p2Q/2B1P3/8/PPPP1PPP/RNB1K1NR w KQkq - 4 4"]


@needs_reference
@settings(max_examples=150, deadline=None)
@given(start=st.sampled_from(START_FENS), choices=st.lists(st.integers(min_value=0, max_value=10_000), max_size=60))
def test_random_walk_matches_python_chess(start, choices):
    ours = parse_fen(start)
    ref = chess.Board(start)
    for choice in choices:
        moves = legal_moves(ours)
        assert [m.uci() for m in moves] == [m.uci() for m in ref.legal_moves]
        assert ours.is_check() == ref.is_check()
        if not moves:
            assert is_checkmate(ours) == ref.is_checkmate()
            assert is_stalemate(ours) == ref.is_stalemate()
            break
        move = moves[choice % len(moves)]
        ours = apply_move(ours, move)
        ref.push(chess.Move.from_uci(move.uci()))
        assert render_fen(ours) == ref.fen()
        assert parse_fen(render_fen(ours)) == ours


@needs_reference
@settings(max_examples=100, deadline=None)
@given(start=st.sampled_from(START_FENS), choices=st.lists(st.integers(min_value=0, max_value=10_000), max_size=40))
def test_fen_round_trip_is_identity(start, choices):
    p = parse_fen(start)
    for choice in choices:
        moves = legal_moves(p)
        if not moves:
            break
        p = apply_move(p, moves[choice % len(moves)])
    assert parse_fen(render_fen(p)) == p
    assert render_fen(parse_fen(render_fen(p))) == render_fen(p)
