from __future__ import annotations

import bz2
import gzip
import io
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chessloop.board import Move, parse_fen
from chessloop.engine import EngineConfig, EngineEval, EngineLimits
from chessloop.datasets import (
    LICHESS_COLUMNS,
    CorpusRecord,
    CorruptPuzzleError,
    LoadReport,
    Puzzle,
    PuzzleFile,
    PuzzleFormatError,
    SplitManifest,
    build_corpus,
    check_split_disjoint,
    expand_puzzle,
    generate_selfplay_corpus,
    load_puzzles,
    random_opening,
    read_corpus,
    read_puzzles,
    sample_eval_set,
    sample_puzzles,
    schedule_games,
    tasks_to_records,
    theme_split,
    write_puzzles,
)
from chessloop.pgn import read_games, write_game
from chessloop.verification import BruteForceMateOracle

from .conftest import ENGINE, FIXTURES, requires_engine

try:
    import chess
except ImportError:  # pragma: no cover
    chess = None

needs_reference = pytest.mark.skipif(chess is None, reason="python-chess not installed")

MINED = FIXTURES / "mate_puzzles.csv"
HEADER = ",".join(LICHESS_COLUMNS) + "\n"
GOOD_ROW = "00008,r6k/pp2r2p/4Rp1Q/3p4/8/1N1P2R1/PqP2bPP/7K b - - 0 24,f2g3 e6e7 b2b1 b3c1 b1c1 h6c1,1913,75,94,6230,crushing hangingPiece long middlegame,https://lichess.org/787zsVup/black#48,\n"
MATE1_ROW = "m1,3r4/6Rp/pk6/1p3B2/5N2/P3pbP1/1P5P/4K3 w - - 2 36,g7h7 d8d1,1500,80,90,100,mate mateIn1 oneMove,,\n"


def _mined():
    return list(load_puzzles(MINED))


def test_fixture_has_expected_mix():
    puzzles = _mined()
    counts = Counter(p.mate_in for p in puzzles)
    assert counts == {1: 60, 2: 40, 3: 40}
    assert len({p.id for p in puzzles}) == len(puzzles)


def test_reads_lichess_rows_and_skips_corrupt_ones():
    bad_illegal = "bad1,4k3/8/8/8/8/8/8/4K3 w - - 0 1,e1e2 a1a8,0,0,0,0,mateIn1,,\n"
    bad_odd = "bad2,4k3/8/8/8/8/8/8/4K3 w - - 0 1,e1e2,0,0,0,0,endgame,,\n"
    bad_int = "bad3,4k3/8/8/8/8/8/8/4K3 w - - 0 1,e1e2 e8e7,x,0,0,0,endgame,,\n"
    report = LoadReport()
    text = HEADER + GOOD_ROW + bad_illegal + MATE1_ROW + bad_odd + bad_int
    puzzles = list(read_puzzles(io.StringIO(text), report))
    assert [p.id for p in puzzles] == ["00008", "m1"]
    assert report.rows == 5 and report.loaded == 2
    assert [line for line, _ in report.skipped] == [3, 5, 6]
    p = puzzles[0]
    assert p.rating == 1913 and p.themes == {"crushing", "hangingPiece", "long", "middlegame"}
    assert p.url.endswith("#48") and p.mate_in is None


def test_headerless_file_and_bad_header():
    assert [p.id for p in read_puzzles(io.StringIO(GOOD_ROW))] == ["00008"]
    with pytest.raises(PuzzleFormatError):
        list(read_puzzles(io.StringIO("a,b,c\n1,2,3\n")))


@pytest.mark.parametrize("opener,suffix", [(gzip.open, ".csv.gz"), (bz2.open, ".csv.bz2"), (open, ".csv")])
def test_compressed_inputs_round_trip(tmp_path, opener, suffix):
    path = tmp_path / f"p{suffix}"
    with opener(path, "wt", encoding="utf-8", newline="") as fh:
        write_puzzles(_mined()[:5], fh)
    again = list(PuzzleFile(path))
    assert again == _mined()[:5]
    assert list(PuzzleFile(path)) == again  # re-iterable


def test_expand_mate_in_one():
    (task,) = expand_puzzle(next(read_puzzles(io.StringIO(MATE1_ROW))))
    # the setup move Rxh7 is applied first and resets the halfmove clock
    assert task.fen == "3r4/7R/pk6/1p3B2/5N2/P3pbP1/1P5P/4K3 b - - 0 36"
    assert task.solution == Move.from_uci("d8d1") and task.eval_class == EngineEval.mate(1)
    assert BruteForceMateOracle(1).evaluate(task.position) == (EngineEval.mate(1), task.solution)


def test_expand_long_puzzle_gives_one_task_per_solver_move():
    p = next(read_puzzles(io.StringIO(GOOD_ROW)))
    tasks = expand_puzzle(p)
    assert [t.index for t in tasks] == [1, 2, 3]
    assert [t.solution.uci() for t in tasks] == ["e6e7", "b3c1", "h6c1"]
    assert all(t.eval_class is None for t in tasks)


def test_expand_rejects_corrupt_lines():
    p = Puzzle("x", "4k3/8/8/8/8/8/8/4K3 w - - 0 1", ("e1e2", "a1a2"))
    with pytest.raises(CorruptPuzzleError):
        expand_puzzle(p)


def test_mined_mate_distances_with_engine_free_oracle():
    oracle = BruteForceMateOracle(1)
    for p in _mined():
        tasks = expand_puzzle(p)
        assert len(tasks) == p.mate_in
        last = tasks[-1]
        assert last.eval_class == EngineEval.mate(1)
        assert oracle.evaluate(last.position)[0] == EngineEval.mate(1)
        after = last.position.apply_move(last.solution)
        assert after.is_checkmate()


@needs_reference
def test_mined_solution_lines_mate_under_reference_library():
    for p in _mined():
        board = chess.Board(p.fen)
        for uci in p.moves:
            move = chess.Move.from_uci(uci)
            assert move in board.legal_moves
            board.push(move)
        assert board.is_checkmate(), p.id


def test_mined_mate_in_two_is_not_mate_in_one():
    oracle = BruteForceMateOracle(1)
    for p in _mined():
        if p.mate_in == 2:
            first = expand_puzzle(p)[0]
            assert oracle.evaluate(first.position)[0] == EngineEval.cp(0), p.id


def test_split_is_disjoint_and_deterministic():
    puzzles = _mined()
    a = theme_split(puzzles, holdout=10, seed=7)
    b = theme_split(list(reversed(puzzles)), holdout=10, seed=7)
    assert a.validation_ids == b.validation_ids and sorted(a.train_ids) == sorted(b.train_ids)
    assert check_split_disjoint(a, puzzles) == 0
    assert all(count <= 10 for count in a.theme_counts.values())
    assert a.theme_counts["mateIn2"] == 10 and a.theme_counts["endgame"] == min(10, a.theme_candidates["endgame"])
    ids = set(a.validation) | set(a.train_ids) | set(a.dropped_overlap)
    assert ids == {p.id for p in puzzles}
    assert set(a.validation).isdisjoint(a.train_ids)
    assert theme_split(puzzles, holdout=10, seed=8).validation_ids != a.validation_ids


def test_split_drops_train_puzzles_that_share_positions():
    p1 = next(read_puzzles(io.StringIO(MATE1_ROW)))
    a = Puzzle("m1", p1.fen, p1.moves, themes=frozenset({"mateIn1"}))
    # both are picked, each for its own theme, so nothing is dropped
    m = theme_split([a, Puzzle("m2", p1.fen, p1.moves, themes=frozenset({"other"}))], holdout=1, seed=0)
    assert sorted(m.validation) == ["m1", "m2"]
    # only one fits in the theme quota; its twin shares every position and must not train
    m = theme_split([a, Puzzle("m3", p1.fen, p1.moves, themes=frozenset({"mateIn1"}))], holdout=1, seed=0)
    assert len(m.validation) == 1 and len(m.dropped_overlap) == 1 and m.train_ids == []


def test_split_manifest_save_load(tmp_path):
    m = theme_split(_mined(), holdout=5, seed=1)
    m.save(tmp_path)
    again = SplitManifest.load(tmp_path)
    assert again.digest() == m.digest()
    assert sample_eval_set(again, "mateIn1", 3, seed=2) == sample_eval_set(m, "mateIn1", 3, seed=2)


def test_sampling():
    puzzles = _mined()
    s = sample_puzzles(puzzles, "mateIn3", 20, seed=0)
    assert len({p.id for p in s}) == 20 and all(p.mate_in == 3 for p in s)
    assert s == sample_puzzles(list(reversed(puzzles)), "mateIn3", 20, seed=0)
    with pytest.raises(ValueError):
        sample_puzzles(puzzles, "mateIn3", 41, seed=0)
    with pytest.raises(ValueError):
        sample_puzzles(puzzles, "noSuchTheme", 1, seed=0)


@settings(max_examples=40, deadline=None)
@given(holdout=st.integers(1, 50), seed=st.integers(0, 10_000))
def test_split_invariants(holdout, seed):
    puzzles = _PUZZLES
    m = theme_split(puzzles, holdout=holdout, seed=seed)
    assert check_split_disjoint(m, puzzles) == 0
    for theme, n in m.theme_counts.items():
        assert n == min(holdout, m.theme_candidates[theme])
        assert sum(1 for p in m.validation.values() if theme in p.themes) >= n


_PUZZLES = list(load_puzzles(MINED))


def test_corpus_dedup_and_conflicts():
    fen = "4k3/8/8/8/8/8/4P3/4K3 w - - 0 1"
    records = [CorpusRecord(fen, "e2e4"), CorpusRecord(fen, "e2e4"), CorpusRecord(fen, "e2e3"),
               CorpusRecord("4k3/8/8/8/8/8/4P3/4K3 w - - 5 9", "e2e4")]
    sink = io.StringIO()
    stats = build_corpus(records, sink)
    assert stats.records_in == 4 and stats.exact_duplicates == 2 and stats.written == 2
    assert stats.unique_positions == 1 and stats.conflicting_positions == 1
    assert [r.move for r in read_corpus(io.StringIO(sink.getvalue()))] == ["e2e4", "e2e3"]
    with pytest.raises(ValueError):
        CorpusRecord(fen, "e2e5")


def test_puzzle_tasks_become_corpus_lines():
    tasks = [t for p in _mined()[:10] for t in expand_puzzle(p)]
    lines = [r.line() for r in tasks_to_records(tasks)]
    assert all(line.count(";") == 1 and line.endswith("\n") for line in lines)


def test_schedule_balances_colours():
    games = schedule_games([0, 5, 10], 4)
    assert len(games) == 12
    for level in (0, 5, 10):
        mine = [g for g in games if g.level == level]
        assert sum(g.base_is_white for g in mine) == 2
    assert schedule_games([1], 0) == []


def test_random_opening_is_seeded():
    a = random_opening(3, "x", 6)
    assert a == random_opening(3, "x", 6) and len(a) == 6
    assert a != random_opening(4, "x", 6)


@requires_engine
def test_selfplay_smoke_and_pgn_round_trip():
    base = EngineConfig(ENGINE, name="sf")
    result = generate_selfplay_corpus(base, [0, 20], 2, EngineLimits(depth=3), seed=1,
                                      opening_plies=2, max_plies=6)
    assert len(result.games) == 4 and result.aborted == 0
    assert len(result.records) + result.label_failures == sum(len(g.moves) for g in result.games)
    assert result.games[0].white.startswith("sf") and "level 0" in result.games[1].white
    buf = io.StringIO()
    for g in result.games:
        write_game(g, buf)
    again = list(read_games(io.StringIO(buf.getvalue())))
    assert [g.moves for g in again] == [g.moves for g in result.games]
    stats = result.stats()
    assert stats["games"] == 4 and 0.0 <= stats["cross_game_overlap"] <= 1.0
    for rec in result.records:
        assert Move.from_uci(rec.move) in parse_fen(rec.fen).legal_moves()
