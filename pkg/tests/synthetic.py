"""Hand-built transcripts for metric tests."""

from __future__ import annotations

from chessloop.board import Move
from chessloop.parsing import ParseOutcome
from chessloop.runner import AttemptTranscript, Final, Mode, Step

from .conftest import MATE_EXAMPLE_FEN


def transcript(puzzle_id, index, final, mode=Mode.NORMAL, themes=(), tokens=None, queries=1):
    if final is Final.PARSE_FAILURE:
        steps = [Step("p", "junk", ParseOutcome.failure("no move-like token"), token_usage=tokens)
                 for _ in range(queries)]
    else:
        move = "d8d1" if final is Final.CORRECT else "f3e2"
        outcome = ParseOutcome.parsed(Move.from_uci(move), move)
        steps = [Step("p", "f3e2", ParseOutcome.parsed(Move.from_uci("f3e2"), "f3e2"), graded=False,
                      token_usage=tokens) for _ in range(queries - 1)]
        steps.append(Step("p", move, outcome, graded=final is Final.CORRECT, token_usage=tokens))
    return AttemptTranscript(puzzle_id, index, MATE_EXAMPLE_FEN, mode, "d8d1", steps, final=final,
                             themes=tuple(themes))


def mate_log(mode=Mode.NORMAL):
    """300 puzzles (100 each of mate in 1/2/3) over 600 positions.

    Solved: 60 / 65 / 66. Unsolved mate-in-2 puzzles get their first position
    right; of the 34 unsolved mate-in-3 puzzles, 19 get two right and 15 one.
    Totals: 476 of 600 positions and 191 of 300 puzzles correct.
    """
    C, I = Final.CORRECT, Final.INCORRECT
    out = []

    def add(pid, finals, theme):
        for i, f in enumerate(finals, 1):
            out.append(transcript(pid, i, f, mode, (theme,)))

    for n in range(100):
        add(f"a{n:03d}", [C] if n < 60 else [I], "mateIn1")
    for n in range(100):
        add(f"b{n:03d}", [C, C] if n < 65 else [C, I], "mateIn2")
    for n in range(100):
        if n < 66:
            finals = [C, C, C]
        elif n < 85:
            finals = [C, C, I]
        else:
            finals = [C, I, I]
        add(f"c{n:03d}", finals, "mateIn3")
    return out
