#!/usr/bin/env python3
"""Mine mate-in-N puzzles from engine games, written in the Lichess CSV schema.

The full Lichess puzzle dump is not always reachable, so the test fixtures are
built locally: the base engine plays a Skill Level 0 opponent from a few random
opening plies, and the first time the base side has a forced mate in N (N <= 3)
right after an opponent move, that opponent move becomes the setup move and the
mating line is read off at depth 20.

    python tools/mine_puzzles.py --out tests/fixtures/mate_puzzles.csv --counts 60 40 40
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import random
import sys
import time

from chessloop.board import STARTING_FEN, parse_fen, render_fen, popcount
from chessloop.datasets import Puzzle, expand_puzzle, validate_puzzle, write_puzzles
from chessloop.engine import EngineConfig, EngineLimits, EvalKind, open_session

log = logging.getLogger("mine_puzzles")

LENGTH_THEME = {1: "oneMove", 2: "short", 3: "long"}


def puzzle_id(fen: str, moves: list[str]) -> str:
    digest = hashlib.blake2b((fen + " " + " ".join(moves)).encode(), digest_size=8).hexdigest()
    return "m" + digest[:7]


def mating_line(session, position, n, limits):
    """Solver/defender moves for a mate in exactly n, or None if the engine disagrees."""
    line = []
    for k in range(n, 0, -1):
        evaluation, best = session.evaluate(position, limits)
        if evaluation.kind is not EvalKind.MATE_IN or evaluation.value != k or best is None:
            return None
        line.append(best)
        position = position.apply_move(best)
        if k == 1:
            return line if position.is_checkmate() else None
        _, reply = session.evaluate(position, limits)
        if reply is None:
            return None
        line.append(reply)
        position = position.apply_move(reply)
    return None


def play_and_mine(base, weak, rng, wanted, scan, confirm, max_plies=300):
    """Play one game; return (n, Puzzle) for the first wanted mate found, else None."""
    position = parse_fen(STARTING_FEN)
    base_white = rng.random() < 0.5
    for _ in range(rng.randint(4, 10)):
        legal = position.legal_moves()
        if not legal:
            return None
        position = position._push(rng.choice(legal))
    base.new_game()
    weak.new_game()
    previous = None
    for _ in range(max_plies):
        if not position.has_legal_move():
            return None
        base_to_move = position.turn == base_white
        session = base if base_to_move else weak
        evaluation, best = session.evaluate(position, scan)
        if (
            base_to_move
            and previous is not None
            and evaluation.kind is EvalKind.MATE_IN
            and evaluation.value in wanted
        ):
            n = evaluation.value
            line = mating_line(base, position, n, confirm)
            if line is not None:
                before, setup = previous
                moves = [setup.uci()] + [m.uci() for m in line]
                pieces = popcount(position.co[True] | position.co[False])
                themes = {f"mateIn{n}", "mate", LENGTH_THEME[n], "endgame" if pieces <= 12 else "middlegame"}
                fen = render_fen(before)
                puzzle = Puzzle(puzzle_id(fen, moves), fen, tuple(moves), themes=frozenset(themes))
                validate_puzzle(puzzle)
                expand_puzzle(puzzle)
                return n, puzzle
        if best is None:
            return None
        previous = (position, best) if not base_to_move else None
        position = position.apply_move(best)
    return None


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--counts", type=int, nargs=3, default=[60, 40, 40], metavar=("M1", "M2", "M3"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--engine", default="stockfish")
    ap.add_argument("--scan-depth", type=int, default=10)
    ap.add_argument("--confirm-depth", type=int, default=20)
    ap.add_argument("--max-games", type=int, default=2000)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    rng = random.Random(args.seed)
    need = {n: c for n, c in zip((1, 2, 3), args.counts)}
    found: list[Puzzle] = []
    seen_ids: set[str] = set()
    scan = EngineLimits(depth=args.scan_depth)
    confirm = EngineLimits(depth=args.confirm_depth)
    start = time.monotonic()
    with open_session(EngineConfig(args.engine)) as base, \
            open_session(EngineConfig(args.engine, skill_level=0)) as weak:
        for game_no in range(args.max_games):
            wanted = {n for n, c in need.items() if c > 0}
            if not wanted:
                break
            hit = play_and_mine(base, weak, rng, wanted, scan, confirm)
            if hit is None:
                continue
            n, puzzle = hit
            if puzzle.id in seen_ids:
                continue
            seen_ids.add(puzzle.id)
            need[n] -= 1
            found.append(puzzle)
            log.info("game %d: mateIn%d %s (remaining %s, %.0fs)", game_no, n, puzzle.id, need, time.monotonic() - start)
    found.sort(key=lambda p: (p.mate_in, p.id))
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        write_puzzles(found, fh)
    log.info("wrote %d puzzles to %s", len(found), args.out)
    return 0 if not any(need.values()) else 1


if __name__ == "__main__":
    sys.exit(main())
