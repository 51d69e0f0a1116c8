"""Minimal PGN export/import for self-play archives."""

from __future__ import annotations

import re
import textwrap
from typing import Iterator, Optional, TextIO

from .board import STARTING_FEN, parse_fen
from .engine import Game
from .notation import parse_san, render_san

TAG_RE = re.compile(r'^\[(\w+)\s+"((?:[^"\\]|\\.)*)"\]\s*$')
RESULTS = ("1-0", "0-1", "1/2-1/2", "*")
_COMMENT_RE = re.compile(r"\{[^}]*\}|;[^\n]*")
_MOVE_NUMBER_RE = re.compile(r"^\d+\.+$")
_TOKEN_RE = re.compile(r"\d+\.+|\S+")


class PgnError(ValueError):
    pass


def _escape(value: str) -> str:
    return value.replace("\\", "\\\\").replace('"', '\\"')


def game_tags(game: Game, event: str = "Self-play", round_: str = "?") -> dict[str, str]:
    tags = {
        "Event": event,
        "Site": "local",
        "Date": "????.??.??",
        "Round": round_,
        "White": game.white,
        "Black": game.black,
        "Result": game.result if game.result in RESULTS else "*",
    }
    if game.white_level is not None:
        tags["WhiteSkillLevel"] = str(game.white_level)
    if game.black_level is not None:
        tags["BlackSkillLevel"] = str(game.black_level)
    if game.termination:
        tags["Termination"] = game.termination
    if game.start_fen != STARTING_FEN:
        tags["SetUp"] = "1"
        tags["FEN"] = game.start_fen
    return tags


def movetext(game: Game) -> str:
    position = parse_fen(game.start_fen)
    parts: list[str] = []
    for i, move in enumerate(game.moves):
        if position.turn or i == 0:
            number = f"{position.fullmove_number}." if position.turn else f"{position.fullmove_number}..."
            parts.append(number)
        parts.append(render_san(position, move))
        position = position._push(move)
    parts.append(game.result if game.result in RESULTS else "*")
    return "\n".join(textwrap.wrap(" ".join(parts), 79))


def write_game(game: Game, out: TextIO, event: str = "Self-play", round_: str = "?") -> None:
    for name, value in game_tags(game, event, round_).items():
        out.write(f'[{name} "{_escape(value)}"]\n')
    out.write("\n" + movetext(game) + "\n\n")


def _finish(tags: dict[str, str], tokens: list[str]) -> Game:
    start_fen = tags.get("FEN", STARTING_FEN)
    position = parse_fen(start_fen)
    result = "*"
    moves = []
    for token in tokens:
        if token in RESULTS:
            result = token
            continue
        if _MOVE_NUMBER_RE.match(token):
            continue
        move = parse_san(token, position)
        moves.append(move)
        position = position._push(move)

    def level(name: str) -> Optional[int]:
        return int(tags[name]) if name in tags else None

    return Game(
        white=tags.get("White", "?"),
        black=tags.get("Black", "?"),
        moves=moves,
        result="aborted" if result == "*" else result,
        termination=tags.get("Termination", ""),
        start_fen=start_fen,
        white_level=level("WhiteSkillLevel"),
        black_level=level("BlackSkillLevel"),
    )


def read_games(source: TextIO) -> Iterator[Game]:
    tags: dict[str, str] = {}
    body: list[str] = []
    in_body = False
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if line.startswith("["):
            if in_body:
                yield _finish(tags, _tokens(body))
                tags, body, in_body = {}, [], False
            m = TAG_RE.match(line)
            if not m:
                raise PgnError(f"line {lineno}: malformed tag {line!r}")
            tags[m.group(1)] = re.sub(r"\\(.)", r"\1", m.group(2))
        elif line:
            in_body = True
            body.append(line)
    if tags or body:
        yield _finish(tags, _tokens(body))


def _tokens(lines: list[str]) -> list[str]:
    return _TOKEN_RE.findall(_COMMENT_RE.sub(" ", "\n".join(lines)))
