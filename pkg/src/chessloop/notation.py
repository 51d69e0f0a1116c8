"""UCI and SAN move text: parsing against a position and rendering."""

from __future__ import annotations

import re

from .board import (
    BB_FILES,
    BB_RANKS,
    BB_SQUARES,
    FILE_NAMES,
    KING,
    PAWN,
    PIECE_SYMBOLS,
    RANK_NAMES,
    SQUARE_NAMES,
    IllegalMoveError,
    Move,
    Position,
    parse_square,
    square_file,
    square_rank,
)


class MoveTextError(ValueError):
    """Base class for move text that cannot be resolved to a legal move."""


class NoParseError(MoveTextError):
    """Token matches neither the UCI nor the SAN grammar."""


class IllegalMoveTextError(MoveTextError, IllegalMoveError):
    """Token is well formed but denotes no legal move in the position."""


class AmbiguousMoveError(MoveTextError):
    """SAN token matches more than one legal move."""


UCI_RE = re.compile(r"^([a-h][1-8])([a-h][1-8])([qrbn])?$")
SAN_RE = re.compile(r"^([NBKRQ])?([a-h])?([1-8])?[\-x]?([a-h][1-8])(=?[nbrqNBRQ])?$")
CASTLING_RE = re.compile(r"^([O0])-\1(-\1)?$")
_ANNOTATIONS = "+#!?"


def render_uci(move: Move) -> str:
    return move.uci()


def parse_uci(text: str, position: Position) -> Move:
    m = UCI_RE.match(text)
    if not m:
        raise NoParseError(f"not a uci move: {text!r}")
    promo = PIECE_SYMBOLS.index(m.group(3)) if m.group(3) else None
    move = Move(parse_square(m.group(1)), parse_square(m.group(2)), promo)
    if move not in position.legal_moves():
        raise IllegalMoveTextError(f"illegal move {text!r}")
    return move


def parse_san(text: str, position: Position) -> Move:
    token = text.rstrip(_ANNOTATIONS)
    legal = position.legal_moves()

    castle = CASTLING_RE.match(token)
    if castle:
        long = castle.group(2) is not None
        for move in legal:
            if position.is_castling(move) and (move.to_square < move.from_square) == long:
                return move
        raise IllegalMoveTextError(f"illegal castling {text!r}")

    m = SAN_RE.match(token)
    if not m:
        raise NoParseError(f"not a san move: {text!r}")
    piece_letter, from_file, from_rank, target, promo_text = m.groups()
    piece_type = PIECE_SYMBOLS.index(piece_letter.lower()) if piece_letter else PAWN
    to_square = parse_square(target)
    promotion = PIECE_SYMBOLS.index(promo_text[-1].lower()) if promo_text else None
    if promotion is not None and piece_type != PAWN:
        raise NoParseError(f"promotion on a non-pawn move: {text!r}")
    if promotion == KING:
        raise NoParseError(f"cannot promote to king: {text!r}")

    from_mask = position.co[position.turn] & position.bbs[piece_type]
    if from_file:
        from_mask &= BB_FILES[FILE_NAMES.index(from_file)]
    if from_rank:
        from_mask &= BB_RANKS[RANK_NAMES.index(from_rank)]

    matches = [
        move
        for move in legal
        if move.to_square == to_square
        and BB_SQUARES[move.from_square] & from_mask
        and move.promotion == promotion
        and not position.is_castling(move)
    ]
    if not matches:
        raise IllegalMoveTextError(f"illegal san {text!r}")
    if len(matches) > 1:
        raise AmbiguousMoveError(f"ambiguous san {text!r}: {', '.join(m.uci() for m in matches)}")
    return matches[0]


def parse_move_text(text: str, position: Position) -> Move:
    """Resolve a single token as UCI first, then SAN.

    Upper-case coordinate text ("E2E4") is accepted only after SAN fails, since
    "B3e2" is valid SAN. Raises NoParseError, IllegalMoveTextError or
    AmbiguousMoveError.
    """
    token = text.strip()
    try:
        return parse_uci(token.rstrip(_ANNOTATIONS), position)
    except NoParseError:
        pass
    try:
        return parse_san(token, position)
    except NoParseError:
        return parse_uci(token.rstrip(_ANNOTATIONS).lower(), position)


def render_san(position: Position, move: Move) -> str:
    legal = position.legal_moves()
    if move not in legal:
        raise IllegalMoveError(f"illegal move {move.uci()}")

    if position.is_castling(move):
        san = "O-O" if move.to_square > move.from_square else "O-O-O"
    else:
        piece_type = position.piece_type_at(move.from_square)
        capture = position.is_capture(move)
        if piece_type == PAWN:
            san = FILE_NAMES[square_file(move.from_square)] + "x" if capture else ""
        else:
            san = PIECE_SYMBOLS[piece_type].upper()
            others = 0
            for other in legal:
                if (
                    other.to_square == move.to_square
                    and other.from_square != move.from_square
                    and position.piece_type_at(other.from_square) == piece_type
                ):
                    others |= BB_SQUARES[other.from_square]
            if others:
                row = column = False
                if others & BB_RANKS[square_rank(move.from_square)]:
                    column = True
                if others & BB_FILES[square_file(move.from_square)]:
                    row = True
                else:
                    column = True
                if column:
                    san += FILE_NAMES[square_file(move.from_square)]
                if row:
                    san += RANK_NAMES[square_rank(move.from_square)]
            if capture:
                san += "x"
        san += SQUARE_NAMES[move.to_square]
        if move.promotion:
            san += "=" + PIECE_SYMBOLS[move.promotion].upper()

    after = position._push(move)
    if after.is_check():
        san += "#" if not after.has_legal_move() else "+"
    return san
