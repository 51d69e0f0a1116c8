"""Chess rules kernel: bitboard position, FEN, legal move generation, perft.

Squares are integers 0..63 with a1 = 0, b1 = 1, ..., h8 = 63. Bitboards are
plain Python ints. Positions are immutable; ``apply_move`` returns a new one.

Legal moves are produced in a fixed, deterministic order: non-pawn pieces by
origin square (high to low) with targets high to low, then castling, pawn
captures, single pushes, double pushes and en passant. When in check, king
moves come first, followed by captures and interpositions. Feedback messages
that list legal moves depend on this order.
"""

from __future__ import annotations

import re
from typing import Iterator, NamedTuple, Optional

WHITE = True
BLACK = False
COLOR_NAMES = {WHITE: "white", BLACK: "black"}

PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING = range(1, 7)
PIECE_SYMBOLS = [None, "p", "n", "b", "r", "q", "k"]
PIECE_NAMES = [None, "pawn", "knight", "bishop", "rook", "queen", "king"]
PROMOTION_TYPES = (QUEEN, ROOK, BISHOP, KNIGHT)

FILE_NAMES = "abcdefgh"
RANK_NAMES = "12345678"
SQUARE_NAMES = [f + r for r in RANK_NAMES for f in FILE_NAMES]

STARTING_FEN = "rnbqkbnr/pppppppp/8/8/8/8/PPPPPPPP/RNBQKBNR w KQkq - 0 1"

BB_ALL = 0xFFFF_FFFF_FFFF_FFFF
BB_SQUARES = [1 << s for s in range(64)]
BB_FILES = [0x0101_0101_0101_0101 << f for f in range(8)]
BB_RANKS = [0xFF << (8 * r) for r in range(8)]
BB_BACKRANKS = BB_RANKS[0] | BB_RANKS[7]

A1, C1, D1, E1, F1, G1, H1 = 0, 2, 3, 4, 5, 6, 7
A8, C8, D8, E8, F8, G8, H8 = 56, 58, 59, 60, 61, 62, 63


def square(file: int, rank: int) -> int:
    return rank * 8 + file


def square_file(sq: int) -> int:
    return sq & 7


def square_rank(sq: int) -> int:
    return sq >> 3


def square_name(sq: int) -> str:
    return SQUARE_NAMES[sq]


def parse_square(name: str) -> int:
    try:
        return SQUARE_NAMES.index(name)
    except ValueError:
        raise ValueError(f"invalid square name: {name!r}") from None


def square_distance(a: int, b: int) -> int:
    return max(abs(square_file(a) - square_file(b)), abs(square_rank(a) - square_rank(b)))


def lsb(bb: int) -> int:
    return (bb & -bb).bit_length() - 1


def msb(bb: int) -> int:
    return bb.bit_length() - 1


def scan_reversed(bb: int) -> Iterator[int]:
    while bb:
        sq = bb.bit_length() - 1
        yield sq
        bb ^= 1 << sq


def popcount(bb: int) -> int:
    return bin(bb).count("1")


# ---------------------------------------------------------------------------
# Attack tables
# ---------------------------------------------------------------------------


def _sliding_attacks(sq: int, occupied: int, deltas: tuple[int, ...]) -> int:
    attacks = 0
    for delta in deltas:
        s = sq
        while True:
            s += delta
            if not 0 <= s < 64 or square_distance(s, s - delta) > 2:
                break
            attacks |= 1 << s
            if occupied & (1 << s):
                break
    return attacks


def _step_attacks(sq: int, deltas: tuple[int, ...]) -> int:
    return _sliding_attacks(sq, BB_ALL, deltas)


BB_KNIGHT_ATTACKS = [_step_attacks(s, (17, 15, 10, 6, -17, -15, -10, -6)) for s in range(64)]
BB_KING_ATTACKS = [_step_attacks(s, (9, 8, 7, 1, -9, -8, -7, -1)) for s in range(64)]
BB_PAWN_ATTACKS = {
    BLACK: [_step_attacks(s, (-7, -9)) for s in range(64)],
    WHITE: [_step_attacks(s, (7, 9)) for s in range(64)],
}


def _edges(sq: int) -> int:
    return ((BB_RANKS[0] | BB_RANKS[7]) & ~BB_RANKS[square_rank(sq)]) | (
        (BB_FILES[0] | BB_FILES[7]) & ~BB_FILES[square_file(sq)]
    )


def _attack_table(deltas: tuple[int, ...]) -> tuple[list[int], list[dict[int, int]]]:
    masks = []
    tables = []
    for sq in range(64):
        mask = _sliding_attacks(sq, 0, deltas) & ~_edges(sq)
        table = {}
        subset = 0
        while True:
            table[subset] = _sliding_attacks(sq, subset, deltas)
            subset = (subset - mask) & mask
            if not subset:
                break
        masks.append(mask)
        tables.append(table)
    return masks, tables


BB_DIAG_MASKS, BB_DIAG_ATTACKS = _attack_table((-9, -7, 7, 9))
BB_FILE_MASKS, BB_FILE_ATTACKS = _attack_table((-8, 8))
BB_RANK_MASKS, BB_RANK_ATTACKS = _attack_table((-1, 1))


def _rays() -> list[list[int]]:
    rays = []
    for a in range(64):
        row = []
        bb_a = BB_SQUARES[a]
        for b in range(64):
            bb_b = BB_SQUARES[b]
            if BB_DIAG_ATTACKS[a][0] & bb_b:
                row.append((BB_DIAG_ATTACKS[a][0] & BB_DIAG_ATTACKS[b][0]) | bb_a | bb_b)
            elif BB_RANK_ATTACKS[a][0] & bb_b:
                row.append(BB_RANK_ATTACKS[a][0] | bb_a)
            elif BB_FILE_ATTACKS[a][0] & bb_b:
                row.append(BB_FILE_ATTACKS[a][0] | bb_a)
            else:
                row.append(0)
        rays.append(row)
    return rays


BB_RAYS = _rays()


def ray(a: int, b: int) -> int:
    """Full line through ``a`` and ``b`` (edge to edge), or 0 if not aligned."""
    return BB_RAYS[a][b]


def between(a: int, b: int) -> int:
    bb = BB_RAYS[a][b] & ((BB_ALL << a) ^ (BB_ALL << b))
    return bb & (bb - 1)


# ---------------------------------------------------------------------------
# Moves
# ---------------------------------------------------------------------------


class Move(NamedTuple):
    from_square: int
    to_square: int
    promotion: Optional[int] = None

    def uci(self) -> str:
        text = SQUARE_NAMES[self.from_square] + SQUARE_NAMES[self.to_square]
        if self.promotion:
            text += PIECE_SYMBOLS[self.promotion]
        return text

    @classmethod
    def from_uci(cls, text: str) -> "Move":
        """Parse coordinate notation without checking legality."""
        m = _UCI_RE.match(text)
        if not m:
            raise ValueError(f"invalid uci: {text!r}")
        promo = PIECE_SYMBOLS.index(m.group(3)) if m.group(3) else None
        frm, to = parse_square(m.group(1)), parse_square(m.group(2))
        if frm == to:
            raise ValueError(f"invalid uci: {text!r}")
        return cls(frm, to, promo)

    def __str__(self) -> str:
        return self.uci()


_UCI_RE = re.compile(r"^([a-h][1-8])([a-h][1-8])([qrbn])?$")


class Piece(NamedTuple):
    piece_type: int
    color: bool

    def symbol(self) -> str:
        s = PIECE_SYMBOLS[self.piece_type]
        return s.upper() if self.color else s

    @classmethod
    def from_symbol(cls, symbol: str) -> "Piece":
        return cls(PIECE_SYMBOLS.index(symbol.lower()), symbol.isupper())


class FenError(ValueError):
    """Raised for malformed or illegal FEN input."""


class IllegalMoveError(ValueError):
    """Raised when a move is not legal in the given position."""


_CASTLING_SQUARES = {"K": H1, "Q": A1, "k": H8, "q": A8}
_CASTLING_ORDER = ((H1, "K"), (A1, "Q"), (H8, "k"), (A8, "q"))


# ---------------------------------------------------------------------------
# Position
# ---------------------------------------------------------------------------


class Position:
    """Immutable chess position.

    ``bbs`` holds one bitboard per piece type indexed by PAWN..KING (index 0
    is unused); ``co`` holds the occupancy of (black, white). ``castling`` is
    a bitboard of rook squares that still carry castling rights.
    """

    __slots__ = ("bbs", "co", "turn", "castling", "ep_square", "halfmove_clock", "fullmove_number")

    def __init__(
        self,
        bbs: tuple[int, ...],
        co: tuple[int, int],
        turn: bool,
        castling: int,
        ep_square: Optional[int],
        halfmove_clock: int,
        fullmove_number: int,
    ) -> None:
        self.bbs = bbs
        self.co = co
        self.turn = turn
        self.castling = castling
        self.ep_square = ep_square
        self.halfmove_clock = halfmove_clock
        self.fullmove_number = fullmove_number

    # -- construction ------------------------------------------------------

    @classmethod
    def initial(cls) -> "Position":
        return parse_fen(STARTING_FEN)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Position):
            return NotImplemented
        return (
            self.bbs == other.bbs
            and self.co == other.co
            and self.turn == other.turn
            and self.castling == other.castling
            and self.ep_square == other.ep_square
            and self.halfmove_clock == other.halfmove_clock
            and self.fullmove_number == other.fullmove_number
        )

    def __hash__(self) -> int:
        return hash((self.bbs, self.co, self.turn, self.castling, self.ep_square,
                     self.halfmove_clock, self.fullmove_number))

    def __repr__(self) -> str:
        return f"Position({render_fen(self)!r})"

    # -- piece access ------------------------------------------------------

    @property
    def occupied(self) -> int:
        return self.co[0] | self.co[1]

    @property
    def side_to_move(self) -> bool:
        return self.turn

    @property
    def castling_rights(self) -> tuple[bool, bool, bool, bool]:
        """Castling availability as (K, Q, k, q)."""
        return tuple(bool(self.castling & BB_SQUARES[sq]) for sq, _ in _CASTLING_ORDER)

    def piece_type_at(self, sq: int) -> Optional[int]:
        mask = BB_SQUARES[sq]
        if not (self.co[0] | self.co[1]) & mask:
            return None
        bbs = self.bbs
        for pt in (PAWN, KNIGHT, BISHOP, ROOK, QUEEN, KING):
            if bbs[pt] & mask:
                return pt
        return None

    def piece_at(self, sq: int) -> Optional[Piece]:
        pt = self.piece_type_at(sq)
        if pt is None:
            return None
        return Piece(pt, bool(self.co[WHITE] & BB_SQUARES[sq]))

    def placement(self) -> dict[int, Piece]:
        """Occupied squares mapped to their pieces."""
        return {sq: self.piece_at(sq) for sq in scan_reversed(self.occupied)}

    def king(self, color: bool) -> Optional[int]:
        bb = self.bbs[KING] & self.co[color]
        return msb(bb) if bb else None

    # -- attacks -----------------------------------------------------------

    def attacks_mask(self, sq: int) -> int:
        bb = BB_SQUARES[sq]
        bbs = self.bbs
        if bbs[PAWN] & bb:
            return BB_PAWN_ATTACKS[bool(self.co[WHITE] & bb)][sq]
        if bbs[KNIGHT] & bb:
            return BB_KNIGHT_ATTACKS[sq]
        if bbs[KING] & bb:
            return BB_KING_ATTACKS[sq]
        occ = self.co[0] | self.co[1]
        attacks = 0
        if bbs[BISHOP] & bb or bbs[QUEEN] & bb:
            attacks = BB_DIAG_ATTACKS[sq][BB_DIAG_MASKS[sq] & occ]
        if bbs[ROOK] & bb or bbs[QUEEN] & bb:
            attacks |= BB_RANK_ATTACKS[sq][BB_RANK_MASKS[sq] & occ] | BB_FILE_ATTACKS[sq][BB_FILE_MASKS[sq] & occ]
        return attacks

    def attackers_mask(self, color: bool, sq: int, occupied: Optional[int] = None) -> int:
        bbs = self.bbs
        occ = (self.co[0] | self.co[1]) if occupied is None else occupied
        queens_and_rooks = bbs[QUEEN] | bbs[ROOK]
        queens_and_bishops = bbs[QUEEN] | bbs[BISHOP]
        attackers = (
            (BB_KING_ATTACKS[sq] & bbs[KING])
            | (BB_KNIGHT_ATTACKS[sq] & bbs[KNIGHT])
            | (BB_RANK_ATTACKS[sq][BB_RANK_MASKS[sq] & occ] & queens_and_rooks)
            | (BB_FILE_ATTACKS[sq][BB_FILE_MASKS[sq] & occ] & queens_and_rooks)
            | (BB_DIAG_ATTACKS[sq][BB_DIAG_MASKS[sq] & occ] & queens_and_bishops)
            | (BB_PAWN_ATTACKS[not color][sq] & bbs[PAWN])
        )
        return attackers & self.co[color] & occ

    def is_attacked_by(self, color: bool, sq: int) -> bool:
        return bool(self.attackers_mask(color, sq))

    def checkers(self) -> int:
        king = self.king(self.turn)
        return 0 if king is None else self.attackers_mask(not self.turn, king)

    def is_check(self) -> bool:
        return bool(self.checkers())

    def _slider_blockers(self, king: int) -> int:
        bbs = self.bbs
        rooks_and_queens = bbs[ROOK] | bbs[QUEEN]
        bishops_and_queens = bbs[BISHOP] | bbs[QUEEN]
        snipers = (
            (BB_RANK_ATTACKS[king][0] & rooks_and_queens)
            | (BB_FILE_ATTACKS[king][0] & rooks_and_queens)
            | (BB_DIAG_ATTACKS[king][0] & bishops_and_queens)
        )
        occ = self.co[0] | self.co[1]
        blockers = 0
        for sniper in scan_reversed(snipers & self.co[not self.turn]):
            b = between(king, sniper) & occ
            if b and not b & (b - 1):
                blockers |= b
        return blockers & self.co[self.turn]

    # -- move generation ---------------------------------------------------

    def _pseudo_legal(self, from_mask: int = BB_ALL, to_mask: int = BB_ALL) -> Iterator[Move]:
        bbs = self.bbs
        turn = self.turn
        ours = self.co[turn]
        theirs = self.co[not turn]
        occ = ours | theirs

        for frm in scan_reversed(ours & ~bbs[PAWN] & from_mask):
            for to in scan_reversed(self.attacks_mask(frm) & ~ours & to_mask):
                yield Move(frm, to)

        if from_mask & bbs[KING]:
            yield from self._castling_moves(to_mask)

        pawns = bbs[PAWN] & ours & from_mask
        if not pawns:
            return

        attacks = BB_PAWN_ATTACKS[turn]
        for frm in scan_reversed(pawns):
            for to in scan_reversed(attacks[frm] & theirs & to_mask):
                if BB_SQUARES[to] & BB_BACKRANKS:
                    for promo in PROMOTION_TYPES:
                        yield Move(frm, to, promo)
                else:
                    yield Move(frm, to)

        if turn:
            single = pawns << 8 & ~occ & BB_ALL
            double = single << 8 & ~occ & BB_RANKS[3]
            step = -8
        else:
            single = pawns >> 8 & ~occ
            double = single >> 8 & ~occ & BB_RANKS[4]
            step = 8
        single &= to_mask
        double &= to_mask

        for to in scan_reversed(single):
            frm = to + step
            if BB_SQUARES[to] & BB_BACKRANKS:
                for promo in PROMOTION_TYPES:
                    yield Move(frm, to, promo)
            else:
                yield Move(frm, to)

        for to in scan_reversed(double):
            yield Move(to + 2 * step, to)

        if self.ep_square is not None:
            yield from self._pseudo_legal_ep(from_mask, to_mask)

    def _pseudo_legal_ep(self, from_mask: int = BB_ALL, to_mask: int = BB_ALL) -> Iterator[Move]:
        ep = self.ep_square
        if ep is None or not BB_SQUARES[ep] & to_mask or BB_SQUARES[ep] & self.occupied:
            return
        capturers = (
            self.bbs[PAWN]
            & self.co[self.turn]
            & from_mask
            & BB_PAWN_ATTACKS[not self.turn][ep]
            & BB_RANKS[4 if self.turn else 3]
        )
        for frm in scan_reversed(capturers):
            yield Move(frm, ep)

    def _castling_moves(self, to_mask: int = BB_ALL) -> Iterator[Move]:
        turn = self.turn
        backrank = BB_RANKS[0] if turn else BB_RANKS[7]
        king_sq = E1 if turn else E8
        if not self.bbs[KING] & self.co[turn] & BB_SQUARES[king_sq]:
            return
        occ = self.occupied
        our_rooks = self.bbs[ROOK] & self.co[turn]
        for rook_sq in scan_reversed(self.castling & backrank & our_rooks):
            kingside = rook_sq > king_sq
            king_to = king_sq + 2 if kingside else king_sq - 2
            if not BB_SQUARES[king_to] & to_mask:
                continue
            if between(king_sq, rook_sq) & occ:
                continue
            path = between(king_sq, king_to) | BB_SQUARES[king_to] | BB_SQUARES[king_sq]
            if any(self.attackers_mask(not turn, s) for s in scan_reversed(path)):
                continue
            yield Move(king_sq, king_to)

    def _evasions(self, king: int, checkers: int) -> Iterator[Move]:
        bbs = self.bbs
        sliders = checkers & (bbs[BISHOP] | bbs[ROOK] | bbs[QUEEN])
        attacked = 0
        for checker in scan_reversed(sliders):
            attacked |= ray(king, checker) & ~BB_SQUARES[checker]
        for to in scan_reversed(BB_KING_ATTACKS[king] & ~self.co[self.turn] & ~attacked):
            yield Move(king, to)

        checker = msb(checkers)
        if BB_SQUARES[checker] == checkers:
            target = between(king, checker) | checkers
            yield from self._pseudo_legal(~bbs[KING] & BB_ALL, target)
            if self.ep_square is not None and not BB_SQUARES[self.ep_square] & target:
                last_double = self.ep_square + (-8 if self.turn else 8)
                if last_double == checker:
                    yield from self._pseudo_legal_ep()

    def _is_safe(self, king: int, blockers: int, move: Move) -> bool:
        frm, to = move.from_square, move.to_square
        if frm == king:
            if abs(to - frm) == 2:
                return True
            return not self.attackers_mask(not self.turn, to)
        if to == self.ep_square and self.bbs[PAWN] & BB_SQUARES[frm] and not self.occupied & BB_SQUARES[to]:
            after = self._push(move)
            return not after.attackers_mask(not self.turn, king)
        return not blockers & BB_SQUARES[frm] or bool(ray(frm, to) & BB_SQUARES[king])

    def generate_legal_moves(self) -> Iterator[Move]:
        king = self.king(self.turn)
        if king is None:
            return
        blockers = self._slider_blockers(king)
        checkers = self.attackers_mask(not self.turn, king)
        moves = self._evasions(king, checkers) if checkers else self._pseudo_legal()
        for move in moves:
            if self._is_safe(king, blockers, move):
                yield move

    def legal_moves(self) -> tuple[Move, ...]:
        """All legal moves in canonical generation order."""
        return tuple(self.generate_legal_moves())

    def is_legal(self, move: Move) -> bool:
        return move in self.legal_moves()

    def has_legal_move(self) -> bool:
        return next(self.generate_legal_moves(), None) is not None

    # -- move classification ------------------------------------------------

    def is_capture(self, move: Move) -> bool:
        return bool(self.co[not self.turn] & BB_SQUARES[move.to_square]) or self.is_en_passant(move)

    def is_en_passant(self, move: Move) -> bool:
        return (
            self.ep_square == move.to_square
            and bool(self.bbs[PAWN] & BB_SQUARES[move.from_square])
            and abs(move.to_square - move.from_square) in (7, 9)
            and not self.occupied & BB_SQUARES[move.to_square]
        )

    def is_castling(self, move: Move) -> bool:
        return bool(self.bbs[KING] & BB_SQUARES[move.from_square]) and abs(
            square_file(move.from_square) - square_file(move.to_square)
        ) == 2

    # -- terminal states ---------------------------------------------------

    def is_checkmate(self) -> bool:
        return self.is_check() and not self.has_legal_move()

    def is_stalemate(self) -> bool:
        return not self.is_check() and not self.has_legal_move()

    def is_insufficient_material(self) -> bool:
        bbs = self.bbs
        if bbs[PAWN] | bbs[ROOK] | bbs[QUEEN]:
            return False
        minors = bbs[KNIGHT] | bbs[BISHOP]
        if popcount(minors) <= 1:
            return True
        if bbs[KNIGHT]:
            return False
        dark = 0xAA55_AA55_AA55_AA55
        return not bbs[BISHOP] & dark or not bbs[BISHOP] & ~dark & BB_ALL

    # -- successor ---------------------------------------------------------

    def apply_move(self, move: Move) -> "Position":
        """Return the successor position; raise IllegalMoveError if illegal."""
        if move not in self.legal_moves():
            raise IllegalMoveError(f"illegal move {move.uci()} in {render_fen(self)}")
        return self._push(move)

    def _push(self, move: Move) -> "Position":
        frm, to, promo = move
        turn = self.turn
        bbs = list(self.bbs)
        co = [self.co[0], self.co[1]]
        from_bb = BB_SQUARES[frm]
        to_bb = BB_SQUARES[to]

        piece = self.piece_type_at(frm)
        captured = self.piece_type_at(to) if co[not turn] & to_bb else None

        bbs[piece] ^= from_bb
        co[turn] ^= from_bb
        if captured is not None:
            bbs[captured] ^= to_bb
            co[not turn] ^= to_bb

        ep_square = None
        castling = self.castling
        halfmove = self.halfmove_clock + 1

        if piece == PAWN:
            halfmove = 0
            diff = to - frm
            if diff in (16, -16):
                ep_square = frm + diff // 2
            elif to == self.ep_square and captured is None and diff not in (8, -8):
                cap_sq = to - 8 if turn else to + 8
                bbs[PAWN] ^= BB_SQUARES[cap_sq]
                co[not turn] ^= BB_SQUARES[cap_sq]
        elif piece == KING:
            castling &= ~(BB_RANKS[0] if turn else BB_RANKS[7])
            if to - frm == 2:
                rook_from, rook_to = frm + 3, frm + 1
                bbs[ROOK] ^= BB_SQUARES[rook_from] | BB_SQUARES[rook_to]
                co[turn] ^= BB_SQUARES[rook_from] | BB_SQUARES[rook_to]
            elif frm - to == 2:
                rook_from, rook_to = frm - 4, frm - 1
                bbs[ROOK] ^= BB_SQUARES[rook_from] | BB_SQUARES[rook_to]
                co[turn] ^= BB_SQUARES[rook_from] | BB_SQUARES[rook_to]
        if captured is not None:
            halfmove = 0
        castling &= ~from_bb & ~to_bb

        placed = promo if promo else piece
        bbs[placed] |= to_bb
        co[turn] |= to_bb

        return Position(
            tuple(bbs),
            (co[0], co[1]),
            not turn,
            castling,
            ep_square,
            halfmove,
            self.fullmove_number + (0 if turn else 1),
        )._drop_dead_ep()

    def _drop_dead_ep(self) -> "Position":
        # only a capturable en-passant square is kept, as in FEN written by python-chess and Lichess
        if self.ep_square is not None and not self.has_legal_en_passant():
            self.ep_square = None
        return self

    # -- keys --------------------------------------------------------------

    def has_legal_en_passant(self) -> bool:
        if self.ep_square is None:
            return False
        king = self.king(self.turn)
        if king is None:
            return False
        return any(self._is_safe(king, self._slider_blockers(king), m)
                   for m in self._pseudo_legal_ep())

    def position_key(self) -> str:
        """FEN fields 1-4 with the en-passant square kept only when capturable.

        Clock fields are dropped, so the same arrangement reached at different
        move numbers shares a key.
        """
        return " ".join(render_fen(self).split(" ")[:4])


# ---------------------------------------------------------------------------
# FEN
# ---------------------------------------------------------------------------


def parse_fen(text: str) -> Position:
    """Parse a 6-field FEN string into a validated Position."""
    if not isinstance(text, str):
        raise FenError("fen must be a string")
    fields = text.split()
    if len(fields) != 6:
        raise FenError(f"expected 6 fen fields, got {len(fields)}: {text!r}")
    board, side, castling_text, ep_text, half_text, full_text = fields

    rows = board.split("/")
    if len(rows) != 8:
        raise FenError(f"expected 8 ranks in placement: {board!r}")
    bbs = [0] * 7
    co = [0, 0]
    for i, row in enumerate(rows):
        rank = 7 - i
        file = 0
        prev_digit = False
        for ch in row:
            if ch in "12345678":
                if prev_digit:
                    raise FenError(f"consecutive digits in rank {row!r}")
                file += int(ch)
                prev_digit = True
            elif ch.lower() in "pnbrqk":
                if file >= 8:
                    raise FenError(f"too many squares in rank {row!r}")
                piece = Piece.from_symbol(ch)
                bb = BB_SQUARES[square(file, rank)]
                bbs[piece.piece_type] |= bb
                co[piece.color] |= bb
                file += 1
                prev_digit = False
            else:
                raise FenError(f"invalid placement character {ch!r}")
        if file != 8:
            raise FenError(f"rank {row!r} does not describe 8 squares")

    if side not in ("w", "b"):
        raise FenError(f"invalid side to move: {side!r}")
    turn = side == "w"

    castling = 0
    if castling_text != "-":
        if not re.fullmatch(r"K?Q?k?q?", castling_text) or not castling_text:
            raise FenError(f"invalid castling field: {castling_text!r}")
        for ch in castling_text:
            color = ch.isupper()
            rook_sq = _CASTLING_SQUARES[ch]
            king_sq = E1 if color else E8
            if not (bbs[KING] & co[color] & BB_SQUARES[king_sq] and bbs[ROOK] & co[color] & BB_SQUARES[rook_sq]):
                raise FenError(f"castling right {ch!r} without king and rook on their home squares")
            castling |= BB_SQUARES[rook_sq]

    try:
        halfmove = int(half_text)
        fullmove = int(full_text)
    except ValueError:
        raise FenError(f"invalid move clocks: {half_text!r} {full_text!r}") from None
    if not half_text.isdigit() or halfmove < 0:
        raise FenError(f"halfmove clock out of range: {half_text!r}")
    if not full_text.isdigit() or fullmove < 1:
        raise FenError(f"fullmove number out of range: {full_text!r}")

    for color in (WHITE, BLACK):
        kings = popcount(bbs[KING] & co[color])
        if kings != 1:
            raise FenError(f"{COLOR_NAMES[color]} has {kings} kings")
    if bbs[PAWN] & BB_BACKRANKS:
        raise FenError("pawns on the first or last rank")

    ep_square = None
    if ep_text != "-":
        if ep_text not in SQUARE_NAMES:
            raise FenError(f"invalid en passant square: {ep_text!r}")
        ep_square = parse_square(ep_text)
        expected_rank = 5 if turn else 2
        pawn_sq = ep_square - 8 if turn else ep_square + 8
        origin_sq = ep_square + 8 if turn else ep_square - 8
        occ = co[0] | co[1]
        if (
            square_rank(ep_square) != expected_rank
            or not bbs[PAWN] & co[not turn] & BB_SQUARES[pawn_sq]
            or occ & (BB_SQUARES[ep_square] | BB_SQUARES[origin_sq])
        ):
            raise FenError(f"en passant square {ep_text} inconsistent with a double pawn push")

    position = Position(tuple(bbs), (co[0], co[1]), turn, castling, ep_square, halfmove, fullmove)._drop_dead_ep()
    their_king = position.king(not turn)
    if position.attackers_mask(turn, their_king):
        raise FenError("side not to move is in check")
    return position


def render_fen(position: Position) -> str:
    rows = []
    for rank in range(7, -1, -1):
        row = ""
        empty = 0
        for file in range(8):
            piece = position.piece_at(square(file, rank))
            if piece is None:
                empty += 1
            else:
                if empty:
                    row += str(empty)
                    empty = 0
                row += piece.symbol()
        if empty:
            row += str(empty)
        rows.append(row)
    castling = "".join(ch for sq, ch in _CASTLING_ORDER if position.castling & BB_SQUARES[sq]) or "-"
    ep = SQUARE_NAMES[position.ep_square] if position.ep_square is not None else "-"
    return (
        f"{'/'.join(rows)} {'w' if position.turn else 'b'} {castling} {ep} "
        f"{position.halfmove_clock} {position.fullmove_number}"
    )


# ---------------------------------------------------------------------------
# Module-level conveniences
# ---------------------------------------------------------------------------


def legal_moves(position: Position) -> tuple[Move, ...]:
    return position.legal_moves()


def apply_move(position: Position, move: Move) -> Position:
    return position.apply_move(move)


def is_checkmate(position: Position) -> bool:
    return position.is_checkmate()


def is_stalemate(position: Position) -> bool:
    return position.is_stalemate()


def perft(position: Position, depth: int) -> int:
    """Count leaf nodes of the legal move tree at exactly ``depth`` plies."""
    if depth < 0:
        raise ValueError("depth must be >= 0")
    if depth == 0:
        return 1
    moves = position.legal_moves()
    if depth == 1:
        return len(moves)
    return sum(perft(position._push(m), depth - 1) for m in moves)
