"""UCI engine client: sessions, evaluation, best moves and self-play games.

Scores are kept in the engine's native convention: from the point of view of
the side to move. ``MateIn(k)`` with ``k > 0`` means the mover mates in ``k``
of its own moves; ``k < 0`` means the mover gets mated.
"""

from __future__ import annotations

import enum
import logging
import os
import queue
import shutil
import subprocess
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Protocol, Sequence

from .board import STARTING_FEN, IllegalMoveError, Move, Position, parse_fen, render_fen

log = logging.getLogger(__name__)

DEFAULT_EXECUTABLE = "stockfish"
ENGINE_ENV_VAR = "STOCKFISH_PATH"


class EngineError(RuntimeError):
    """Any failure talking to the engine process."""


class EngineSpawnError(EngineError):
    pass


class EngineTimeout(EngineError):
    pass


class EngineProtocolError(EngineError):
    pass


class TerminalPositionError(ValueError):
    """Raised when a best move is requested for a finished position."""


@dataclass(frozen=True)
class EngineLimits:
    """Search limits. ``movetime`` is in seconds; the wire format uses ms."""

    depth: Optional[int] = None
    movetime: Optional[float] = None

    def __post_init__(self) -> None:
        if self.depth is None and self.movetime is None:
            raise ValueError("at least one of depth or movetime must be set")
        if self.depth is not None and self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.movetime is not None:
            if self.movetime <= 0:
                raise ValueError("movetime must be > 0")
            ms = self.movetime * 1000
            if abs(ms - round(ms)) > 1e-6:
                raise ValueError("movetime must be a whole number of milliseconds")

    @property
    def movetime_ms(self) -> Optional[int]:
        return None if self.movetime is None else int(round(self.movetime * 1000))

    def go_command(self) -> str:
        parts = ["go"]
        if self.depth is not None:
            parts += ["depth", str(self.depth)]
        if self.movetime is not None:
            parts += ["movetime", str(self.movetime_ms)]
        return " ".join(parts)

    def to_dict(self) -> dict:
        return {"depth": self.depth, "movetime": self.movetime}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EngineLimits":
        return cls(depth=data.get("depth"), movetime=data.get("movetime"))


GROUND_TRUTH_LIMITS = EngineLimits(depth=20)


@dataclass(frozen=True)
class EngineConfig:
    executable: str = DEFAULT_EXECUTABLE
    skill_level: Optional[int] = None
    options: Mapping[str, str] = field(default_factory=dict)
    name: Optional[str] = None

    def __post_init__(self) -> None:
        if self.skill_level is not None and not 0 <= self.skill_level <= 20:
            raise ValueError("skill_level must be in 0..20")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        base = os.path.basename(self.executable) or "engine"
        return base if self.skill_level is None else f"{base} level {self.skill_level}"

    def uci_options(self) -> list[tuple[str, str]]:
        opts = []
        if self.skill_level is not None:
            opts.append(("Skill Level", str(self.skill_level)))
        opts.extend((str(k), str(v)) for k, v in self.options.items())
        return opts

    def to_dict(self) -> dict:
        return {
            "executable": self.executable,
            "skill_level": self.skill_level,
            "options": dict(self.options),
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EngineConfig":
        return cls(
            executable=data.get("executable", DEFAULT_EXECUTABLE),
            skill_level=data.get("skill_level"),
            options=dict(data.get("options") or {}),
            name=data.get("name"),
        )


def default_executable() -> str:
    return os.environ.get(ENGINE_ENV_VAR) or DEFAULT_EXECUTABLE


class EvalKind(enum.Enum):
    CENTIPAWNS = "cp"
    MATE_IN = "mate"
    TERMINAL_MATE = "terminal_mate"
    TERMINAL_STALEMATE = "terminal_stalemate"


_MATE_SCORE = 100_000


@dataclass(frozen=True)
class EngineEval:
    kind: EvalKind
    value: Optional[int] = None

    @classmethod
    def cp(cls, value: int) -> "EngineEval":
        return cls(EvalKind.CENTIPAWNS, int(value))

    @classmethod
    def mate(cls, moves: int) -> "EngineEval":
        if moves == 0:
            raise ValueError("mate distance 0 is a terminal position")
        return cls(EvalKind.MATE_IN, int(moves))

    @classmethod
    def terminal_mate(cls) -> "EngineEval":
        return cls(EvalKind.TERMINAL_MATE)

    @classmethod
    def terminal_stalemate(cls) -> "EngineEval":
        return cls(EvalKind.TERMINAL_STALEMATE)

    @property
    def is_mate(self) -> bool:
        return self.kind is EvalKind.MATE_IN

    @property
    def is_terminal(self) -> bool:
        return self.kind in (EvalKind.TERMINAL_MATE, EvalKind.TERMINAL_STALEMATE)

    def negate(self) -> "EngineEval":
        """Same verdict seen from the other side. Terminal kinds are unchanged."""
        if self.kind in (EvalKind.CENTIPAWNS, EvalKind.MATE_IN):
            return EngineEval(self.kind, -self.value)
        return self

    def score(self, *, terminal_mate_wins: bool = True) -> int:
        """Total order key: mating > any centipawn value > being mated.

        A TERMINAL_MATE seen after the mover's move means the opponent is
        mated, which ranks above every MateIn value.
        """
        if self.kind is EvalKind.CENTIPAWNS:
            return self.value
        if self.kind is EvalKind.MATE_IN:
            return _MATE_SCORE - self.value if self.value > 0 else -_MATE_SCORE - self.value
        if self.kind is EvalKind.TERMINAL_MATE:
            return _MATE_SCORE if terminal_mate_wins else -_MATE_SCORE
        return 0

    def __str__(self) -> str:
        if self.kind is EvalKind.CENTIPAWNS:
            return f"cp {self.value}"
        if self.kind is EvalKind.MATE_IN:
            return f"mate {self.value}"
        return self.kind.value

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "value": self.value}

    @classmethod
    def from_dict(cls, data: Mapping) -> "EngineEval":
        return cls(EvalKind(data["kind"]), data.get("value"))


def terminal_eval(position: Position) -> Optional[EngineEval]:
    """Eval for a finished position, or None if the mover has a legal move."""
    if position.has_legal_move():
        return None
    return EngineEval.terminal_mate() if position.is_check() else EngineEval.terminal_stalemate()


class Evaluator(Protocol):
    """Anything that can evaluate a position; engine sessions and test oracles."""

    def evaluate(self, position: Position, limits: EngineLimits) -> tuple[EngineEval, Optional[Move]]:
        ...


def parse_info_score(line: str) -> Optional[tuple[EngineEval, bool]]:
    """Extract the score from an ``info`` line.

    Returns (eval, is_bound) or None when the line carries no score.
    """
    tokens = line.split()
    if not tokens or tokens[0] != "info" or "score" not in tokens:
        return None
    i = tokens.index("score")
    try:
        unit, raw = tokens[i + 1], int(tokens[i + 2])
    except (IndexError, ValueError):
        raise EngineProtocolError(f"malformed score in {line!r}") from None
    bound = any(t in ("lowerbound", "upperbound") for t in tokens[i + 3:i + 4])
    if unit == "cp":
        return EngineEval.cp(raw), bound
    if unit == "mate":
        if raw == 0:
            return EngineEval.terminal_mate(), bound
        return EngineEval.mate(raw), bound
    raise EngineProtocolError(f"unknown score unit in {line!r}")


class EngineSession:
    """One engine process serving one request at a time.

    Requests on a session are serialized by a lock; each ``go`` is drained up
    to its ``bestmove`` before the next command is sent.
    """

    def __init__(
        self,
        config: EngineConfig,
        *,
        handshake_timeout: float = 30.0,
        search_timeout: float = 300.0,
        cache: bool = True,
    ) -> None:
        self.config = config
        self.handshake_timeout = handshake_timeout
        self.search_timeout = search_timeout
        self._cache: Optional[dict] = {} if cache else None
        self._lock = threading.Lock()
        self._lines: "queue.Queue[Optional[str]]" = queue.Queue()
        self.options: dict[str, str] = {}
        self.sent: list[str] = []
        self.engine_name: Optional[str] = None

        exe = shutil.which(config.executable) or config.executable
        try:
            self._proc = subprocess.Popen(
                [exe],
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise EngineSpawnError(f"cannot start engine {config.executable!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        try:
            self._handshake()
        except BaseException:
            self.close()
            raise

    # -- plumbing ----------------------------------------------------------

    def _pump(self) -> None:
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line.rstrip("\r\n"))
        self._lines.put(None)

    def _send(self, line: str) -> None:
        log.debug("engine << %s", line)
        self.sent.append(line)
        try:
            assert self._proc.stdin is not None
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise EngineError(f"engine pipe closed: {exc}") from exc

    def _read(self, deadline: float) -> str:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise EngineTimeout("engine did not answer in time")
        try:
            line = self._lines.get(timeout=remaining)
        except queue.Empty:
            raise EngineTimeout("engine did not answer in time") from None
        if line is None:
            raise EngineError("engine process exited")
        log.debug("engine >> %s", line)
        return line

    def _wait_for(self, token: str, timeout: float) -> list[str]:
        deadline = time.monotonic() + timeout
        seen = []
        while True:
            line = self._read(deadline)
            seen.append(line)
            if line.strip() == token:
                return seen

    def _handshake(self) -> None:
        self._send("uci")
        for line in self._wait_for("uciok", self.handshake_timeout):
            if line.startswith("id name "):
                self.engine_name = line[len("id name "):]
            elif line.startswith("option name "):
                rest = line[len("option name "):]
                name = rest.split(" type ")[0].strip()
                self.options[name.lower()] = name
        for name, value in self.config.uci_options():
            if name.lower() not in self.options:
                raise EngineError(f"engine does not support option {name!r}")
            self._send(f"setoption name {self.options[name.lower()]} value {value}")
        self.ping()

    def ping(self) -> None:
        self._send("isready")
        self._wait_for("readyok", self.handshake_timeout)

    # -- public API --------------------------------------------------------

    def new_game(self) -> None:
        with self._lock:
            self._send("ucinewgame")
            self.ping()

    def evaluate(self, position: Position, limits: EngineLimits = GROUND_TRUTH_LIMITS) -> tuple[EngineEval, Optional[Move]]:
        terminal = terminal_eval(position)
        if terminal is not None:
            return terminal, None
        fen = render_fen(position)
        key = (fen, limits)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        with self._lock:
            result = self._search(position, fen, limits)
        if self._cache is not None:
            self._cache[key] = result
        return result

    def _search(self, position: Position, fen: str, limits: EngineLimits) -> tuple[EngineEval, Move]:
        self._send(f"position fen {fen}")
        self._send(limits.go_command())
        timeout = self.search_timeout + (limits.movetime or 0)
        deadline = time.monotonic() + timeout
        exact = None
        bounded = None
        stopped = False
        while True:
            try:
                line = self._read(deadline)
            except EngineTimeout:
                if stopped:
                    raise EngineTimeout(f"search did not finish for {fen}") from None
                log.warning("search exceeded %.1fs, sending stop", timeout)
                self._send("stop")
                stopped = True
                deadline = time.monotonic() + 5
                continue
            if line.startswith("info"):
                parsed = parse_info_score(line)
                if parsed is not None:
                    if parsed[1]:
                        bounded = parsed[0]
                    else:
                        exact = parsed[0]
            elif line.startswith("bestmove"):
                break
        tokens = line.split()
        if len(tokens) < 2 or tokens[1] in ("(none)", "0000"):
            raise EngineProtocolError(f"no best move for non-terminal position {fen}: {line!r}")
        try:
            best = Move.from_uci(tokens[1])
        except ValueError:
            raise EngineProtocolError(f"unparseable bestmove line {line!r}") from None
        if best not in position.legal_moves():
            raise EngineProtocolError(f"engine proposed illegal move {tokens[1]} in {fen}")
        score = exact or bounded
        if score is None:
            raise EngineProtocolError(f"no score reported for {fen}")
        return score, best

    def best_move(self, position: Position, limits: EngineLimits = GROUND_TRUTH_LIMITS) -> Move:
        evaluation, best = self.evaluate(position, limits)
        if best is None:
            raise TerminalPositionError(f"no moves in terminal position ({evaluation.kind.value})")
        return best

    def close(self) -> None:
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            self._send("quit")
        except EngineError:
            pass
        try:
            proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def __enter__(self) -> "EngineSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_session(config: EngineConfig, **kwargs) -> EngineSession:
    return EngineSession(config, **kwargs)


def evaluate(session: Evaluator, position: Position, limits: EngineLimits = GROUND_TRUTH_LIMITS):
    return session.evaluate(position, limits)


def best_move(session: EngineSession, position: Position, limits: EngineLimits = GROUND_TRUTH_LIMITS) -> Move:
    return session.best_move(position, limits)


class SessionPool:
    """Bounded set of engine sessions handed out to one task at a time."""

    def __init__(self, config: EngineConfig, size: int, **kwargs) -> None:
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self._free: "queue.Queue[EngineSession]" = queue.Queue()
        self._all = []
        try:
            for _ in range(size):
                session = open_session(config, **kwargs)
                self._all.append(session)
                self._free.put(session)
        except BaseException:
            self.close()
            raise

    @contextmanager
    def session(self) -> Iterator[EngineSession]:
        s = self._free.get()
        try:
            yield s
        finally:
            self._free.put(s)

    def close(self) -> None:
        for s in self._all:
            s.close()

    def __enter__(self) -> "SessionPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# ---------------------------------------------------------------------------
# Self-play
# ---------------------------------------------------------------------------

DEFAULT_MAX_PLIES = 512


@dataclass
class Game:
    white: str
    black: str
    moves: list[Move] = field(default_factory=list)
    result: str = "aborted"
    termination: str = ""
    start_fen: str = STARTING_FEN
    white_level: Optional[int] = None
    black_level: Optional[int] = None

    def sides(self) -> list[bool]:
        """Color of the mover for each ply (True = white)."""
        turn = parse_fen(self.start_fen).turn
        return [turn if i % 2 == 0 else not turn for i in range(len(self.moves))]

    def positions(self) -> list[Position]:
        """Every position before each ply, followed by the final position."""
        p = parse_fen(self.start_fen)
        out = [p]
        for m in self.moves:
            p = p.apply_move(m)
            out.append(p)
        return out


def _outcome(position: Position, history: dict[str, int]) -> Optional[tuple[str, str]]:
    if not position.has_legal_move():
        if position.is_check():
            return ("0-1" if position.turn else "1-0"), "checkmate"
        return "1/2-1/2", "stalemate"
    if position.halfmove_clock >= 100:
        return "1/2-1/2", "fifty-move rule"
    if history.get(position.position_key(), 0) >= 3:
        return "1/2-1/2", "threefold repetition"
    if position.is_insufficient_material():
        return "1/2-1/2", "insufficient material"
    return None


def play_game(
    white: EngineSession,
    black: EngineSession,
    limits: EngineLimits,
    max_plies: int = DEFAULT_MAX_PLIES,
    *,
    white_label: str = "white",
    black_label: str = "black",
    opening: Sequence[Move] = (),
) -> Game:
    """Play from the initial position with two open sessions.

    ``opening`` moves are played first (and recorded) before the engines take over.
    """
    game = Game(white=white_label, black=black_label)
    game.white_level = white.config.skill_level
    game.black_level = black.config.skill_level
    position = parse_fen(game.start_fen)
    history = {position.position_key(): 1}
    for move in opening:
        position = position.apply_move(move)
        game.moves.append(move)
        key = position.position_key()
        history[key] = history.get(key, 0) + 1
    if max_plies <= 0:
        game.termination = "max plies"
        return game
    try:
        white.new_game()
        black.new_game()
        while True:
            outcome = _outcome(position, history)
            if outcome is not None:
                game.result, game.termination = outcome
                return game
            if len(game.moves) >= max_plies:
                game.result, game.termination = "aborted", "max plies"
                return game
            mover = white if position.turn else black
            move = mover.best_move(position, limits)
            if move not in position.legal_moves():
                raise IllegalMoveError(f"engine played illegal move {move.uci()}")
            position = position._push(move)
            game.moves.append(move)
            key = position.position_key()
            history[key] = history.get(key, 0) + 1
    except (EngineError, IllegalMoveError, TerminalPositionError) as exc:
        log.warning("self-play game aborted: %s", exc)
        game.result, game.termination = "aborted", f"engine failure: {exc}"
        return game


def play_selfplay_game(
    white: EngineConfig,
    black: EngineConfig,
    limits: EngineLimits,
    max_plies: int = DEFAULT_MAX_PLIES,
    opening: Sequence[Move] = (),
    **session_kwargs,
) -> Game:
    """Open one session per side, play a game, close the sessions."""
    if max_plies <= 0:
        game = Game(white=white.label, black=black.label, termination="max plies")
        game.white_level, game.black_level = white.skill_level, black.skill_level
        return game
    session_kwargs.setdefault("cache", False)
    try:
        ws = open_session(white, **session_kwargs)
    except EngineError as exc:
        return Game(white=white.label, black=black.label, termination=f"engine failure: {exc}")
    try:
        try:
            bs = open_session(black, **session_kwargs)
        except EngineError as exc:
            return Game(white=white.label, black=black.label, termination=f"engine failure: {exc}")
        try:
            return play_game(
                ws, bs, limits, max_plies, white_label=white.label, black_label=black.label, opening=opening
            )
        finally:
            bs.close()
    finally:
        ws.close()
