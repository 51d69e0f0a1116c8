"""Lichess puzzle ingestion, theme-wise splits, position tasks and training corpora."""

from __future__ import annotations

import bz2
import csv
import gzip
import hashlib
import heapq
import io
import itertools
import json
import logging
import lzma
import os
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Optional, Sequence, TextIO, Union

from .board import STARTING_FEN, IllegalMoveError, Move, Position, FenError, parse_fen, render_fen
from .engine import (
    DEFAULT_MAX_PLIES,
    EngineConfig,
    EngineError,
    EngineEval,
    EngineLimits,
    Game,
    TerminalPositionError,
    open_session,
    play_selfplay_game,
)

log = logging.getLogger(__name__)

LICHESS_COLUMNS = (
    "PuzzleId", "FEN", "Moves", "Rating", "RatingDeviation",
    "Popularity", "NbPlays", "Themes", "GameUrl", "OpeningTags",
)
DEDUP_KEY = "fen-fields-1-4"
MATE_THEMES = {f"mateIn{n}": n for n in range(1, 6)}

PathLike = Union[str, os.PathLike]


class PuzzleFormatError(ValueError):
    """Unreadable puzzle source or a header that is not the Lichess schema."""


class CorruptPuzzleError(ValueError):
    pass


@dataclass(frozen=True)
class Puzzle:
    id: str
    fen: str
    moves: tuple[str, ...]
    rating: int = 0
    themes: frozenset[str] = frozenset()
    url: str = ""
    rating_deviation: int = 0
    popularity: int = 0
    plays: int = 0
    opening_tags: str = ""

    @property
    def mate_in(self) -> Optional[int]:
        found = [n for theme, n in MATE_THEMES.items() if theme in self.themes]
        return found[0] if len(found) == 1 else None

    def positions(self) -> list[Position]:
        """Every position along the line, starting with the pre-setup one."""
        position = parse_fen(self.fen)
        out = [position]
        for text in self.moves:
            position = position.apply_move(Move.from_uci(text))
            out.append(position)
        return out

    def position_keys(self) -> set[str]:
        return {p.position_key() for p in self.positions()}

    def to_row(self) -> list[str]:
        return [
            self.id, self.fen, " ".join(self.moves), str(self.rating), str(self.rating_deviation),
            str(self.popularity), str(self.plays), " ".join(sorted(self.themes)), self.url, self.opening_tags,
        ]


def validate_puzzle(puzzle: Puzzle) -> None:
    if not puzzle.moves:
        raise CorruptPuzzleError("no moves")
    if len(puzzle.moves) % 2:
        raise CorruptPuzzleError(f"odd number of moves ({len(puzzle.moves)})")
    n = puzzle.mate_in
    if n is not None and len(puzzle.moves) != 2 * n:
        raise CorruptPuzzleError(f"mateIn{n} puzzle with {len(puzzle.moves)} moves")
    try:
        puzzle.positions()
    except (FenError, IllegalMoveError, ValueError) as exc:
        raise CorruptPuzzleError(str(exc)) from exc


@dataclass
class LoadReport:
    rows: int = 0
    loaded: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)

    def summary(self) -> str:
        return f"{self.loaded} puzzles loaded, {len(self.skipped)} of {self.rows} rows skipped"


def open_text(path: PathLike) -> TextIO:
    """Open a possibly compressed text file (.gz, .bz2, .xz, .zst)."""
    name = str(path)
    if name.endswith(".gz"):
        return gzip.open(name, "rt", encoding="utf-8", newline="")
    if name.endswith(".bz2"):
        return bz2.open(name, "rt", encoding="utf-8", newline="")
    if name.endswith(".xz"):
        return lzma.open(name, "rt", encoding="utf-8", newline="")
    if name.endswith(".zst"):
        try:
            import zstandard
        except ImportError as exc:
            raise PuzzleFormatError("reading .zst needs the 'zstandard' package (pip install artifact[zstd])") from exc
        raw = open(name, "rb")
        return io.TextIOWrapper(zstandard.ZstdDecompressor().stream_reader(raw), encoding="utf-8", newline="")
    return open(name, encoding="utf-8", newline="")


def _row_to_puzzle(row: dict) -> Puzzle:
    def as_int(name: str) -> int:
        value = (row.get(name) or "").strip()
        return int(value) if value else 0

    return Puzzle(
        id=row["PuzzleId"].strip(),
        fen=row["FEN"].strip(),
        moves=tuple(row["Moves"].split()),
        rating=as_int("Rating"),
        themes=frozenset((row.get("Themes") or "").split()),
        url=(row.get("GameUrl") or "").strip(),
        rating_deviation=as_int("RatingDeviation"),
        popularity=as_int("Popularity"),
        plays=as_int("NbPlays"),
        opening_tags=(row.get("OpeningTags") or "").strip(),
    )


def read_puzzles(stream: TextIO, report: Optional[LoadReport] = None, validate: bool = True) -> Iterator[Puzzle]:
    report = report if report is not None else LoadReport()
    first = stream.readline()
    if not first.strip():
        raise PuzzleFormatError("empty puzzle file")
    lines = itertools.chain([first], stream)
    cells = next(csv.reader([first]))
    if "PuzzleId" not in cells and len(cells) in (len(LICHESS_COLUMNS) - 1, len(LICHESS_COLUMNS)):
        # older database dumps ship without a header row
        reader = csv.DictReader(lines, fieldnames=LICHESS_COLUMNS)
    else:
        reader = csv.DictReader(lines)
    header = reader.fieldnames
    missing = [c for c in LICHESS_COLUMNS[:3] + ("Themes",) if c not in header]
    if missing:
        raise PuzzleFormatError(f"header is missing columns {missing}; got {header}")
    for row in reader:
        report.rows += 1
        line = reader.line_num
        try:
            puzzle = _row_to_puzzle(row)
            if validate:
                validate_puzzle(puzzle)
        except (CorruptPuzzleError, ValueError, AttributeError) as exc:
            report.skipped.append((line, str(exc)))
            log.debug("skipping row at line %d: %s", line, exc)
            continue
        report.loaded += 1
        yield puzzle


def load_puzzles(path: PathLike, report: Optional[LoadReport] = None, validate: bool = True) -> Iterator[Puzzle]:
    """Stream puzzles from a Lichess CSV; bad rows are skipped and recorded in ``report``."""
    try:
        fh = open_text(path)
    except OSError as exc:
        raise PuzzleFormatError(f"cannot read {path}: {exc}") from exc
    with fh:
        yield from read_puzzles(fh, report, validate)


class PuzzleFile:
    """Re-iterable view of a puzzle file, so splits can make two passes."""

    def __init__(self, path: PathLike, validate: bool = True) -> None:
        self.path = Path(path)
        self.validate = validate
        self.report = LoadReport()

    def __iter__(self) -> Iterator[Puzzle]:
        self.report = LoadReport()
        return load_puzzles(self.path, self.report, self.validate)


def write_puzzles(puzzles: Iterable[Puzzle], out: TextIO) -> int:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(LICHESS_COLUMNS)
    count = 0
    for p in puzzles:
        writer.writerow(p.to_row())
        count += 1
    return count


def file_checksum(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Position tasks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PositionTask:
    puzzle_id: str
    index: int
    position: Position
    solution: Move
    eval_class: Optional[EngineEval] = None  # None: not a mate theme, centipawn class
    themes: frozenset[str] = frozenset()

    @property
    def fen(self) -> str:
        return render_fen(self.position)


def expand_puzzle(puzzle: Puzzle) -> list[PositionTask]:
    """Apply the setup move, then emit one task per solver move."""
    if not puzzle.moves or len(puzzle.moves) % 2:
        raise CorruptPuzzleError(f"puzzle {puzzle.id}: needs an even, non-zero number of moves")
    try:
        position = parse_fen(puzzle.fen)
        moves = [Move.from_uci(m) for m in puzzle.moves]
        position = position.apply_move(moves[0])
        n = puzzle.mate_in
        tasks = []
        for i in range(1, len(moves), 2):
            index = (i + 1) // 2
            solution = moves[i]
            if solution not in position.legal_moves():
                raise IllegalMoveError(f"solver move {solution.uci()} is illegal")
            eval_class = EngineEval.mate(n - index + 1) if n is not None else None
            tasks.append(PositionTask(puzzle.id, index, position, solution, eval_class, puzzle.themes))
            position = position.apply_move(solution)
            if i + 1 < len(moves):
                position = position.apply_move(moves[i + 1])
    except (FenError, IllegalMoveError, ValueError) as exc:
        raise CorruptPuzzleError(f"puzzle {puzzle.id}: {exc}") from exc
    return tasks


# ---------------------------------------------------------------------------
# Theme split
# ---------------------------------------------------------------------------


def _rank(seed: int, theme: str, puzzle_id: str) -> bytes:
    return hashlib.blake2b(f"{seed}\0{theme}\0{puzzle_id}".encode(), digest_size=16).digest()


@dataclass
class SplitManifest:
    holdout: int
    seed: int
    validation: dict[str, Puzzle] = field(default_factory=dict)
    train_ids: list[str] = field(default_factory=list)
    theme_counts: dict[str, int] = field(default_factory=dict)
    dropped_overlap: list[str] = field(default_factory=list)
    dedup_key: str = DEDUP_KEY
    source_checksum: Optional[str] = None
    theme_candidates: dict[str, int] = field(default_factory=dict)

    @property
    def validation_ids(self) -> list[str]:
        return sorted(self.validation)

    def to_dict(self, include_ids: bool = True) -> dict:
        data = {
            "holdout": self.holdout,
            "seed": self.seed,
            "dedup_key": self.dedup_key,
            "source_checksum": self.source_checksum,
            "counts": {
                "validation": len(self.validation),
                "train": len(self.train_ids),
                "dropped_overlap": len(self.dropped_overlap),
            },
            "theme_counts": dict(sorted(self.theme_counts.items())),
            "theme_candidates": dict(sorted(self.theme_candidates.items())),
        }
        if include_ids:
            data["validation_ids"] = self.validation_ids
            data["dropped_overlap"] = sorted(self.dropped_overlap)
        return data

    def digest(self) -> str:
        h = hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode())
        for pid in self.train_ids:
            h.update(pid.encode() + b"\n")
        return h.hexdigest()

    def save(self, out_dir: PathLike) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "manifest": out / "split.json",
            "train": out / "train_ids.txt",
            "validation": out / "validation.csv",
        }
        data = self.to_dict()
        data["digest"] = self.digest()
        paths["manifest"].write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(paths["train"], "w", encoding="utf-8") as fh:
            for pid in self.train_ids:
                fh.write(pid + "\n")
        with open(paths["validation"], "w", encoding="utf-8", newline="") as fh:
            write_puzzles((self.validation[k] for k in self.validation_ids), fh)
        return paths

    @classmethod
    def load(cls, out_dir: PathLike) -> "SplitManifest":
        out = Path(out_dir)
        data = json.loads((out / "split.json").read_text(encoding="utf-8"))
        validation = {p.id: p for p in load_puzzles(out / "validation.csv", validate=False)}
        train_path = out / "train_ids.txt"
        train = train_path.read_text(encoding="utf-8").split() if train_path.exists() else []
        return cls(
            holdout=data["holdout"],
            seed=data["seed"],
            validation=validation,
            train_ids=train,
            theme_counts=data.get("theme_counts", {}),
            dropped_overlap=data.get("dropped_overlap", []),
            dedup_key=data.get("dedup_key", DEDUP_KEY),
            source_checksum=data.get("source_checksum"),
            theme_candidates=data.get("theme_candidates", {}),
        )


def theme_split(puzzles: Iterable[Puzzle], holdout: int = 1000, seed: int = 0) -> SplitManifest:
    """Hold out up to ``holdout`` puzzles per theme; the rest train.

    Selection per theme keeps the ``holdout`` puzzles with the smallest
    seeded hash, which is a uniform sample that does not depend on file
    order. A puzzle picked for several themes is kept once and counted for
    each. A second pass drops training puzzles that share any position key
    with a validation puzzle. ``puzzles`` must be re-iterable for the
    second pass; one-shot iterators are materialised.
    """
    if holdout < 1:
        raise ValueError("holdout must be >= 1")
    if iter(puzzles) is puzzles:
        puzzles = list(puzzles)

    heaps: dict[str, list[tuple[bytes, str]]] = defaultdict(list)
    candidates: Counter = Counter()
    for p in puzzles:
        for theme in p.themes:
            candidates[theme] += 1
            item = (_negate(_rank(seed, theme, p.id)), p.id)
            heap = heaps[theme]
            if len(heap) < holdout:
                heapq.heappush(heap, item)
            elif item > heap[0]:
                heapq.heapreplace(heap, item)

    chosen: dict[str, set[str]] = defaultdict(set)
    for theme, heap in heaps.items():
        for _, pid in heap:
            chosen[pid].add(theme)
    theme_counts = {theme: len(heap) for theme, heap in heaps.items()}

    validation: dict[str, Puzzle] = {}
    val_keys: set[str] = set()
    for p in puzzles:
        if p.id in chosen and p.id not in validation:
            validation[p.id] = p
            val_keys |= p.position_keys()

    train: list[str] = []
    dropped: list[str] = []
    for p in puzzles:
        if p.id in validation:
            continue
        if p.position_keys() & val_keys:
            dropped.append(p.id)
        else:
            train.append(p.id)
    return SplitManifest(
        holdout=holdout,
        seed=seed,
        validation=validation,
        train_ids=train,
        theme_counts=theme_counts,
        dropped_overlap=dropped,
        theme_candidates=dict(candidates),
    )


def _negate(digest: bytes) -> bytes:
    # heapq is a min-heap; inverting the bytes keeps the smallest hashes on top-k
    return bytes(255 - b for b in digest)


def check_split_disjoint(manifest: SplitManifest, puzzles: Iterable[Puzzle]) -> int:
    """Exhaustive overlap count between train and validation position keys."""
    val_keys: set[str] = set()
    for p in manifest.validation.values():
        val_keys |= p.position_keys()
    train = set(manifest.train_ids)
    overlap = 0
    for p in puzzles:
        if p.id in train:
            overlap += len(p.position_keys() & val_keys)
    return overlap


def sample_eval_set(manifest: SplitManifest, theme: str, n: int, seed: int) -> list[Puzzle]:
    """Uniform sample of ``n`` validation puzzles carrying ``theme``."""
    return sample_puzzles(manifest.validation.values(), theme, n, seed)


def sample_puzzles(puzzles: Iterable[Puzzle], theme: str, n: int, seed: int) -> list[Puzzle]:
    if n < 0:
        raise ValueError("n must be >= 0")
    pool = sorted((p for p in puzzles if theme in p.themes), key=lambda p: p.id)
    if not pool and n:
        raise ValueError(f"no puzzles with theme {theme!r}")
    if n > len(pool):
        raise ValueError(f"asked for {n} {theme} puzzles but only {len(pool)} are available")
    return random.Random(f"{seed}:{theme}").sample(pool, n)


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusRecord:
    fen: str
    move: str

    def __post_init__(self) -> None:
        if Move.from_uci(self.move) not in parse_fen(self.fen).legal_moves():
            raise IllegalMoveError(f"{self.move} is not legal in {self.fen}")

    def line(self) -> str:
        return f"{self.fen};{self.move}\n"

    @classmethod
    def parse(cls, line: str) -> "CorpusRecord":
        fen, sep, move = line.rstrip("\n").rpartition(";")
        if not sep:
            raise ValueError(f"not a corpus line: {line!r}")
        return cls(fen, move)


@dataclass
class CorpusStats:
    records_in: int = 0
    written: int = 0
    exact_duplicates: int = 0
    unique_positions: int = 0
    conflicting_positions: int = 0
    conflicts: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "records_in": self.records_in,
            "written": self.written,
            "exact_duplicates": self.exact_duplicates,
            "unique_positions": self.unique_positions,
            "conflicting_positions": self.conflicting_positions,
        }


def build_corpus(records: Iterable[CorpusRecord], sink: TextIO, max_conflicts_listed: int = 100) -> CorpusStats:
    """Write ``FEN;uci`` lines, dropping exact repeats of (position, move).

    Positions labelled with more than one move are kept and counted as conflicts.
    """
    stats = CorpusStats()
    seen: dict[str, set[str]] = {}
    for rec in records:
        stats.records_in += 1
        key = parse_fen(rec.fen).position_key()
        moves = seen.setdefault(key, set())
        if rec.move in moves:
            stats.exact_duplicates += 1
            continue
        if len(moves) == 1:
            stats.conflicting_positions += 1
            if len(stats.conflicts) < max_conflicts_listed:
                stats.conflicts.append(key)
        moves.add(rec.move)
        try:
            sink.write(rec.line())
        except OSError as exc:
            raise OSError(f"corpus write failed after {stats.written} records: {exc}") from exc
        stats.written += 1
    stats.unique_positions = len(seen)
    return stats


def read_corpus(source: TextIO) -> Iterator[CorpusRecord]:
    for line in source:
        if line.strip():
            yield CorpusRecord.parse(line)


def tasks_to_records(tasks: Iterable[PositionTask]) -> Iterator[CorpusRecord]:
    for t in tasks:
        yield CorpusRecord(t.fen, t.solution.uci())


# ---------------------------------------------------------------------------
# Self-play corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduledGame:
    level: int
    number: int
    base_is_white: bool


def schedule_games(levels: Sequence[int], games_per_level: int) -> list[ScheduledGame]:
    """Alternate colours so each level gets an even split (base white first)."""
    if games_per_level < 0:
        raise ValueError("games_per_level must be >= 0")
    return [ScheduledGame(level, g, g % 2 == 0) for level in levels for g in range(games_per_level)]


def random_opening(seed: int, tag: str, plies: int) -> list[Move]:
    rng = random.Random(f"{seed}:{tag}")
    position = parse_fen(STARTING_FEN)
    moves = []
    for _ in range(plies):
        legal = position.legal_moves()
        if not legal:
            break
        move = rng.choice(legal)
        moves.append(move)
        position = position._push(move)
    return moves


@dataclass
class SelfPlayResult:
    games: list[Game] = field(default_factory=list)
    records: list[CorpusRecord] = field(default_factory=list)
    label_failures: int = 0

    @property
    def aborted(self) -> int:
        return sum(1 for g in self.games if g.result == "aborted" and g.termination.startswith("engine failure"))

    def overlap(self) -> float:
        """Share of labelled positions whose key also occurs in another game."""
        games_per_key: dict[str, set[int]] = defaultdict(set)
        total = 0
        for i, game in enumerate(self.games):
            for p in game.positions()[:-1]:
                games_per_key[p.position_key()].add(i)
                total += 1
        if not total:
            return 0.0
        shared = sum(
            1
            for i, game in enumerate(self.games)
            for p in game.positions()[:-1]
            if len(games_per_key[p.position_key()]) > 1
        )
        return shared / total

    def stats(self) -> dict:
        return {
            "games": len(self.games),
            "aborted": self.aborted,
            "positions": len(self.records),
            "label_failures": self.label_failures,
            "cross_game_overlap": round(self.overlap(), 6),
        }


def generate_selfplay_corpus(
    base: EngineConfig,
    levels: Sequence[int],
    games_per_level: int,
    limits: EngineLimits,
    seed: int = 0,
    *,
    label_limits: Optional[EngineLimits] = None,
    opening_plies: int = 0,
    max_plies: int = DEFAULT_MAX_PLIES,
    on_game: Optional[Callable[[ScheduledGame, Game], None]] = None,
) -> SelfPlayResult:
    """Base engine against each skill level; every position labelled by the base engine."""
    result = SelfPlayResult()
    schedule = schedule_games(levels, games_per_level)
    if not schedule:
        return result
    label_limits = label_limits or limits
    labeller = None
    try:
        for item in schedule:
            weak = EngineConfig(
                base.executable, skill_level=item.level, options=base.options, name=f"{base.label} level {item.level}"
            )
            white, black = (base, weak) if item.base_is_white else (weak, base)
            opening = random_opening(seed, f"{item.level}:{item.number}", opening_plies) if opening_plies else ()
            game = play_selfplay_game(white, black, limits, max_plies, opening=opening)
            result.games.append(game)
            if on_game is not None:
                on_game(item, game)
            if labeller is None:
                labeller = open_session(base)
            for position in game.positions()[:-1]:
                try:
                    move = labeller.best_move(position, label_limits)
                except (EngineError, TerminalPositionError) as exc:
                    result.label_failures += 1
                    log.warning("labelling failed: %s", exc)
                    if isinstance(exc, EngineError):
                        labeller.close()
                        labeller = open_session(base)
                    continue
                result.records.append(CorpusRecord(render_fen(position), move.uci()))
    finally:
        if labeller is not None:
            labeller.close()
    return result
