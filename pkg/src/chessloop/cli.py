"""Command-line entry point: ``chessloop {split,selfplay,eval,solve,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from . import __version__
from .board import FenError, parse_fen
from .datasets import (
    PuzzleFile,
    PuzzleFormatError,
    SplitManifest,
    build_corpus,
    expand_puzzle,
    file_checksum,
    generate_selfplay_corpus,
    load_puzzles,
    sample_eval_set,
    sample_puzzles,
    schedule_games,
    theme_split,
)
from .engine import EngineConfig, EngineError, EngineLimits, default_executable, open_session
from .metrics import compute_report, merge_reports, render_report
from .models import EngineAsModel, HttpCompletionModel, ModelError, ScriptedModel
from .pgn import write_game
from .runner import (
    AttemptTranscript,
    InferenceConfig,
    Job,
    Mode,
    read_transcripts,
    render_trace,
    run_jobs,
    run_modulo,
)
from .verification import BruteForceMateOracle, GradingPolicy

log = logging.getLogger("chessloop")

EXIT_OK = 0
EXIT_UNSOLVED = 1
EXIT_CONFIG = 2
EXIT_ENDPOINT = 3
EXIT_ENGINE = 4

ENV_PREFIX = "CHESSLOOP_"


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# Settings: flags > environment > config file > built-in default
# ---------------------------------------------------------------------------


class Settings:
    def __init__(self, args: argparse.Namespace, defaults: dict[str, Any]) -> None:
        self.args = args
        self.defaults = defaults
        self.file: dict[str, Any] = {}
        if getattr(args, "config", None):
            try:
                self.file = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
            if not isinstance(self.file, dict):
                raise ConfigError("config file must hold a JSON object")

    def get(self, name: str, cast=str):
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        env = os.environ.get(ENV_PREFIX + name.upper())
        if env is not None:
            try:
                return cast(env)
            except ValueError as exc:
                raise ConfigError(f"bad value for {ENV_PREFIX + name.upper()}: {env!r}") from exc
        key = name.replace("_", "-")
        if key in self.file or name in self.file:
            return self.file.get(key, self.file.get(name))
        return self.defaults.get(name)


def _engine_path(settings: Settings) -> str:
    return settings.get("engine") or default_executable()


def _limits(depth: Optional[int], movetime: Optional[float]) -> EngineLimits:
    try:
        return EngineLimits(depth=depth, movetime=movetime)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_levels(text: str) -> list[int]:
    levels: list[int] = []
    for part in str(text).split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..", 1)
            levels.extend(range(int(lo), int(hi) + 1))
        elif part:
            levels.append(int(part))
    if any(not 0 <= lv <= 20 for lv in levels):
        raise ConfigError("skill levels must be in 0..20")
    return levels


def load_endpoint(spec: str, engine_path: str):
    """Build a model endpoint from a JSON file path or an inline JSON object.

    Kinds: ``http`` (HttpCompletionModel settings), ``engine`` (depth,
    movetime, skill_level, executable) and ``scripted`` (responses).
    """
    try:
        text = spec if spec.lstrip().startswith("{") else Path(spec).read_text(encoding="utf-8")
        data = json.loads(text)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read endpoint config {spec!r}: {exc}") from exc
    kind = data.get("kind", "http")
    try:
        if kind == "http":
            return HttpCompletionModel.from_config(data)
        if kind == "engine":
            cfg = EngineConfig(data.get("executable") or engine_path, skill_level=data.get("skill_level"))
            return EngineAsModel(cfg, _limits(data.get("depth", 20), data.get("movetime")))
        if kind == "scripted":
            return ScriptedModel(data["responses"], data.get("token_usage"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad endpoint config: {exc}") from exc
    raise ConfigError(f"unknown endpoint kind {kind!r}")


def model_label(endpoint) -> str:
    desc = endpoint.describe()
    if desc["kind"] == "http":
        return desc["model"]
    if desc["kind"] == "engine":
        level = desc["engine"].get("skill_level")
        name = "Stockfish" if level is None else f"Stockfish level {level}"
        return f"{name} (depth {desc['limits'].get('depth')})"
    return "scripted"


def write_manifest(out: Path, data: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    data = {"tool_version": __version__, **data}
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_split(args: argparse.Namespace) -> int:
    s = Settings(args, {"holdout": 1000, "seed": 0})
    out = Path(args.out)
    holdout, seed = int(s.get("holdout", int)), int(s.get("seed", int))
    checksum = file_checksum(args.puzzles)
    write_manifest(out, {
        "command": "split", "puzzles": str(args.puzzles), "checksums": {"puzzles": checksum},
        "holdout": holdout, "split_seed": seed,
    })
    source = PuzzleFile(args.puzzles)
    manifest = theme_split(source, holdout, seed)
    manifest.source_checksum = checksum
    manifest.save(out)
    report = source.report
    for line, reason in report.skipped[:20]:
        log.warning("skipped row at line %d: %s", line, reason)
    print(f"{report.summary()}; validation {len(manifest.validation)}, train {len(manifest.train_ids)}, "
          f"dropped for overlap {len(manifest.dropped_overlap)}")
    return EXIT_OK


def cmd_selfplay(args: argparse.Namespace) -> int:
    s = Settings(args, {"levels": "0..20", "games_per_level": 50, "depth": 15, "movetime": 10.0, "seed": 0,
                        "opening_plies": 0, "max_plies": 512})
    out = Path(args.out)
    levels = _parse_levels(s.get("levels"))
    games_per_level = int(s.get("games_per_level", int))
    limits = _limits(s.get("depth", int), s.get("movetime", float))
    label_depth = s.get("label_depth", int)
    label_limits = _limits(label_depth, None) if label_depth else limits
    base = EngineConfig(_engine_path(s))
    schedule = schedule_games(levels, games_per_level)
    write_manifest(out, {
        "command": "selfplay", "engine": base.to_dict(), "levels": levels, "games_per_level": games_per_level,
        "planned_games": len(schedule), "limits": limits.to_dict(), "label_limits": label_limits.to_dict(),
        "seed": int(s.get("seed", int)), "opening_plies": int(s.get("opening_plies", int)),
    })
    pgn_path, corpus_path = out / "games.pgn", out / "corpus.txt"
    with open(pgn_path, "w", encoding="utf-8") as pgn:
        def on_game(item, game):
            write_game(game, pgn, event="Self-play", round_=f"{item.level}.{item.number + 1}")
            pgn.flush()

        result = generate_selfplay_corpus(
            base, levels, games_per_level, limits, int(s.get("seed", int)),
            label_limits=label_limits, opening_plies=int(s.get("opening_plies", int)),
            max_plies=int(s.get("max_plies", int)), on_game=on_game,
        )
    with open(corpus_path, "w", encoding="ascii") as fh:
        stats = build_corpus(result.records, fh)
    summary = {**result.stats(), "corpus": stats.to_dict()}
    (out / "stats.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    if schedule and result.aborted == len(schedule):
        return EXIT_ENGINE
    return EXIT_OK


def _select_puzzles(s: Settings, themes: list[str], n: int, seed: int):
    split_dir, puzzles_path = s.get("split"), s.get("puzzles")
    if bool(split_dir) == bool(puzzles_path):
        raise ConfigError("give exactly one of --split or --puzzles")
    chosen: dict[str, tuple[Any, list[str]]] = {}
    if split_dir:
        manifest = SplitManifest.load(split_dir)
        checksums = {"validation": file_checksum(Path(split_dir) / "validation.csv")}
        pick = lambda theme: sample_eval_set(manifest, theme, n, seed)  # noqa: E731
    else:
        pool = list(load_puzzles(puzzles_path))
        checksums = {"puzzles": file_checksum(puzzles_path)}
        pick = lambda theme: sample_puzzles(pool, theme, n, seed)  # noqa: E731
    for theme in themes:
        try:
            sample = pick(theme)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        for p in sample:
            chosen.setdefault(p.id, (p, []))[1].append(theme)
    return list(chosen.values()), checksums


def cmd_eval(args: argparse.Namespace) -> int:
    s = Settings(args, {"mode": "normal", "themes": "mateIn1,mateIn2,mateIn3", "n": 100, "seed": 0, "k": 10,
                        "depth": 20, "workers": 1, "oracle": "engine"})
    out = Path(args.out)
    mode = Mode.parse(s.get("mode"))
    themes = [t for t in str(s.get("themes")).split(",") if t]
    n, seed = int(s.get("n", int)), int(s.get("seed", int))
    if n < 1:
        raise ConfigError("--n must be >= 1")
    engine_path = _engine_path(s)
    endpoint = load_endpoint(s.get("endpoint"), engine_path)
    oracle_limits = _limits(s.get("depth", int), s.get("movetime", float))
    temperature = s.get("temperature", float)
    cfg = InferenceConfig(
        mode=mode, k=int(s.get("k", int)), temperature=None if temperature is None else float(temperature),
        seed=seed, grading=GradingPolicy(oracle_limits), critic=GradingPolicy.for_modulo(oracle_limits),
    )
    oracle = s.get("oracle")
    engine_cfg = EngineConfig(engine_path)
    if oracle == "engine":
        factory = lambda: open_session(engine_cfg)  # noqa: E731
    elif oracle == "bruteforce":
        factory = lambda: BruteForceMateOracle(3)  # noqa: E731
    elif oracle == "none":
        if mode in (Mode.MODULO, Mode.CHEATING):
            raise ConfigError(f"{mode.value} mode needs an oracle")
        factory = None
    else:
        raise ConfigError(f"unknown oracle {oracle!r}")

    selected, checksums = _select_puzzles(s, themes, n, seed)
    jobs = []
    samples = []
    for puzzle, sampled_for in selected:
        tasks = expand_puzzle(puzzle)
        samples.append({"id": puzzle.id, "themes": sampled_for, "fen": puzzle.fen, "moves": list(puzzle.moves)})
        tags = tuple(sorted(set(sampled_for)))
        jobs.extend(Job(t.puzzle_id, t.index, t.fen, t.solution.uci(), tags) for t in tasks)

    manifest = {
        "command": "eval", "checksums": checksums, "sample_seed": seed, "themes": themes, "n": n,
        "endpoint": endpoint.describe(), "model": model_label(endpoint), "inference": cfg.to_dict(),
        "oracle": oracle, "engine": engine_cfg.to_dict() if oracle == "engine" else None,
        "positions": len(jobs),
    }
    transcripts_path = out / "transcripts.jsonl"
    done: set[tuple[str, int]] = set()
    if transcripts_path.exists() and args.resume:
        previous = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
        previous.pop("tool_version", None)
        if previous != json.loads(json.dumps(manifest)):
            raise ConfigError("existing run has a different manifest; refusing to resume")
        done = {t.key for t in read_transcripts(transcripts_path)}
        log.info("resuming: %d positions already done", len(done))
    elif transcripts_path.exists():
        raise ConfigError(f"{transcripts_path} exists; pass --resume or choose another --out")
    write_manifest(out, manifest)
    (out / "samples.json").write_text(json.dumps(samples, indent=2) + "\n", encoding="utf-8")

    pending = [j for j in jobs if (j.puzzle_id, j.index) not in done]
    try:
        with open(transcripts_path, "a", encoding="ascii") as sink:
            def append(t: AttemptTranscript) -> None:
                sink.write(t.to_json() + "\n")
                sink.flush()

            results = run_jobs(endpoint, pending, cfg, factory, workers=int(s.get("workers", int)),
                               on_result=append)
    except EngineError as exc:
        log.error("engine failure: %s", exc)
        return EXIT_ENGINE
    finally:
        close = getattr(endpoint, "close", None)
        if close:
            close()

    transcripts = list(read_transcripts(transcripts_path))
    report = compute_report(transcripts, model_label(endpoint), themes)
    for fmt, ext in (("markdown", "md"), ("csv", "csv"), ("json", "json")):
        (out / f"report.{ext}").write_text(render_report(report, fmt), encoding="utf-8")
    print(render_report(report, "markdown"), end="")
    errors = [t.error for t in results if t.error]
    if results and len(errors) == len(results):
        return EXIT_ENGINE if all(e.startswith("Engine") for e in errors) else EXIT_ENDPOINT
    return EXIT_OK


def cmd_solve(args: argparse.Namespace) -> int:
    s = Settings(args, {"k": 10, "depth": 20, "seed": 0})
    try:
        position = parse_fen(args.fen)
    except FenError as exc:
        raise ConfigError(f"bad FEN: {exc}") from exc
    if not position.has_legal_move():
        raise ConfigError("position is terminal (checkmate or stalemate); nothing to solve")
    engine_path = _engine_path(s)
    endpoint = load_endpoint(s.get("endpoint"), engine_path)
    limits = _limits(s.get("depth", int), s.get("movetime", float))
    temperature = s.get("temperature", float)
    cfg = InferenceConfig(mode=Mode.MODULO, k=int(s.get("k", int)), seed=int(s.get("seed", int)),
                          temperature=None if temperature is None else float(temperature),
                          grading=GradingPolicy(limits), critic=GradingPolicy.for_modulo(limits))
    try:
        with open_session(EngineConfig(engine_path)) as session:
            _, best = session.evaluate(position, limits)
            transcript = run_modulo(endpoint, position, best, session, cfg, puzzle_id="solve")
    finally:
        close = getattr(endpoint, "close", None)
        if close:
            close()
    print(render_trace(transcript))
    if args.transcript:
        Path(args.transcript).write_text(transcript.to_json() + "\n", encoding="ascii")
    if transcript.accepted_move:
        print(f"\naccepted: {transcript.accepted_move}")
        return EXIT_OK
    print(f"\nno move accepted within {cfg.k} queries", file=sys.stderr)
    if not args.transcript:
        print(transcript.to_json(), file=sys.stderr)
    if transcript.error:
        return EXIT_ENGINE if transcript.error.startswith("Engine") else EXIT_ENDPOINT
    return EXIT_UNSOLVED


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.transcripts)
    files = sorted(path.glob("**/transcripts.jsonl")) if path.is_dir() else [path]
    if not files:
        raise ConfigError(f"no transcripts.jsonl under {path}")
    reports = []
    for f in files:
        try:
            transcripts = list(read_transcripts(f))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if not transcripts:
            raise ConfigError(f"{f} holds no transcripts")
        label, themes = "model", None
        manifest_path = f.parent / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            label, themes = manifest.get("model", label), manifest.get("themes")
        reports.append(compute_report(transcripts, label, themes))
    text = render_report(merge_reports(reports), args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chessloop", description="Chess puzzle evaluation harness")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON file with defaults for this command's flags")
        p.add_argument("--engine", help="UCI engine executable (env STOCKFISH_PATH)")

    p = sub.add_parser("split", help="theme-wise train/validation split of a Lichess puzzle CSV")
    common(p)
    p.add_argument("--puzzles", required=True)
    p.add_argument("--holdout", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("selfplay", help="base engine vs skill levels; PGN plus labelled corpus")
    common(p)
    p.add_argument("--levels", help="e.g. 0..20 or 0,5,10")
    p.add_argument("--games-per-level", dest="games_per_level", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--movetime", type=float, help="seconds per move")
    p.add_argument("--label-depth", dest="label_depth", type=int)
    p.add_argument("--opening-plies", dest="opening_plies", type=int)
    p.add_argument("--max-plies", dest="max_plies", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_selfplay)

    p = sub.add_parser("eval", help="run an inference mode over sampled puzzles")
    common(p)
    p.add_argument("--endpoint", help="endpoint JSON file or inline JSON")
    p.add_argument("--mode", choices=["normal", "cheating", "pass10", "pass@k", "modulo"])
    p.add_argument("--themes", help="comma-separated themes")
    p.add_argument("--n", type=int, help="puzzles per theme")
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int, help="query budget for pass@k / modulo")
    p.add_argument("--temperature", type=float)
    p.add_argument("--depth", type=int, help="oracle depth")
    p.add_argument("--movetime", type=float, help="oracle seconds per position")
    p.add_argument("--oracle", choices=["engine", "bruteforce", "none"])
    p.add_argument("--workers", type=int)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--split", help="split directory from the split command")
    src.add_argument("--puzzles", help="puzzle CSV to sample from directly")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="one critic-gated attempt on a FEN")
    common(p)
    p.add_argument("--fen", required=True)
    p.add_argument("--endpoint")
    p.add_argument("--k", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--depth", type=int)
    p.add_argument("--movetime", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--transcript", help="write the attempt transcript (JSON) here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("report", help="recompute metrics from transcripts")
    p.add_argument("--transcripts", required=True, help="run directory or transcripts.jsonl")
    p.add_argument("--format", default="markdown", choices=["markdown", "csv", "json"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if getattr(args, "endpoint", "") is None and args.command in ("eval", "solve"):
            settings_endpoint = Settings(args, {}).get("endpoint")
            if not settings_endpoint:
                raise ConfigError("--endpoint is required")
            args.endpoint = settings_endpoint
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PuzzleFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return EXIT_ENDPOINT
    except EngineError as exc:
        print(f"engine error: {exc}", file=sys.stderr)
        return EXIT_ENGINE


if __name__ == "__main__":
    sys.exit(main())
