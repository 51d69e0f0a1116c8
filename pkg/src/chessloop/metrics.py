"""Accuracy, sanity and Wilson intervals over attempt transcripts, plus table rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Optional, Sequence

from .runner import AttemptTranscript, Final

DEFAULT_CONFIDENCE = 0.99
Z_99 = 2.5758293
REPORT_SCHEMA_VERSION = 1
OVERALL = "OVERALL"


@dataclass(frozen=True)
class ConfidenceInterval:
    point: float
    low: float
    high: float
    confidence: float = DEFAULT_CONFIDENCE

    @property
    def half_width(self) -> float:
        return (self.high - self.low) / 2

    def to_dict(self) -> dict:
        return {"point": self.point, "low": self.low, "high": self.high, "confidence": self.confidence}


def z_value(confidence: float) -> float:
    if not 0 < confidence < 1:
        raise ValueError("confidence must be in (0, 1)")
    if confidence == DEFAULT_CONFIDENCE:
        return Z_99
    return NormalDist().inv_cdf((1 + confidence) / 2)


def wilson_interval(successes: int, n: int, confidence: float = DEFAULT_CONFIDENCE) -> ConfidenceInterval:
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= successes <= n:
        raise ValueError("successes must be between 0 and n")
    z = z_value(confidence)
    p = successes / n
    z2 = z * z
    denom = 1 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    spread = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    low = 0.0 if successes == 0 else max(0.0, centre - spread)
    high = 1.0 if successes == n else min(1.0, centre + spread)
    return ConfidenceInterval(p, min(low, p), max(high, p), confidence)


def _require(transcripts: Sequence[AttemptTranscript]) -> None:
    if not transcripts:
        raise ValueError("no transcripts")


def overall_accuracy(transcripts: Sequence[AttemptTranscript]) -> float:
    _require(transcripts)
    return sum(t.correct for t in transcripts) / len(transcripts)


def puzzle_outcomes(transcripts: Iterable[AttemptTranscript]) -> dict[str, bool]:
    solved: dict[str, bool] = {}
    for t in transcripts:
        solved[t.puzzle_id] = solved.get(t.puzzle_id, True) and t.correct
    return solved


def puzzle_accuracy(transcripts: Sequence[AttemptTranscript]) -> float:
    _require(transcripts)
    solved = puzzle_outcomes(transcripts)
    return sum(solved.values()) / len(solved)


def is_invalid_parse(t: AttemptTranscript) -> bool:
    # multi-query modes only count a position as invalid when every query failed
    return t.final is Final.PARSE_FAILURE


def sanity(transcripts: Sequence[AttemptTranscript]) -> float:
    _require(transcripts)
    return 1 - sum(is_invalid_parse(t) for t in transcripts) / len(transcripts)


@dataclass
class Tally:
    """Mergeable counts for one (model, mode, stratum) cell."""

    positions: int = 0
    correct: int = 0
    invalid: int = 0
    queries: int = 0
    tokens: int = 0
    puzzles: dict[str, bool] = field(default_factory=dict)

    def add(self, t: AttemptTranscript) -> None:
        self.positions += 1
        self.correct += t.correct
        self.invalid += is_invalid_parse(t)
        self.queries += t.queries_used
        self.tokens += t.total_tokens
        self.puzzles[t.puzzle_id] = self.puzzles.get(t.puzzle_id, True) and t.correct

    def merge(self, other: "Tally") -> "Tally":
        puzzles = dict(self.puzzles)
        for pid, ok in other.puzzles.items():
            puzzles[pid] = puzzles.get(pid, True) and ok
        return Tally(
            self.positions + other.positions,
            self.correct + other.correct,
            self.invalid + other.invalid,
            self.queries + other.queries,
            self.tokens + other.tokens,
            puzzles,
        )


@dataclass(frozen=True)
class StratumMetrics:
    model: str
    mode: str
    stratum: str
    positions: int
    correct: int
    puzzles: int
    solved: int
    invalid: int
    queries: int = 0
    tokens: int = 0
    confidence: float = DEFAULT_CONFIDENCE

    def __post_init__(self) -> None:
        if not (0 <= self.correct <= self.positions and 0 <= self.solved <= self.puzzles
                and 0 <= self.invalid <= self.positions):
            raise ValueError(f"inconsistent counts for {self.stratum}")

    @classmethod
    def from_tally(cls, model: str, mode: str, stratum: str, tally: Tally, confidence: float) -> "StratumMetrics":
        return cls(
            model, mode, stratum, tally.positions, tally.correct, len(tally.puzzles),
            sum(tally.puzzles.values()), tally.invalid, tally.queries, tally.tokens, confidence,
        )

    @property
    def overall_accuracy(self) -> float:
        return self.correct / self.positions

    @property
    def puzzle_accuracy(self) -> float:
        return self.solved / self.puzzles

    @property
    def sanity(self) -> float:
        return 1 - self.invalid / self.positions

    @property
    def overall_interval(self) -> ConfidenceInterval:
        return wilson_interval(self.correct, self.positions, self.confidence)

    @property
    def puzzle_interval(self) -> ConfidenceInterval:
        return wilson_interval(self.solved, self.puzzles, self.confidence)

    @property
    def sanity_interval(self) -> ConfidenceInterval:
        return wilson_interval(self.positions - self.invalid, self.positions, self.confidence)

    @property
    def mean_tokens_per_response(self) -> float:
        return self.tokens / self.queries if self.queries else 0.0

    @property
    def mean_tokens_per_position(self) -> float:
        return self.tokens / self.positions

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "mode": self.mode,
            "stratum": self.stratum,
            "positions": self.positions,
            "correct": self.correct,
            "puzzles": self.puzzles,
            "solved": self.solved,
            "invalid": self.invalid,
            "queries": self.queries,
            "tokens": self.tokens,
            "confidence": self.confidence,
            "overall_accuracy": self.overall_accuracy,
            "puzzle_accuracy": self.puzzle_accuracy,
            "sanity": self.sanity,
            "overall_interval": self.overall_interval.to_dict(),
            "puzzle_interval": self.puzzle_interval.to_dict(),
            "sanity_interval": self.sanity_interval.to_dict(),
            "mean_tokens_per_response": self.mean_tokens_per_response,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StratumMetrics":
        return cls(
            data["model"], data["mode"], data["stratum"], data["positions"], data["correct"],
            data["puzzles"], data["solved"], data["invalid"], data.get("queries", 0), data.get("tokens", 0),
            data.get("confidence", DEFAULT_CONFIDENCE),
        )


@dataclass
class MetricsReport:
    rows: list[StratumMetrics] = field(default_factory=list)
    themes: list[StratumMetrics] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    confidence: float = DEFAULT_CONFIDENCE

    def row(self, model: str, mode: str, stratum: str = OVERALL) -> StratumMetrics:
        for r in self.rows + self.themes:
            if (r.model, r.mode, r.stratum) == (model, mode, stratum):
                return r
        raise KeyError((model, mode, stratum))

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "confidence": self.confidence,
            "rows": [r.to_dict() for r in self.rows],
            "themes": [r.to_dict() for r in self.themes],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        if data.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema version {data.get('schema_version')!r}")
        return cls(
            [StratumMetrics.from_dict(r) for r in data["rows"]],
            [StratumMetrics.from_dict(r) for r in data["themes"]],
            list(data.get("notes", [])),
            data.get("confidence", DEFAULT_CONFIDENCE),
        )


def compute_report(
    transcripts: Iterable[AttemptTranscript],
    model: str,
    themes: Optional[Sequence[str]] = None,
    confidence: float = DEFAULT_CONFIDENCE,
) -> MetricsReport:
    """One overall row per mode, and one row per theme (with an OVERALL row) per mode.

    ``themes`` fixes the theme rows; requested themes with no transcripts are
    omitted and noted. Without it every theme seen is reported.
    """
    overall: "OrderedDict[str, Tally]" = OrderedDict()
    by_theme: dict[tuple[str, str], Tally] = {}
    seen_themes: set[str] = set()
    for t in transcripts:
        mode = t.mode.value
        overall.setdefault(mode, Tally()).add(t)
        for theme in t.themes:
            seen_themes.add(theme)
            by_theme.setdefault((mode, theme), Tally()).add(t)
    report = MetricsReport(confidence=confidence)
    wanted = list(themes) if themes is not None else sorted(seen_themes)
    for mode, tally in overall.items():
        report.rows.append(StratumMetrics.from_tally(model, mode, OVERALL, tally, confidence))
        for theme in wanted:
            tally_t = by_theme.get((mode, theme))
            if tally_t is None:
                report.notes.append(f"{model} / {mode}: no transcripts for theme {theme}; row omitted")
                continue
            report.themes.append(StratumMetrics.from_tally(model, mode, theme, tally_t, confidence))
        if wanted:
            report.themes.append(StratumMetrics.from_tally(model, mode, OVERALL, tally, confidence))
    if not overall:
        report.notes.append("no transcripts")
    return report


def merge_reports(reports: Iterable[MetricsReport]) -> MetricsReport:
    out = MetricsReport()
    for r in reports:
        out.rows.extend(r.rows)
        out.themes.extend(r.themes)
        out.notes.extend(r.notes)
        out.confidence = r.confidence
    return out


def _pct(interval: ConfidenceInterval) -> str:
    return f"{100 * interval.point:.1f} ± {100 * interval.half_width:.1f}"


ROW_HEADER = ("Model", "Inference", "Puzzle Accuracy", "Position Accuracy", "Sanity")
THEME_HEADER = ("Model", "Inference", "Theme", "Puzzles", "Puzzle Accuracy", "Positions", "Position Accuracy", "Sanity")


def _md_table(header: Sequence[str], rows: Iterable[Sequence[str]]) -> list[str]:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return lines


def render_markdown(report: MetricsReport) -> str:
    level = f"{100 * report.confidence:g}%"
    lines = [f"## Accuracy ({level} Wilson score intervals, percentages)", ""]
    lines += _md_table(
        ROW_HEADER,
        (
            (r.model, r.mode, _pct(r.puzzle_interval), _pct(r.overall_interval), _pct(r.sanity_interval))
            for r in report.rows
        ),
    )
    if report.themes:
        lines += ["", "## By theme", ""]
        lines += _md_table(
            THEME_HEADER,
            (
                (r.model, r.mode, r.stratum, str(r.puzzles), _pct(r.puzzle_interval), str(r.positions),
                 _pct(r.overall_interval), _pct(r.sanity_interval))
                for r in report.themes
            ),
        )
    if report.notes:
        lines += ["", "Notes:", ""] + [f"- {n}" for n in report.notes]
    return "\n".join(lines) + "\n"


CSV_FIELDS = (
    "table", "model", "mode", "stratum", "positions", "correct", "puzzles", "solved", "invalid",
    "puzzle_accuracy", "puzzle_half_width", "position_accuracy", "position_half_width",
    "sanity", "sanity_half_width", "mean_tokens_per_response",
)


def render_csv(report: MetricsReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for table, rows in (("models", report.rows), ("themes", report.themes)):
        for r in rows:
            writer.writerow([
                table, r.model, r.mode, r.stratum, r.positions, r.correct, r.puzzles, r.solved, r.invalid,
                f"{100 * r.puzzle_accuracy:.1f}", f"{100 * r.puzzle_interval.half_width:.1f}",
                f"{100 * r.overall_accuracy:.1f}", f"{100 * r.overall_interval.half_width:.1f}",
                f"{100 * r.sanity:.1f}", f"{100 * r.sanity_interval.half_width:.1f}",
                f"{r.mean_tokens_per_response:.2f}",
            ])
    return buf.getvalue()


def render_json(report: MetricsReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def render_report(report: MetricsReport, fmt: str = "markdown") -> str:
    renderers = {"markdown": render_markdown, "md": render_markdown, "csv": render_csv, "json": render_json}
    try:
        return renderers[fmt](report)
    except KeyError:
        raise ValueError(f"unknown report format {fmt!r}") from None
