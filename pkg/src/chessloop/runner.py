"""Inference modes: single query, eval-hinted, pass@k, and the critic-gated loop."""

from __future__ import annotations

import enum
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

from .board import Move, Position, parse_fen, render_fen
from .engine import EngineError, EngineEval, Evaluator
from .models import GenerationParams, ModelEndpoint, ModelError
from .parsing import ParseOutcome, RawResponse, extract_move, sanitize
from .verification import (
    GradingPolicy,
    Verdict,
    VerdictKind,
    critic_accuracy,
    describe_eval,
    grade,
    invalid_move_feedback,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_K = 10
RESET_AFTER_FAILURES = 3

BASE_TEMPLATE = (
    "You are a chess engine. Given the following board position in FEN notation, "
    "provide the single best move in UCI format.\n\nFEN: {fen}\n\nBest move:"
)
HINT_TEMPLATE = "The current evaluation of this position is: {evaluation} for you.\n"


class Mode(enum.Enum):
    NORMAL = "normal"
    CHEATING = "cheating"
    PASS_AT_K = "pass@k"
    MODULO = "modulo"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        aliases = {"pass10": cls.PASS_AT_K, "passk": cls.PASS_AT_K, "pass@10": cls.PASS_AT_K}
        if text in aliases:
            return aliases[text]
        return cls(text)


class Final(str, enum.Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    PARSE_FAILURE = "parse_failure"


_DEFAULT_TEMPERATURE = {Mode.NORMAL: 0.0, Mode.CHEATING: 0.0, Mode.PASS_AT_K: 0.7, Mode.MODULO: 0.7}


@dataclass(frozen=True)
class InferenceConfig:
    mode: Mode = Mode.NORMAL
    k: int = DEFAULT_K
    temperature: Optional[float] = None
    max_tokens: int = 64
    stop: tuple[str, ...] = ("\n",)
    seed: Optional[int] = None
    grading: GradingPolicy = GradingPolicy()
    critic: GradingPolicy = GradingPolicy.for_modulo()
    reset_after: int = RESET_AFTER_FAILURES
    template: str = "base-v1"

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.reset_after < 1:
            raise ValueError("reset_after must be >= 1")

    @property
    def effective_temperature(self) -> float:
        if self.temperature is not None:
            return self.temperature
        return _DEFAULT_TEMPERATURE[self.mode]

    def params(self, query_index: int = 0) -> GenerationParams:
        seed = None if self.seed is None else self.seed + query_index
        return GenerationParams(self.effective_temperature, self.max_tokens, tuple(self.stop), seed)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "k": self.k,
            "temperature": self.effective_temperature,
            "max_tokens": self.max_tokens,
            "stop": list(self.stop),
            "seed": self.seed,
            "grading": self.grading.to_dict(),
            "critic": self.critic.to_dict(),
            "reset_after": self.reset_after,
            "template": self.template,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "InferenceConfig":
        return cls(
            mode=Mode(data["mode"]),
            k=data["k"],
            temperature=data.get("temperature"),
            max_tokens=data.get("max_tokens", 64),
            stop=tuple(data.get("stop", ("\n",))),
            seed=data.get("seed"),
            grading=GradingPolicy.from_dict(data["grading"]) if "grading" in data else GradingPolicy(),
            critic=GradingPolicy.from_dict(data["critic"]) if "critic" in data else GradingPolicy.for_modulo(),
            reset_after=data.get("reset_after", RESET_AFTER_FAILURES),
            template=data.get("template", "base-v1"),
        )


@dataclass
class Step:
    prompt: str
    response: str
    outcome: ParseOutcome
    verdict: Optional[Verdict] = None
    graded: Optional[bool] = None
    token_usage: Optional[int] = None
    latency: Optional[float] = None
    retries: int = 0
    reset_before: bool = False

    def to_dict(self) -> dict:
        return {
            "prompt": self.prompt,
            "response": self.response,
            "outcome": self.outcome.to_dict(),
            "verdict": self.verdict.to_dict() if self.verdict else None,
            "graded": self.graded,
            "token_usage": self.token_usage,
            "latency": self.latency,
            "retries": self.retries,
            "reset_before": self.reset_before,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Step":
        return cls(
            prompt=data["prompt"],
            response=data["response"],
            outcome=ParseOutcome.from_dict(data["outcome"]),
            verdict=Verdict.from_dict(data["verdict"]) if data.get("verdict") else None,
            graded=data.get("graded"),
            token_usage=data.get("token_usage"),
            latency=data.get("latency"),
            retries=data.get("retries", 0),
            reset_before=data.get("reset_before", False),
        )


@dataclass
class AttemptTranscript:
    puzzle_id: str
    index: int
    fen: str
    mode: Mode
    ground_truth: Optional[str]
    steps: list[Step] = field(default_factory=list)
    resets: int = 0
    final: Final = Final.PARSE_FAILURE
    accepted_move: Optional[str] = None
    error: Optional[str] = None
    themes: tuple[str, ...] = ()
    schema_version: int = SCHEMA_VERSION

    @property
    def queries_used(self) -> int:
        return len(self.steps)

    @property
    def total_tokens(self) -> int:
        return sum(
            s.token_usage if s.token_usage is not None else len(s.response.split()) for s in self.steps
        )

    @property
    def key(self) -> tuple[str, int]:
        return (self.puzzle_id, self.index)

    @property
    def correct(self) -> bool:
        return self.final is Final.CORRECT

    @property
    def all_failed_to_parse(self) -> bool:
        return all(not s.outcome.ok for s in self.steps)

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "puzzle_id": self.puzzle_id,
            "index": self.index,
            "fen": self.fen,
            "mode": self.mode.value,
            "ground_truth": self.ground_truth,
            "themes": list(self.themes),
            "steps": [s.to_dict() for s in self.steps],
            "queries_used": self.queries_used,
            "resets": self.resets,
            "final": self.final.value,
            "accepted_move": self.accepted_move,
            "error": self.error,
            "total_tokens": self.total_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=True)

    @classmethod
    def from_dict(cls, data: dict) -> "AttemptTranscript":
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise ValueError(f"unsupported transcript schema version {version!r}")
        return cls(
            puzzle_id=data["puzzle_id"],
            index=data["index"],
            fen=data["fen"],
            mode=Mode(data["mode"]),
            ground_truth=data.get("ground_truth"),
            steps=[Step.from_dict(s) for s in data["steps"]],
            resets=data.get("resets", 0),
            final=Final(data["final"]),
            accepted_move=data.get("accepted_move"),
            error=data.get("error"),
            themes=tuple(data.get("themes", ())),
        )

    @classmethod
    def from_json(cls, line: str) -> "AttemptTranscript":
        return cls.from_dict(json.loads(line))


def build_prompt(position: Position, mode: Mode = Mode.NORMAL, eval_hint: Optional[EngineEval] = None) -> str:
    prompt = BASE_TEMPLATE.format(fen=render_fen(position))
    if mode is Mode.CHEATING:
        if eval_hint is None:
            raise ValueError("cheating prompts need an evaluation hint")
        return HINT_TEMPLATE.format(evaluation=describe_eval(eval_hint, mate_context=False)) + prompt
    return prompt


def _query(endpoint: ModelEndpoint, prompt: str, params: GenerationParams) -> RawResponse:
    return endpoint.complete(prompt, params)


def _finish(transcript: AttemptTranscript) -> AttemptTranscript:
    if transcript.final is not Final.CORRECT and transcript.accepted_move is None:
        transcript.final = Final.PARSE_FAILURE if transcript.all_failed_to_parse else Final.INCORRECT
    return transcript


def _grade_step(
    position: Position,
    outcome: ParseOutcome,
    ground_truth: Optional[Move],
    evaluator: Optional[Evaluator],
    policy: GradingPolicy,
) -> Optional[bool]:
    if not outcome.ok:
        return None
    if ground_truth is not None and outcome.move == ground_truth:
        return True
    if evaluator is None:
        return False
    return grade(position, outcome.move, ground_truth, evaluator, policy)


def _single(
    endpoint: ModelEndpoint,
    position: Position,
    ground_truth: Optional[Move],
    cfg: InferenceConfig,
    mode: Mode,
    prompt: str,
    evaluator: Optional[Evaluator],
    puzzle_id: str,
    index: int,
) -> AttemptTranscript:
    transcript = AttemptTranscript(
        puzzle_id, index, render_fen(position), mode, ground_truth.uci() if ground_truth else None
    )
    budget = cfg.k if mode is Mode.PASS_AT_K else 1
    try:
        for q in range(budget):
            resp = _query(endpoint, prompt, cfg.params(q))
            outcome = extract_move(resp.text, position)
            graded = _grade_step(position, outcome, ground_truth, evaluator, cfg.grading)
            transcript.steps.append(
                Step(prompt, resp.text, outcome, None, graded, resp.token_usage, resp.latency, resp.retries)
            )
            if graded:
                transcript.final = Final.CORRECT
                break
    except (ModelError, EngineError) as exc:
        log.warning("attempt %s/%d aborted: %s", puzzle_id, index, exc)
        transcript.error = f"{type(exc).__name__}: {exc}"
    return _finish(transcript)


def run_normal(endpoint, position, ground_truth, cfg=InferenceConfig(), evaluator=None, *, puzzle_id="", index=1):
    """One query with the plain prompt (pass@1)."""
    prompt = build_prompt(position, Mode.NORMAL)
    return _single(endpoint, position, ground_truth, cfg, Mode.NORMAL, prompt, evaluator, puzzle_id, index)


def run_cheating(
    endpoint, position, ground_truth, cfg=InferenceConfig(mode=Mode.CHEATING), evaluator=None,
    *, eval_hint: Optional[EngineEval] = None, puzzle_id="", index=1,
):
    """One query with the position's evaluation stated up front.

    The hint comes from ``eval_hint`` or, failing that, from ``evaluator``.
    """
    if eval_hint is None:
        if evaluator is None:
            raise ValueError("cheating mode needs eval_hint or an evaluator")
        eval_hint, _ = evaluator.evaluate(position, cfg.grading.oracle_limits)
    prompt = build_prompt(position, Mode.CHEATING, eval_hint)
    return _single(endpoint, position, ground_truth, cfg, Mode.CHEATING, prompt, evaluator, puzzle_id, index)


def run_pass_at_k(
    endpoint, position, ground_truth, cfg=InferenceConfig(mode=Mode.PASS_AT_K), evaluator=None,
    *, puzzle_id="", index=1,
):
    """Up to k independent plain queries, stopping at the first correct one."""
    prompt = build_prompt(position, Mode.NORMAL)
    return _single(endpoint, position, ground_truth, cfg, Mode.PASS_AT_K, prompt, evaluator, puzzle_id, index)


def run_modulo(
    endpoint, position, ground_truth, evaluator: Evaluator, cfg=InferenceConfig(mode=Mode.MODULO),
    *, puzzle_id="", index=1,
):
    """Query, gate through both critics, re-prompt with feedback until accepted or out of budget."""
    base = build_prompt(position, Mode.NORMAL)
    transcript = AttemptTranscript(
        puzzle_id, index, render_fen(position), Mode.MODULO, ground_truth.uci() if ground_truth else None
    )
    context = base
    previous: Optional[tuple[str, str]] = None
    failures = 0
    rejected: list[Move] = []
    try:
        for q in range(cfg.k):
            reset = False
            if failures >= cfg.reset_after:
                context, previous, failures, reset = base, None, 0, True
                transcript.resets += 1
            resp = _query(endpoint, context, cfg.params(q))
            outcome = extract_move(resp.text, position)
            step = Step(context, resp.text, outcome, None, None, resp.token_usage, resp.latency, resp.retries, reset)
            transcript.steps.append(step)
            if not outcome.ok:
                failures += 1
                step.verdict = Verdict(VerdictKind.INVALID_MOVE, invalid_move_feedback(position))
                current = ("text", sanitize(resp.text).strip())
            else:
                failures = 0
                step.verdict = critic_accuracy(position, outcome.move, evaluator, cfg.critic, rejected)
                if step.verdict.kind is VerdictKind.CORRECT:
                    transcript.accepted_move = outcome.move.uci()
                    step.graded = _grade_step(position, outcome, ground_truth, evaluator, cfg.grading)
                    transcript.final = Final.CORRECT if step.graded else Final.INCORRECT
                    break
                if outcome.move not in rejected:
                    rejected.append(outcome.move)
                current = ("move", outcome.move.uci())
            if current != previous:
                context = f"{context}\n\nModel: {sanitize(resp.text).strip()}\n\nUser: {step.verdict.feedback}\n\nModel:"
            previous = current
    except (ModelError, EngineError) as exc:
        log.warning("modulo attempt %s/%d aborted: %s", puzzle_id, index, exc)
        transcript.error = f"{type(exc).__name__}: {exc}"
    return _finish(transcript)


def run_attempt(
    endpoint: ModelEndpoint,
    position: Position,
    ground_truth: Optional[Move],
    cfg: InferenceConfig,
    evaluator: Optional[Evaluator] = None,
    *,
    puzzle_id: str = "",
    index: int = 1,
    eval_hint: Optional[EngineEval] = None,
) -> AttemptTranscript:
    if cfg.mode is Mode.NORMAL:
        return run_normal(endpoint, position, ground_truth, cfg, evaluator, puzzle_id=puzzle_id, index=index)
    if cfg.mode is Mode.CHEATING:
        return run_cheating(
            endpoint, position, ground_truth, cfg, evaluator, eval_hint=eval_hint, puzzle_id=puzzle_id, index=index
        )
    if cfg.mode is Mode.PASS_AT_K:
        return run_pass_at_k(endpoint, position, ground_truth, cfg, evaluator, puzzle_id=puzzle_id, index=index)
    if evaluator is None:
        raise ValueError("modulo mode needs an evaluator")
    return run_modulo(endpoint, position, ground_truth, evaluator, cfg, puzzle_id=puzzle_id, index=index)


@dataclass(frozen=True)
class Job:
    puzzle_id: str
    index: int
    fen: str
    ground_truth: str
    themes: tuple[str, ...] = ()


def run_jobs(
    endpoint: ModelEndpoint,
    jobs: Sequence[Job],
    cfg: InferenceConfig,
    evaluator_factory: Optional[Callable[[], Evaluator]] = None,
    *,
    workers: int = 1,
    on_result: Optional[Callable[[AttemptTranscript], None]] = None,
) -> list[AttemptTranscript]:
    """Run every job; each worker thread owns one evaluator.

    ``on_result`` is called under a lock, so it may append to a shared file.
    Results come back in job order regardless of completion order.
    """
    local = threading.local()
    made: list = []
    made_lock = threading.Lock()
    sink_lock = threading.Lock()

    def evaluator() -> Optional[Evaluator]:
        if evaluator_factory is None:
            return None
        if not hasattr(local, "evaluator"):
            local.evaluator = evaluator_factory()
            with made_lock:
                made.append(local.evaluator)
        return local.evaluator

    def work(job: Job) -> AttemptTranscript:
        t = run_attempt(
            endpoint, parse_fen(job.fen), Move.from_uci(job.ground_truth), cfg, evaluator(),
            puzzle_id=job.puzzle_id, index=job.index,
        )
        t.themes = job.themes
        if on_result is not None:
            with sink_lock:
                on_result(t)
        return t

    try:
        if workers <= 1:
            return [work(j) for j in jobs]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, jobs))
    finally:
        for ev in made:
            close = getattr(ev, "close", None)
            if close:
                close()


def write_transcripts(path, transcripts: Iterable[AttemptTranscript], append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="ascii") as fh:
        for t in transcripts:
            fh.write(t.to_json() + "\n")


def read_transcripts(path) -> Iterator[AttemptTranscript]:
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield AttemptTranscript.from_json(line)
            except (ValueError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc


def render_trace(transcript: AttemptTranscript) -> str:
    """Human-readable conversation in the User / Model / Verifier box order."""
    out: list[str] = []
    first = True
    for step in transcript.steps:
        if first or step.reset_before:
            out.append("User:\n" + step.prompt)
            first = False
        out.append("Model:\n" + step.response)
        if step.verdict is not None:
            out.append("Verifier:\n" + step.verdict.label)
            if step.verdict.feedback:
                out.append("User:\n" + step.verdict.feedback)
    return "\n\n".join(out)
