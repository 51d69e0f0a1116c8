"""Hard critics for the re-prompting loop and the offline correctness grader."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .board import IllegalMoveError, Move, Position
from .engine import GROUND_TRUTH_LIMITS, EngineEval, EngineLimits, EvalKind, Evaluator
from .parsing import ParseOutcome, extract_move

INVALID_MOVE_HEADER = (
    "The move you provided is invalid. Please provide one of the following legal moves in the position:"
)
INACCURATE_MOVE_TEMPLATE = (
    "The move you provided ({move}) is valid but does not improve the evaluation of the position. "
    "The current position is {before} for you and the move you provided gives a position with the "
    "evaluation of {after}. Please try one of the following alternative legal moves instead:"
)

INVALID_MOVE_LABEL = "[INVALID MOVE: CANNOT PARSE VALID UCI/SAN MOVE STRING]"
INACCURATE_MOVE_LABEL = "[VALID BUT INACCURATE MOVE: DOES NOT IMPROVE EVALUATION FROM THE ORIGINAL POSITION]"
CORRECT_MOVE_LABEL = "[MOVE CORRECT]"


class VerdictKind(enum.Enum):
    INVALID_MOVE = "invalid_move"
    VALID_BUT_INACCURATE = "valid_but_inaccurate"
    CORRECT = "correct"


_LABELS = {
    VerdictKind.INVALID_MOVE: INVALID_MOVE_LABEL,
    VerdictKind.VALID_BUT_INACCURATE: INACCURATE_MOVE_LABEL,
    VerdictKind.CORRECT: CORRECT_MOVE_LABEL,
}


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    feedback: Optional[str] = None
    resulting_eval: Optional[EngineEval] = None

    def __post_init__(self) -> None:
        if (self.kind is VerdictKind.CORRECT) != (self.feedback is None):
            raise ValueError("rejections carry feedback and correct verdicts never do")

    @property
    def label(self) -> str:
        return _LABELS[self.kind]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "feedback": self.feedback,
            "resulting_eval": self.resulting_eval.to_dict() if self.resulting_eval else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Verdict":
        ev = data.get("resulting_eval")
        return cls(VerdictKind(data["kind"]), data.get("feedback"), EngineEval.from_dict(ev) if ev else None)


@dataclass(frozen=True)
class GradingPolicy:
    """How non-ground-truth moves are judged.

    ``cp_threshold`` of None means ground truth only on centipawn positions;
    an integer t accepts moves whose resulting eval is at least before - t.
    """

    oracle_limits: EngineLimits = GROUND_TRUTH_LIMITS
    mate_rule_enabled: bool = True
    cp_threshold: Optional[int] = None

    def __post_init__(self) -> None:
        if self.cp_threshold is not None and self.cp_threshold < 0:
            raise ValueError("cp_threshold must be >= 0")

    @classmethod
    def for_modulo(cls, limits: EngineLimits = GROUND_TRUTH_LIMITS, threshold: int = 0) -> "GradingPolicy":
        return cls(oracle_limits=limits, cp_threshold=threshold)

    def to_dict(self) -> dict:
        return {
            "oracle_limits": self.oracle_limits.to_dict(),
            "mate_rule_enabled": self.mate_rule_enabled,
            "cp_threshold": self.cp_threshold,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GradingPolicy":
        return cls(
            oracle_limits=EngineLimits.from_dict(data["oracle_limits"]),
            mate_rule_enabled=data.get("mate_rule_enabled", True),
            cp_threshold=data.get("cp_threshold"),
        )


@dataclass(frozen=True)
class Rejection:
    feedback: str
    outcome: ParseOutcome = field(default_factory=lambda: ParseOutcome.failure("rejected"))


def invalid_move_feedback(position: Position) -> str:
    return INVALID_MOVE_HEADER + "\n\n" + ", ".join(m.uci() for m in position.legal_moves())


def critic_validity(position: Position, response: str) -> Union[Move, Rejection]:
    """Critic #1: does the response name a legal move?"""
    outcome = extract_move(response, position)
    if outcome.ok:
        return outcome.move
    return Rejection(invalid_move_feedback(position), outcome)


def describe_eval(evaluation: EngineEval, *, mate_context: bool) -> str:
    if evaluation.kind is EvalKind.MATE_IN:
        return f"Mate in {evaluation.value}"
    if evaluation.kind is EvalKind.TERMINAL_MATE:
        return "checkmate"
    if evaluation.kind is EvalKind.TERMINAL_STALEMATE:
        return "stalemate"
    return "no forced mate" if mate_context else f"{evaluation.value} centipawns"


def improves(before: EngineEval, after: EngineEval, policy: GradingPolicy) -> bool:
    """Does ``after`` (mover's view, post-move) count as an improvement on ``before``?"""
    if before.kind is EvalKind.MATE_IN and before.value > 0:
        if not policy.mate_rule_enabled:
            return False
        n = before.value
        if after.kind is EvalKind.TERMINAL_MATE:
            return n == 1
        return after.kind is EvalKind.MATE_IN and 0 < after.value <= n - 1
    if policy.cp_threshold is None:
        return False
    return after.score() >= before.score() - policy.cp_threshold


def evaluate_after(session: Evaluator, position: Position, move: Move, limits: EngineLimits) -> EngineEval:
    """Eval of the successor, re-expressed from the original mover's side."""
    evaluation, _ = session.evaluate(position.apply_move(move), limits)
    return evaluation.negate()


def critic_accuracy(
    position: Position,
    move: Move,
    session: Evaluator,
    policy: GradingPolicy,
    rejected: Iterable[Move] = (),
) -> Verdict:
    """Critic #2: accept the engine's choice or any improving move.

    ``rejected`` lists moves already turned down in this loop; they are left
    out of the alternatives offered in the feedback, as is ``move`` itself.
    """
    legal = position.legal_moves()
    if move not in legal:
        raise IllegalMoveError(f"critic_accuracy needs a legal move, got {move.uci()}")
    before, best = session.evaluate(position, policy.oracle_limits)
    after = evaluate_after(session, position, move, policy.oracle_limits)
    if move == best or improves(before, after, policy):
        return Verdict(VerdictKind.CORRECT, resulting_eval=after)
    excluded = set(rejected) | {move}
    alternatives = [m for m in legal if m not in excluded]
    mate_context = before.kind is EvalKind.MATE_IN
    feedback = INACCURATE_MOVE_TEMPLATE.format(
        move=move.uci(),
        before=describe_eval(before, mate_context=mate_context),
        after=describe_eval(after, mate_context=mate_context),
    )
    feedback += "\n\n" + ", ".join(m.uci() for m in alternatives)
    return Verdict(VerdictKind.VALID_BUT_INACCURATE, feedback, after)


def grade(
    position: Position,
    move: Move,
    ground_truth: Move,
    session: Evaluator,
    policy: GradingPolicy = GradingPolicy(),
) -> bool:
    """Offline correctness: ground-truth match or an alternatively good move."""
    if move == ground_truth:
        return True
    if move not in position.legal_moves():
        raise IllegalMoveError(f"cannot grade illegal move {move.uci()}")
    before, _ = session.evaluate(position, policy.oracle_limits)
    if before.kind is EvalKind.MATE_IN and before.value > 0:
        if not policy.mate_rule_enabled:
            return False
    elif policy.cp_threshold is None:
        return False
    after = evaluate_after(session, position, move, policy.oracle_limits)
    return improves(before, after, policy)


class BruteForceMateOracle:
    """Engine-free evaluator that only recognises short forced mates.

    Reports ``MateIn(k)`` / ``MateIn(-k)`` for mates within ``max_moves``
    moves and ``Centipawns(0)`` (no best move) otherwise. Enough to drive the
    critics on mate-in-1 positions without an engine.
    """

    def __init__(self, max_moves: int = 1) -> None:
        if max_moves < 1:
            raise ValueError("max_moves must be >= 1")
        self.max_moves = max_moves
        self._cache: dict[tuple[Position, int], tuple[EngineEval, Optional[Move]]] = {}

    def evaluate(self, position: Position, limits: EngineLimits = GROUND_TRUTH_LIMITS) -> tuple[EngineEval, Optional[Move]]:
        key = (position, self.max_moves)
        if key not in self._cache:
            self._cache[key] = self._evaluate(position)
        return self._cache[key]

    def _evaluate(self, position: Position) -> tuple[EngineEval, Optional[Move]]:
        if not position.has_legal_move():
            if position.is_check():
                return EngineEval.terminal_mate(), None
            return EngineEval.terminal_stalemate(), None
        for k in range(1, self.max_moves + 1):
            move = self._mating_move(position, k)
            if move is not None:
                return EngineEval.mate(k), move
        for k in range(1, self.max_moves + 1):
            if self._is_mated_within(position, k):
                return EngineEval.mate(-k), None
        return EngineEval.cp(0), None

    def _mating_move(self, position: Position, k: int) -> Optional[Move]:
        for move in position.legal_moves():
            after = position._push(move)
            if k == 1:
                if after.is_checkmate():
                    return move
            elif after.has_legal_move() and all(
                self._mating_move(after._push(reply), k - 1) is not None for reply in after.legal_moves()
            ):
                return move
        return None

    def _is_mated_within(self, position: Position, k: int) -> bool:
        for move in position.legal_moves():
            after = position._push(move)
            if not any(self._mating_move(after, j) is not None for j in range(1, k + 1)):
                return False
        return True
