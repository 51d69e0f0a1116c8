"""Pull a candidate move out of raw model output."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .board import Move, Position
from .notation import AmbiguousMoveError, IllegalMoveTextError, MoveTextError, parse_move_text

ROLE_TAG_RE = re.compile(r"(?:Model|User):\r?\n?")
TOKEN_RE = re.compile(r"[A-Za-z0-9=+#\-]+")


@dataclass(frozen=True)
class RawResponse:
    text: str
    token_usage: Optional[int] = None
    latency: Optional[float] = None
    retries: int = 0

    def __post_init__(self) -> None:
        if self.token_usage is not None and self.token_usage < 0:
            raise ValueError("token_usage must be >= 0")


@dataclass(frozen=True)
class ParseOutcome:
    """Either a legal move (``move`` set) or a failure with a reason."""

    move: Optional[Move] = None
    reason: Optional[str] = None
    token: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.move is not None

    @classmethod
    def parsed(cls, move: Move, token: str) -> "ParseOutcome":
        return cls(move=move, token=token)

    @classmethod
    def failure(cls, reason: str) -> "ParseOutcome":
        return cls(reason=reason)

    def to_dict(self) -> dict:
        if self.ok:
            return {"kind": "parsed", "move": self.move.uci(), "token": self.token}
        return {"kind": "parse_failure", "reason": self.reason}

    @classmethod
    def from_dict(cls, data: dict) -> "ParseOutcome":
        if data["kind"] == "parsed":
            return cls.parsed(Move.from_uci(data["move"]), data.get("token") or data["move"])
        return cls.failure(data.get("reason") or "")


def sanitize(text: str) -> str:
    """Remove hallucinated "Model:" / "User:" role tags (and a newline right after one)."""
    while True:
        cleaned = ROLE_TAG_RE.sub("", text)
        if cleaned == text:
            return cleaned
        text = cleaned


def tokenize(text: str) -> list[str]:
    return TOKEN_RE.findall(text)


def extract_move(text: str, position: Position) -> ParseOutcome:
    """First token that resolves to a legal move wins; otherwise a failure."""
    tokens = tokenize(sanitize(text or ""))
    if not tokens:
        return ParseOutcome.failure("empty response")
    first_error: Optional[str] = None
    for token in tokens:
        try:
            move = parse_move_text(token, position)
        except (IllegalMoveTextError, AmbiguousMoveError) as exc:
            first_error = first_error or str(exc)
            continue
        except MoveTextError:
            continue
        return ParseOutcome.parsed(move, token)
    return ParseOutcome.failure(first_error or "no move-like token")


def count_tokens(response: RawResponse) -> int:
    if response.token_usage is not None:
        return response.token_usage
    return len(response.text.split())
