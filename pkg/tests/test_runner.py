from __future__ import annotations

import pytest

from chessloop.board import Move
from chessloop.engine import EngineEval
from chessloop.models import ScriptedModel, TransportError
from chessloop.runner import (
    AttemptTranscript,
    Final,
    InferenceConfig,
    Job,
    Mode,
    build_prompt,
    read_transcripts,
    render_trace,
    run_attempt,
    run_cheating,
    run_jobs,
    run_modulo,
    run_normal,
    run_pass_at_k,
    write_transcripts,
)
from chessloop.verification import CORRECT_MOVE_LABEL, INACCURATE_MOVE_LABEL, BruteForceMateOracle

from .conftest import INVALID_EXAMPLE_FEN, MATE_EXAMPLE_FEN

D8D1 = Move.from_uci("d8d1")
MATE_EXAMPLE_PROMPT = (
    "You are a chess engine. Given the following board position in FEN notation, provide the single best "
    "move in UCI format.\n\nFEN: 3r4/6Rp/pk6/1p3B2/5N2/P3pbP1/1P5P/4K3 b - - 3 36\n\nBest move:"
)
MODULO = InferenceConfig(mode=Mode.MODULO)


class FailingModel:
    def complete(self, prompt, params):
        raise TransportError("endpoint down")


def test_prompt_golden(mate_example):
    assert build_prompt(mate_example) == MATE_EXAMPLE_PROMPT


def test_cheating_prompt_prepends_hint(mate_example):
    prompt = build_prompt(mate_example, Mode.CHEATING, EngineEval.mate(1))
    assert prompt == "The current evaluation of this position is: Mate in 1 for you.\n" + MATE_EXAMPLE_PROMPT
    cp = build_prompt(mate_example, Mode.CHEATING, EngineEval.cp(-40))
    assert cp.startswith("The current evaluation of this position is: -40 centipawns for you.\n")
    with pytest.raises(ValueError):
        build_prompt(mate_example, Mode.CHEATING)


def test_mode_defaults():
    assert InferenceConfig().effective_temperature == 0.0
    assert InferenceConfig(mode=Mode.CHEATING).effective_temperature == 0.0
    assert InferenceConfig(mode=Mode.PASS_AT_K).effective_temperature == 0.7
    assert MODULO.params(3).temperature == 0.7
    assert InferenceConfig(seed=10).params(3).seed == 13
    assert Mode.parse("pass10") is Mode.PASS_AT_K
    cfg = InferenceConfig(mode=Mode.MODULO, k=5, seed=1)
    assert InferenceConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ValueError):
        InferenceConfig(k=0)


def test_normal_mode(mate_example):
    t = run_normal(ScriptedModel([" Rd1#"]), mate_example, D8D1, puzzle_id="p", index=1)
    assert t.final is Final.CORRECT and t.queries_used == 1
    t = run_normal(ScriptedModel(["f3e2"]), mate_example, D8D1)
    assert t.final is Final.INCORRECT
    t = run_normal(ScriptedModel(["I resign"]), mate_example, D8D1)
    assert t.final is Final.PARSE_FAILURE


def test_alternative_mate_graded_with_oracle():
    from chessloop.board import parse_fen

    p = parse_fen("6k1/5ppp/8/8/8/8/5PPP/RR4K1 w - - 0 1")
    gt = Move.from_uci("a1a8")
    assert run_normal(ScriptedModel(["b1b8"]), p, gt).final is Final.INCORRECT
    assert run_normal(ScriptedModel(["b1b8"]), p, gt, evaluator=BruteForceMateOracle(1)).final is Final.CORRECT


def test_cheating_mode_uses_evaluator_for_hint(mate_example):
    model = ScriptedModel(["d8d1"])
    t = run_cheating(model, mate_example, D8D1, evaluator=BruteForceMateOracle(1))
    assert t.final is Final.CORRECT
    assert model.prompts[0].startswith("The current evaluation of this position is: Mate in 1 for you.")
    with pytest.raises(ValueError):
        run_cheating(ScriptedModel(["d8d1"]), mate_example, D8D1)


def test_pass_at_k_stops_at_first_correct(mate_example):
    cfg = InferenceConfig(mode=Mode.PASS_AT_K, k=10)
    model = ScriptedModel(["f3e2", "junk", "d8d1", "never asked"])
    t = run_pass_at_k(model, mate_example, D8D1, cfg)
    assert t.final is Final.CORRECT and t.queries_used == 3
    assert len(set(model.prompts)) == 1  # independent samples, no feedback
    t = run_pass_at_k(ScriptedModel(["junk"] * 10), mate_example, D8D1, cfg)
    assert t.final is Final.PARSE_FAILURE and t.queries_used == 10
    t = run_pass_at_k(ScriptedModel(["junk"] * 9 + ["f3e2"]), mate_example, D8D1, cfg)
    assert t.final is Final.INCORRECT


def test_modulo_mate_example_example(mate_example):
    model = ScriptedModel(["f3e2", "d8d1"])
    t = run_modulo(model, mate_example, D8D1, BruteForceMateOracle(1), MODULO)
    assert t.final is Final.CORRECT and t.accepted_move == "d8d1" and t.queries_used == 2
    assert model.prompts[1].startswith(MATE_EXAMPLE_PROMPT + "\n\nModel: f3e2\n\nUser: The move you provided (f3e2)")
    assert model.prompts[1].endswith("e3e2, h7h5\n\nModel:")


def test_modulo_invalid_example_example(invalid_example):
    from chessloop.verification import INVALID_MOVE_HEADER

    # Qxh8 mates at once, so the critic turns c3c7 away and the loop continues
    model = ScriptedModel(["Rxc7", "c3c7", "c3h8"])
    t = run_modulo(model, invalid_example, Move.from_uci("c3h8"), BruteForceMateOracle(1), MODULO)
    assert t.steps[0].verdict.feedback.startswith(INVALID_MOVE_HEADER)
    assert "\n\nModel: Rxc7\n\nUser: " + INVALID_MOVE_HEADER in model.prompts[1]
    assert t.steps[1].verdict.feedback.startswith("The move you provided (c3c7) is valid but")
    assert "c3c7" not in t.steps[1].verdict.feedback.split("\n\n")[-1].split(", ")
    assert t.final is Final.CORRECT and t.accepted_move == "c3h8" and t.queries_used == 3


def test_modulo_resets_after_three_failures(mate_example):
    model = ScriptedModel(["x", "y", "z", "d8d1"])
    t = run_modulo(model, mate_example, D8D1, BruteForceMateOracle(1), MODULO)
    assert t.resets == 1 and t.steps[3].reset_before
    assert model.prompts[0] == model.prompts[3] == MATE_EXAMPLE_PROMPT
    assert len(model.prompts[0]) < len(model.prompts[1]) < len(model.prompts[2])
    assert t.final is Final.CORRECT and t.queries_used == 4


def test_modulo_repeated_response_does_not_grow_context(mate_example):
    model = ScriptedModel(["f3e2", "f3e2", "d8d1"])
    run_modulo(model, mate_example, D8D1, BruteForceMateOracle(1), MODULO)
    assert model.prompts[1] == model.prompts[2]


def test_modulo_budget_exhausted(mate_example):
    cfg = InferenceConfig(mode=Mode.MODULO, k=4)
    t = run_modulo(ScriptedModel(["f3e2", "h7h6", "a6a5", "b5b4"]), mate_example, D8D1, BruteForceMateOracle(1), cfg)
    assert t.final is Final.INCORRECT and t.accepted_move is None and t.queries_used == 4
    t = run_modulo(ScriptedModel(["?"] * 4), mate_example, D8D1, BruteForceMateOracle(1), cfg)
    assert t.final is Final.PARSE_FAILURE and t.resets == 1


def test_endpoint_errors_are_recorded(mate_example):
    t = run_normal(FailingModel(), mate_example, D8D1)
    assert t.final is Final.PARSE_FAILURE and "endpoint down" in t.error
    t = run_modulo(FailingModel(), mate_example, D8D1, BruteForceMateOracle(1), MODULO)
    assert t.error and t.queries_used == 0
    with pytest.raises(ValueError):
        run_attempt(ScriptedModel(["d8d1"]), mate_example, D8D1, MODULO)


def test_transcript_round_trip_and_trace(tmp_path, mate_example):
    t = run_modulo(ScriptedModel(["f3e2", "d8d1"]), mate_example, D8D1, BruteForceMateOracle(1), MODULO,
                   puzzle_id="abc", index=2)
    again = AttemptTranscript.from_json(t.to_json())
    assert again.to_json() == t.to_json()
    path = tmp_path / "t.jsonl"
    write_transcripts(path, [t])
    write_transcripts(path, [t], append=True)
    assert [x.key for x in read_transcripts(path)] == [("abc", 2), ("abc", 2)]
    trace = render_trace(t)
    assert trace.index("User:") < trace.index("Model:\nf3e2") < trace.index("Verifier:\n" + INACCURATE_MOVE_LABEL)
    assert trace.rstrip().endswith("Verifier:\n" + CORRECT_MOVE_LABEL)
    bad = dict(t.to_dict(), schema_version=99)
    with pytest.raises(ValueError):
        AttemptTranscript.from_dict(bad)


def test_run_jobs_keeps_order_and_is_deterministic():
    jobs = [Job("b", 1, MATE_EXAMPLE_FEN, "d8d1", ("mateIn1",)), Job("a", 1, INVALID_EXAMPLE_FEN, "c3h8")]

    class EchoGroundTruth:
        def complete(self, prompt, params):
            from chessloop.models import RawResponse

            return RawResponse("d8d1" if "3r4/" in prompt else "c3h8")

    seen = []
    out = run_jobs(EchoGroundTruth(), jobs, MODULO, lambda: BruteForceMateOracle(1), workers=2, on_result=seen.append)
    assert [t.puzzle_id for t in out] == ["b", "a"]
    assert sorted(t.puzzle_id for t in seen) == ["a", "b"]
    assert all(t.correct for t in out) and out[0].themes == ("mateIn1",)
    again = run_jobs(EchoGroundTruth(), jobs, MODULO, lambda: BruteForceMateOracle(1))
    strip = [t.to_dict() for t in out]
    for d in strip + (other := [t.to_dict() for t in again]):
        for s in d["steps"]:
            s["latency"] = None
    assert strip == other
