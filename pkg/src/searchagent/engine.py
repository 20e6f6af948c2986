"""Multi-turn episode engine.

Drives a policy against a tool suite under hard budgets and records every
turn. The engine is deterministic: given the same policy, tools, budget,
question, and image reference, the resulting episode serializes to
identical bytes. All randomness lives behind explicit seeds inside the
policy and the tool suite.

Budget semantics: a directive that would exceed a budget is recorded but
never executed, and the episode terminates with BudgetExhausted. A turn
that would push the generated-token count past ``max_response_tokens`` is
truncated at the allowance (the way decoding stops at a length cap),
recorded with a ``truncated_output`` error diagnostic, and terminates the
episode the same way. Tool failures do not consume budget; they surface as
information blocks carrying a failure notice so the policy can recover.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, Sequence, runtime_checkable

from .tags import (
    AgentAction,
    Answer,
    Diagnostic,
    DiagnosticKind,
    Directive,
    ImageSearchCrop,
    ImageSearchWhole,
    ParseOutcome,
    TextSearch,
    parse_turn,
)

TOOL_FAILURE_PREFIX = "Tool call failed: "

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class EngineError(RuntimeError):
    """Engine misconfiguration or misuse. Never raised for policy behavior."""


class ToolError(RuntimeError):
    """Base class for recoverable tool-call failures."""


def count_tokens(text: str) -> int:
    """Count tokens as word characters runs plus isolated punctuation marks."""
    return len(_TOKEN_RE.findall(text))


def truncate_to_tokens(text: str, limit: int) -> str:
    """Cut text after its first ``limit`` tokens, preserving original spacing."""
    if limit <= 0:
        return ""
    matches = list(_TOKEN_RE.finditer(text))
    if len(matches) <= limit:
        return text
    return text[: matches[limit - 1].end()]


@dataclass(frozen=True)
class Budget:
    """Hard per-episode resource limits. All caps are positive."""

    max_image_searches: int = 1
    max_total_tool_calls: int = 10
    max_response_tokens: int = 8192
    max_turns: int = 12

    def __post_init__(self) -> None:
        for name in (
            "max_image_searches",
            "max_total_tool_calls",
            "max_response_tokens",
            "max_turns",
        ):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.max_image_searches > self.max_total_tool_calls:
            raise ValueError("max_image_searches cannot exceed max_total_tool_calls")


class InformationSource(str, Enum):
    TEXT_SEARCH = "text_search"
    IMAGE_SEARCH = "image_search"


@dataclass(frozen=True)
class InformationBlock:
    """Tool output injected into the conversation after a search turn."""

    source: InformationSource
    content: str
    turn_index: int

    def __post_init__(self) -> None:
        if not isinstance(self.content, str) or not self.content:
            raise ValueError("information content must be a non-empty string")
        if "<information>" in self.content or "</information>" in self.content:
            raise ValueError("information content may not contain information tags")
        if not isinstance(self.turn_index, int) or self.turn_index < 0:
            raise ValueError("turn_index must be a non-negative integer")

    @property
    def is_failure_notice(self) -> bool:
        return self.content.startswith(TOOL_FAILURE_PREFIX)


@dataclass(frozen=True)
class TurnRecord:
    """One assistant turn, its parse, and any information block it triggered."""

    assistant_raw: str
    parsed: ParseOutcome
    information: InformationBlock | None = None


@dataclass(frozen=True)
class Answered:
    final_text: str


@dataclass(frozen=True)
class BudgetExhausted:
    pass


@dataclass(frozen=True)
class MaxTurnsReached:
    pass


@dataclass(frozen=True)
class ProtocolViolation:
    pass


EpisodeStatus = Answered | BudgetExhausted | MaxTurnsReached | ProtocolViolation


@dataclass
class Ledger:
    """Running count of executed searches and generated tokens."""

    image_searches_used: int = 0
    text_searches_used: int = 0
    tokens_used: int = 0

    @property
    def total_tool_calls(self) -> int:
        return self.image_searches_used + self.text_searches_used


@dataclass
class Episode:
    """A completed episode: the full transcript plus resource usage and status."""

    question: str
    image_ref: str
    turns: list[TurnRecord]
    ledger: Ledger
    status: EpisodeStatus


@dataclass
class EpisodeState:
    """An episode in progress. ``status`` stays None until terminal."""

    question: str
    image_ref: str
    turns: list[TurnRecord] = field(default_factory=list)
    ledger: Ledger = field(default_factory=Ledger)
    status: EpisodeStatus | None = None

    def to_episode(self) -> Episode:
        if self.status is None:
            raise EngineError("episode is not terminal yet")
        return Episode(self.question, self.image_ref, list(self.turns), self.ledger, self.status)


@runtime_checkable
class Policy(Protocol):
    """Produces the next raw assistant turn given the visible history."""

    def next_turn(
        self, question: str, image_ref: str, history: Sequence[TurnRecord]
    ) -> str: ...


@runtime_checkable
class Tools(Protocol):
    """Search backends. Implementations must be pure functions of their inputs
    (salt included) and safe for concurrent use."""

    def lookup_text(self, question: str, query: str, *, salt: int = 0) -> str: ...

    def lookup_image(
        self, question: str, image_ref: str, expression: str | None, *, salt: int = 0
    ) -> str: ...


class ScriptedPolicy:
    """Replays a fixed sequence of raw turns. Running past the script is an error."""

    def __init__(self, script: Sequence[str]):
        self._script = list(script)
        self._next = 0

    def next_turn(self, question: str, image_ref: str, history: Sequence[TurnRecord]) -> str:
        # Keyed by history length, not an internal cursor, so replaying a
        # prefix of the episode yields the same turns.
        index = len(history)
        if index >= len(self._script):
            raise EngineError("scripted policy exhausted its script")
        return self._script[index]


def step(state: EpisodeState, raw_turn: str, tools: Tools, budget: Budget) -> EpisodeState:
    """Apply one assistant turn to the state. Returns the same state, updated.

    run_episode is observably equal to folding this over the policy's turns.
    """
    if state.status is not None:
        raise EngineError("cannot step a terminal episode")

    allowance = budget.max_response_tokens - state.ledger.tokens_used
    tokens = count_tokens(raw_turn)
    if tokens > allowance:
        truncated = truncate_to_tokens(raw_turn, allowance)
        base = parse_turn(truncated)
        marker = Diagnostic(
            len(truncated),
            DiagnosticKind.TRUNCATED_OUTPUT,
            f"output truncated at {budget.max_response_tokens} response tokens",
        )
        diagnostics = tuple(
            sorted((*base.diagnostics, marker), key=lambda d: d.position)
        )
        state.turns.append(TurnRecord(truncated, ParseOutcome(None, diagnostics), None))
        state.ledger.tokens_used = budget.max_response_tokens
        state.status = BudgetExhausted()
        return state
    state.ledger.tokens_used += tokens

    outcome = parse_turn(raw_turn)
    if outcome.action is None:
        state.turns.append(TurnRecord(raw_turn, outcome, None))
        state.status = ProtocolViolation()
        return state

    directive = outcome.action.directive
    if isinstance(directive, Answer):
        state.turns.append(TurnRecord(raw_turn, outcome, None))
        state.status = Answered(directive.text)
        return state

    is_image = isinstance(directive, (ImageSearchWhole, ImageSearchCrop))
    over_total = state.ledger.total_tool_calls + 1 > budget.max_total_tool_calls
    over_image = is_image and state.ledger.image_searches_used + 1 > budget.max_image_searches
    if over_total or over_image:
        state.turns.append(TurnRecord(raw_turn, outcome, None))
        state.status = BudgetExhausted()
        return state

    turn_index = len(state.turns)
    information = _execute_search(state, directive, tools, turn_index)
    state.turns.append(TurnRecord(raw_turn, outcome, information))
    if len(state.turns) >= budget.max_turns:
        state.status = MaxTurnsReached()
    return state


def _execute_search(
    state: EpisodeState, directive: Directive, tools: Tools, turn_index: int
) -> InformationBlock:
    if isinstance(directive, TextSearch):
        source = InformationSource.TEXT_SEARCH
        try:
            content = tools.lookup_text(state.question, directive.query, salt=turn_index)
        except ToolError as exc:
            content = f"{TOOL_FAILURE_PREFIX}{exc}"
        else:
            state.ledger.text_searches_used += 1
    else:
        source = InformationSource.IMAGE_SEARCH
        expression = directive.expression if isinstance(directive, ImageSearchCrop) else None
        try:
            content = tools.lookup_image(
                state.question, state.image_ref, expression, salt=turn_index
            )
        except ToolError as exc:
            content = f"{TOOL_FAILURE_PREFIX}{exc}"
        else:
            state.ledger.image_searches_used += 1
    return InformationBlock(source, content, turn_index)


def run_episode(
    policy: Policy, tools: Tools, budget: Budget, question: str, image_ref: str
) -> Episode:
    """Run one episode to termination and return the record."""
    if not callable(getattr(policy, "next_turn", None)):
        raise EngineError("policy must provide next_turn()")
    for method in ("lookup_text", "lookup_image"):
        if not callable(getattr(tools, method, None)):
            raise EngineError(f"tool suite must provide {method}()")
    if not isinstance(budget, Budget):
        raise EngineError("budget must be a Budget")
    if not question or not isinstance(question, str):
        raise EngineError("question must be a non-empty string")
    if not image_ref or not isinstance(image_ref, str):
        raise EngineError("image_ref must be a non-empty string")

    state = EpisodeState(question=question, image_ref=image_ref)
    while state.status is None:
        raw = policy.next_turn(question, image_ref, tuple(state.turns))
        step(state, raw, tools, budget)
        if len(state.turns) > budget.max_turns:
            raise EngineError("engine failed to terminate at max_turns")
    return state.to_episode()


# --- serialization ---------------------------------------------------------

_JSON_KW = {"ensure_ascii": False, "separators": (",", ":")}


def directive_to_dict(d: Directive) -> dict:
    if isinstance(d, Answer):
        return {"kind": "answer", "text": d.text}
    if isinstance(d, TextSearch):
        return {"kind": "text_search", "query": d.query}
    if isinstance(d, ImageSearchWhole):
        return {"kind": "image_search_whole"}
    return {"kind": "image_search_crop", "expression": d.expression}


def directive_from_dict(d: dict) -> Directive:
    kind = d.get("kind")
    if kind == "answer":
        return Answer(d["text"])
    if kind == "text_search":
        return TextSearch(d["query"])
    if kind == "image_search_whole":
        return ImageSearchWhole()
    if kind == "image_search_crop":
        return ImageSearchCrop(d["expression"])
    raise ValueError(f"unknown directive kind {kind!r}")


def _outcome_to_dict(outcome: ParseOutcome) -> dict:
    action = None
    if outcome.action is not None:
        action = {
            "reason": outcome.action.reason,
            "directive": directive_to_dict(outcome.action.directive),
        }
    return {
        "action": action,
        "diagnostics": [
            {"position": d.position, "kind": d.kind.value, "message": d.message}
            for d in outcome.diagnostics
        ],
    }


def _outcome_from_dict(d: dict) -> ParseOutcome:
    action = None
    if d.get("action") is not None:
        action = AgentAction(
            d["action"].get("reason"), directive_from_dict(d["action"]["directive"])
        )
    diagnostics = tuple(
        Diagnostic(x["position"], DiagnosticKind(x["kind"]), x["message"])
        for x in d.get("diagnostics", ())
    )
    return ParseOutcome(action, diagnostics)


def _status_to_dict(status: EpisodeStatus) -> dict:
    if isinstance(status, Answered):
        return {"kind": "answered", "final_text": status.final_text}
    if isinstance(status, BudgetExhausted):
        return {"kind": "budget_exhausted"}
    if isinstance(status, MaxTurnsReached):
        return {"kind": "max_turns_reached"}
    if isinstance(status, ProtocolViolation):
        return {"kind": "protocol_violation"}
    raise ValueError(f"unknown status {status!r}")


def _status_from_dict(d: dict) -> EpisodeStatus:
    kind = d.get("kind")
    if kind == "answered":
        return Answered(d["final_text"])
    if kind == "budget_exhausted":
        return BudgetExhausted()
    if kind == "max_turns_reached":
        return MaxTurnsReached()
    if kind == "protocol_violation":
        return ProtocolViolation()
    raise ValueError(f"unknown status kind {kind!r}")


def episode_to_dict(episode: Episode) -> dict:
    turns = []
    for t in episode.turns:
        info = None
        if t.information is not None:
            info = {
                "source": t.information.source.value,
                "content": t.information.content,
                "turn_index": t.information.turn_index,
            }
        turns.append(
            {
                "assistant_raw": t.assistant_raw,
                "parsed": _outcome_to_dict(t.parsed),
                "information": info,
            }
        )
    return {
        "question": episode.question,
        "image_ref": episode.image_ref,
        "turns": turns,
        "ledger": {
            "image_searches_used": episode.ledger.image_searches_used,
            "text_searches_used": episode.ledger.text_searches_used,
            "tokens_used": episode.ledger.tokens_used,
        },
        "status": _status_to_dict(episode.status),
    }


def episode_from_dict(d: dict) -> Episode:
    turns = []
    for t in d["turns"]:
        info = None
        if t.get("information") is not None:
            i = t["information"]
            info = InformationBlock(
                InformationSource(i["source"]), i["content"], i["turn_index"]
            )
        turns.append(TurnRecord(t["assistant_raw"], _outcome_from_dict(t["parsed"]), info))
    ledger = Ledger(
        d["ledger"]["image_searches_used"],
        d["ledger"]["text_searches_used"],
        d["ledger"]["tokens_used"],
    )
    return Episode(d["question"], d["image_ref"], turns, ledger, _status_from_dict(d["status"]))


def dumps_episode(episode: Episode) -> str:
    return json.dumps(episode_to_dict(episode), **_JSON_KW)


def loads_episode(line: str) -> Episode:
    return episode_from_dict(json.loads(line))


def write_episodes_jsonl(path: str | Path, episodes: Iterable[Episode]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(dumps_episode(ep) + "\n")


def read_episodes_jsonl(path: str | Path) -> list[Episode]:
    episodes = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                episodes.append(loads_episode(line))
    return episodes
