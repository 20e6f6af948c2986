"""Tag protocol for assistant turns.

An assistant turn is plain text carrying XML-like tags with no attributes:
an optional ``<reason>`` block followed by exactly one directive block, which
is one of ``<answer>``, ``<text_search>``, or ``<img_search>``. The payload
``img`` (verbatim, after trimming) inside ``<img_search>`` requests a search
with the whole image; any other payload is a referring expression that
requests a crop-based search. ``<information>`` blocks are injected by the
engine between turns and are never legal inside assistant output.

Tag names are lowercase ASCII and case-sensitive. Payloads may not contain
tag-like markup; there is no escaping mechanism.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

TAG_LIKE_RE = re.compile(r"</?[A-Za-z_][A-Za-z0-9_]*>")

REASON_TAG = "reason"
ANSWER_TAG = "answer"
TEXT_SEARCH_TAG = "text_search"
IMG_SEARCH_TAG = "img_search"
INFORMATION_TAG = "information"

WHOLE_IMAGE_TOKEN = "img"

_DIRECTIVE_TAGS = (ANSWER_TAG, TEXT_SEARCH_TAG, IMG_SEARCH_TAG)
_RECOGNIZED_TAGS = frozenset((REASON_TAG, INFORMATION_TAG) + _DIRECTIVE_TAGS)


class DiagnosticKind(str, Enum):
    """Classification of parse findings. The first five are errors."""

    MALFORMED_TAG = "malformed_tag"
    MULTIPLE_DIRECTIVES = "multiple_directives"
    NO_DIRECTIVE = "no_directive"
    NESTED_TAG = "nested_tag"
    TRUNCATED_OUTPUT = "truncated_output"
    STRAY_TEXT = "stray_text"
    MISSING_REASON = "missing_reason"
    EMPTY_REASON = "empty_reason"

    @property
    def is_error(self) -> bool:
        return self in _ERROR_KINDS


_ERROR_KINDS = frozenset(
    {
        DiagnosticKind.MALFORMED_TAG,
        DiagnosticKind.MULTIPLE_DIRECTIVES,
        DiagnosticKind.NO_DIRECTIVE,
        DiagnosticKind.NESTED_TAG,
        DiagnosticKind.TRUNCATED_OUTPUT,
    }
)


@dataclass(frozen=True)
class Diagnostic:
    """A single parse finding anchored at a character offset in the raw turn."""

    position: int
    kind: DiagnosticKind
    message: str

    @property
    def is_error(self) -> bool:
        return self.kind.is_error


def _check_payload(value: str, label: str) -> None:
    if not isinstance(value, str):
        raise TypeError(f"{label} must be a string")
    if value != value.strip():
        raise ValueError(f"{label} must not have leading or trailing whitespace")
    if not value:
        raise ValueError(f"{label} must be non-empty")
    if TAG_LIKE_RE.search(value):
        raise ValueError(f"{label} may not contain tag-like markup")


@dataclass(frozen=True)
class Answer:
    """Final answer directive. Terminates an episode when accepted."""

    text: str

    def __post_init__(self) -> None:
        _check_payload(self.text, "answer text")


@dataclass(frozen=True)
class TextSearch:
    """Text search directive with a free-text query."""

    query: str

    def __post_init__(self) -> None:
        _check_payload(self.query, "search query")


@dataclass(frozen=True)
class ImageSearchWhole:
    """Image search directive over the episode's whole input image."""


@dataclass(frozen=True)
class ImageSearchCrop:
    """Image search directive over a crop located by a referring expression."""

    expression: str

    def __post_init__(self) -> None:
        _check_payload(self.expression, "referring expression")
        if self.expression == WHOLE_IMAGE_TOKEN:
            raise ValueError(
                f"referring expression {WHOLE_IMAGE_TOKEN!r} is reserved for whole-image search"
            )


Directive = Answer | TextSearch | ImageSearchWhole | ImageSearchCrop


@dataclass(frozen=True)
class AgentAction:
    """One parsed assistant turn: optional rationale plus exactly one directive."""

    reason: str | None
    directive: Directive

    def __post_init__(self) -> None:
        if self.reason is not None:
            _check_payload(self.reason, "reason")
        if not isinstance(
            self.directive, (Answer, TextSearch, ImageSearchWhole, ImageSearchCrop)
        ):
            raise TypeError("directive must be one of the four directive types")


@dataclass(frozen=True)
class ParseOutcome:
    """Result of parsing one raw turn.

    ``action`` is present exactly when ``diagnostics`` contains no
    error-kind entries; warnings may accompany a successful parse.
    """

    action: AgentAction | None
    diagnostics: tuple[Diagnostic, ...] = field(default=())

    def __post_init__(self) -> None:
        has_error = any(d.is_error for d in self.diagnostics)
        if (self.action is None) != has_error:
            raise ValueError("action must be present exactly when no error diagnostics exist")

    @property
    def ok(self) -> bool:
        return self.action is not None

    @property
    def errors(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if d.is_error)

    @property
    def warnings(self) -> tuple[Diagnostic, ...]:
        return tuple(d for d in self.diagnostics if not d.is_error)


@dataclass(frozen=True)
class _Block:
    name: str
    payload: str
    open_pos: int
    payload_start: int


def _is_recognized(token: str) -> str | None:
    """Return the tag name if the token is a recognized protocol tag."""
    name = token[2:-1] if token.startswith("</") else token[1:-1]
    if name in _RECOGNIZED_TAGS:
        return name
    return None


def parse_turn(raw: str) -> ParseOutcome:
    """Parse one raw assistant turn into an action plus diagnostics.

    The grammar is scanned, never streamed: recognized open tags must be
    closed by a matching close tag, payloads may not contain tag-like
    markup (so ``<img_search><img></img></img_search>`` is rejected as a
    nested tag), and exactly one directive must be present, optionally
    preceded by one ``<reason>`` block. Text outside recognized tags and
    unrecognized tag-like tokens are stray-text warnings, not errors.
    """
    if not isinstance(raw, str):
        raise TypeError("raw turn must be a string")

    diagnostics: list[Diagnostic] = []
    blocks: list[_Block] = []
    covered: list[tuple[int, int]] = []

    tokens = list(TAG_LIKE_RE.finditer(raw))
    idx = 0
    while idx < len(tokens):
        tok = tokens[idx]
        text = tok.group()
        name = _is_recognized(text)
        if name is None:
            idx += 1
            continue
        if text.startswith("</"):
            diagnostics.append(
                Diagnostic(
                    tok.start(),
                    DiagnosticKind.MALFORMED_TAG,
                    f"close tag {text} without a matching open tag",
                )
            )
            covered.append((tok.start(), tok.end()))
            idx += 1
            continue
        close_idx = None
        for j in range(idx + 1, len(tokens)):
            if tokens[j].group() == f"</{name}>":
                close_idx = j
                break
        if close_idx is None:
            diagnostics.append(
                Diagnostic(
                    tok.start(),
                    DiagnosticKind.MALFORMED_TAG,
                    f"unclosed tag <{name}>",
                )
            )
            covered.append((tok.start(), tok.end()))
            idx += 1
            continue
        inner = tokens[idx + 1 : close_idx]
        if inner:
            diagnostics.append(
                Diagnostic(
                    inner[0].start(),
                    DiagnosticKind.NESTED_TAG,
                    f"tag-like markup {inner[0].group()} inside <{name}> payload",
                )
            )
        close = tokens[close_idx]
        blocks.append(_Block(name, raw[tok.end() : close.start()], tok.start(), tok.end()))
        covered.append((tok.start(), close.end()))
        idx = close_idx + 1

    # Non-whitespace text outside recognized blocks is stray (one warning per run).
    cursor = 0
    for start, end in sorted(covered):
        _note_stray(raw, cursor, start, diagnostics)
        cursor = max(cursor, end)
    _note_stray(raw, cursor, len(raw), diagnostics)

    reasons = [b for b in blocks if b.name == REASON_TAG]
    directives = [b for b in blocks if b.name in _DIRECTIVE_TAGS]
    infos = [b for b in blocks if b.name == INFORMATION_TAG]

    for b in infos:
        diagnostics.append(
            Diagnostic(
                b.open_pos,
                DiagnosticKind.MALFORMED_TAG,
                "information blocks are injected by the engine, not assistant output",
            )
        )
    if len(reasons) > 1:
        diagnostics.append(
            Diagnostic(
                reasons[1].open_pos,
                DiagnosticKind.MALFORMED_TAG,
                "more than one reason block",
            )
        )
    if len(directives) == 0:
        diagnostics.append(
            Diagnostic(0, DiagnosticKind.NO_DIRECTIVE, "turn contains no directive tag")
        )
    elif len(directives) > 1:
        diagnostics.append(
            Diagnostic(
                directives[1].open_pos,
                DiagnosticKind.MULTIPLE_DIRECTIVES,
                f"{len(directives)} directive tags in one turn",
            )
        )
    if reasons and directives and reasons[0].open_pos > directives[0].open_pos:
        diagnostics.append(
            Diagnostic(
                reasons[0].open_pos,
                DiagnosticKind.MALFORMED_TAG,
                "reason block must precede the directive",
            )
        )

    directive_obj: Directive | None = None
    reason_text: str | None = None
    if len(directives) == 1 and not any(d.is_error for d in diagnostics):
        d = directives[0]
        payload = d.payload.strip()
        if not payload:
            diagnostics.append(
                Diagnostic(
                    d.open_pos,
                    DiagnosticKind.MALFORMED_TAG,
                    f"empty <{d.name}> payload",
                )
            )
        elif d.name == ANSWER_TAG:
            directive_obj = Answer(payload)
        elif d.name == TEXT_SEARCH_TAG:
            directive_obj = TextSearch(payload)
        elif payload == WHOLE_IMAGE_TOKEN:
            directive_obj = ImageSearchWhole()
        else:
            directive_obj = ImageSearchCrop(payload)

        if reasons:
            reason_payload = reasons[0].payload.strip()
            if reason_payload:
                reason_text = reason_payload
            else:
                diagnostics.append(
                    Diagnostic(
                        reasons[0].open_pos,
                        DiagnosticKind.EMPTY_REASON,
                        "empty reason block ignored",
                    )
                )
        else:
            diagnostics.append(
                Diagnostic(0, DiagnosticKind.MISSING_REASON, "turn has no reason block")
            )

    diagnostics.sort(key=lambda d: d.position)
    if any(d.is_error for d in diagnostics):
        return ParseOutcome(None, tuple(diagnostics))
    assert directive_obj is not None
    return ParseOutcome(AgentAction(reason_text, directive_obj), tuple(diagnostics))


def _note_stray(raw: str, start: int, end: int, diagnostics: list[Diagnostic]) -> None:
    if start >= end:
        return
    segment = raw[start:end]
    if segment.strip():
        offset = start + (len(segment) - len(segment.lstrip()))
        diagnostics.append(
            Diagnostic(
                offset,
                DiagnosticKind.STRAY_TEXT,
                f"text outside recognized tags: {segment.strip()[:40]!r}",
            )
        )


def render_action(action: AgentAction) -> str:
    """Serialize an action to canonical tag text. parse_turn inverts this."""
    if not isinstance(action, AgentAction):
        raise TypeError("render_action expects an AgentAction")
    parts: list[str] = []
    if action.reason is not None:
        parts.append(f"<{REASON_TAG}>{action.reason}</{REASON_TAG}>")
    d = action.directive
    if isinstance(d, Answer):
        parts.append(f"<{ANSWER_TAG}>{d.text}</{ANSWER_TAG}>")
    elif isinstance(d, TextSearch):
        parts.append(f"<{TEXT_SEARCH_TAG}>{d.query}</{TEXT_SEARCH_TAG}>")
    elif isinstance(d, ImageSearchWhole):
        parts.append(f"<{IMG_SEARCH_TAG}>{WHOLE_IMAGE_TOKEN}</{IMG_SEARCH_TAG}>")
    else:
        parts.append(f"<{IMG_SEARCH_TAG}>{d.expression}</{IMG_SEARCH_TAG}>")
    return "".join(parts)


def render_information(content: str) -> str:
    """Wrap tool output in the information tags the engine injects."""
    return f"<{INFORMATION_TAG}>{content}</{INFORMATION_TAG}>"


def format_score(turns: Sequence[str], *, strict: bool = False) -> int:
    """Binary well-formedness score for a whole trajectory.

    1 iff every turn parses without errors, the final turn's directive is
    Answer, and no earlier turn's directive is Answer. With ``strict=True``
    (the reward-side setting) stray prose outside tags also zeroes the
    score; missing reason blocks never do.
    """
    if not turns:
        return 0
    last = len(turns) - 1
    for i, raw in enumerate(turns):
        outcome = parse_turn(raw)
        if outcome.action is None:
            return 0
        if strict and any(
            d.kind is DiagnosticKind.STRAY_TEXT for d in outcome.diagnostics
        ):
            return 0
        is_answer = isinstance(outcome.action.directive, Answer)
        if is_answer != (i == last):
            return 0
    return 1
