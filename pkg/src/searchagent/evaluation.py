"""Answer judging and evaluation aggregates.

The deterministic judge accepts a prediction when any reference matches
under, in order: normalized token-multiset equality, alias lookup, and
numeric rules (range inclusion, rounding to the prediction's precision,
then the same checks after unit conversion). A pluggable backend callable
can take over only when every deterministic rule declines.

Aggregates summarize tool usage across episodes and compute judged
accuracy for aligned episode/item pairs.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .engine import Answered, Episode
from .tags import ImageSearchCrop

_ARTICLES = frozenset({"a", "an", "the"})
_NORM_TOKEN_RE = re.compile(r"\d+\.\d+|\w+")

_NUMBER = r"\d[\d,]*(?:\.\d+)?"
_SCALAR_RE = re.compile(rf"[-+]?{_NUMBER}")
_RANGE_RE = re.compile(
    rf"between\s+({_NUMBER})\s+and\s+({_NUMBER})"
    rf"|({_NUMBER})\s*(?:-|–|—|~|\bto\b|\bthrough\b)\s*({_NUMBER})",
    re.IGNORECASE,
)
_UNIT_WORD_RE = re.compile(r"\s*(°?\s*[A-Za-z]+)")


class MatchRule(str, Enum):
    EXACT_NORMALIZED = "exact_normalized"
    ALIAS = "alias"
    RANGE_INCLUSION = "range_inclusion"
    ROUNDING = "rounding"
    UNIT_CONVERSION = "unit_conversion"
    JUDGE_BACKEND = "judge_backend"
    NO_MATCH = "no_match"


@dataclass(frozen=True)
class Verdict:
    """Judge outcome. correct is True exactly when some rule fired."""

    correct: bool
    rule_fired: MatchRule

    def __post_init__(self) -> None:
        if self.correct == (self.rule_fired is MatchRule.NO_MATCH):
            raise ValueError("correct must be True exactly when a rule fired")


class JudgeBackendError(RuntimeError):
    """The judge backend failed (transport or protocol), distinct from a no-match."""


DEFAULT_ALIASES: dict[str, str] = {
    "nyc": "new york city",
    "ny": "new york",
    "la": "los angeles",
    "usa": "united states",
    "us": "united states",
    "united states of america": "united states",
    "uk": "united kingdom",
    "uae": "united arab emirates",
    "ussr": "soviet union",
}


@dataclass(frozen=True)
class UnitEntry:
    """Affine conversion into the dimension's base unit: base = value*factor + offset."""

    dimension: str
    factor: float
    offset: float = 0.0


def _length(factor: float) -> UnitEntry:
    return UnitEntry("length", factor)


def _mass(factor: float) -> UnitEntry:
    return UnitEntry("mass", factor)


def _time(factor: float) -> UnitEntry:
    return UnitEntry("time", factor)


DEFAULT_UNITS: dict[str, UnitEntry] = {
    "mm": _length(0.001), "millimeter": _length(0.001), "millimetre": _length(0.001),
    "cm": _length(0.01), "centimeter": _length(0.01), "centimetre": _length(0.01),
    "m": _length(1.0), "meter": _length(1.0), "metre": _length(1.0),
    "km": _length(1000.0), "kilometer": _length(1000.0), "kilometre": _length(1000.0),
    "inch": _length(0.0254), "inches": _length(0.0254),
    "ft": _length(0.3048), "foot": _length(0.3048), "feet": _length(0.3048),
    "yd": _length(0.9144), "yard": _length(0.9144),
    "mi": _length(1609.344), "mile": _length(1609.344),
    "mg": _mass(1e-6), "milligram": _mass(1e-6),
    "g": _mass(0.001), "gram": _mass(0.001),
    "kg": _mass(1.0), "kilogram": _mass(1.0),
    "lb": _mass(0.45359237), "lbs": _mass(0.45359237), "pound": _mass(0.45359237),
    "tonne": _mass(1000.0),
    "ms": _time(0.001), "millisecond": _time(0.001),
    "s": _time(1.0), "sec": _time(1.0), "second": _time(1.0),
    "min": _time(60.0), "minute": _time(60.0),
    "h": _time(3600.0), "hr": _time(3600.0), "hour": _time(3600.0),
    "day": _time(86400.0),
    "week": _time(604800.0),
    "c": UnitEntry("temperature", 1.0, 0.0),
    "celsius": UnitEntry("temperature", 1.0, 0.0),
    "centigrade": UnitEntry("temperature", 1.0, 0.0),
    "f": UnitEntry("temperature", 5.0 / 9.0, -160.0 / 9.0),
    "fahrenheit": UnitEntry("temperature", 5.0 / 9.0, -160.0 / 9.0),
    "k": UnitEntry("temperature", 1.0, -273.15),
    "kelvin": UnitEntry("temperature", 1.0, -273.15),
}


def normalize_tokens(text: str) -> list[str]:
    """Casefold, split to word tokens (decimals kept whole), drop articles."""
    tokens = _NORM_TOKEN_RE.findall(text.casefold())
    return [t for t in tokens if t not in _ARTICLES]


def round_half_away_from_zero(value: float, decimals: int) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class _Quantity:
    value: float
    precision: int
    unit: str | None


@dataclass(frozen=True)
class _Range:
    low: float
    high: float
    unit: str | None


def _lookup_unit(word: str | None, units: Mapping[str, UnitEntry]) -> str | None:
    """Resolve a raw unit word to its table key, tolerating plurals and degree marks."""
    if word is None:
        return None
    w = word.lower().replace("°", "").replace(" ", "").rstrip(".")
    if w in units:
        return w
    if w.endswith("s") and w[:-1] in units:
        return w[:-1]
    return None


def _unit_after(text: str, end: int, units: Mapping[str, UnitEntry]) -> str | None:
    m = _UNIT_WORD_RE.match(text, end)
    if not m:
        return None
    return _lookup_unit(m.group(1), units)


def _parse_scalar(text: str, units: Mapping[str, UnitEntry]) -> _Quantity | None:
    m = _SCALAR_RE.search(text)
    if not m:
        return None
    literal = m.group().replace(",", "")
    precision = len(literal.split(".")[1]) if "." in literal else 0
    return _Quantity(float(literal), precision, _unit_after(text, m.end(), units))


def _parse_range(text: str, units: Mapping[str, UnitEntry]) -> _Range | None:
    m = _RANGE_RE.search(text)
    if not m:
        return None
    first, second = (m.group(1), m.group(2)) if m.group(1) else (m.group(3), m.group(4))
    low = float(first.replace(",", ""))
    high = float(second.replace(",", ""))
    if low > high:
        low, high = high, low
    return _Range(low, high, _unit_after(text, m.end(), units))


def _same_unit(a: str | None, b: str | None, units: Mapping[str, UnitEntry]) -> bool:
    """True when no conversion is needed: a unit is missing or both resolve alike."""
    if a is None or b is None:
        return True
    return units[a] == units[b]


def _convert(value: float, from_unit: str, to_unit: str, units: Mapping[str, UnitEntry]) -> float | None:
    src, dst = units[from_unit], units[to_unit]
    if src.dimension != dst.dimension:
        return None
    base = value * src.factor + src.offset
    return (base - dst.offset) / dst.factor


def _values_match(prediction: _Quantity, value: float) -> bool:
    return abs(round_half_away_from_zero(value, prediction.precision) - prediction.value) <= 1e-9


def judge_deterministic(
    question: str,
    prediction: str,
    references: Sequence[str],
    *,
    alias_table: Mapping[str, str] | None = None,
    unit_table: Mapping[str, UnitEntry] | None = None,
) -> Verdict:
    """Rule-based matching of a prediction against any reference.

    The question is accepted for signature parity with backend judges; the
    deterministic rules never consult it.
    """
    if not references or any(not isinstance(r, str) or not r for r in references):
        raise ValueError("references must be a non-empty list of non-empty strings")
    if not isinstance(prediction, str):
        raise TypeError("prediction must be a string")
    aliases = DEFAULT_ALIASES if alias_table is None else alias_table
    units = DEFAULT_UNITS if unit_table is None else unit_table

    pred_tokens = normalize_tokens(prediction)
    ref_token_lists = [normalize_tokens(r) for r in references]

    # Rule 1: normalized token-multiset equality.
    if pred_tokens:
        pred_counter = Counter(pred_tokens)
        for ref_tokens in ref_token_lists:
            if ref_tokens and pred_counter == Counter(ref_tokens):
                return Verdict(True, MatchRule.EXACT_NORMALIZED)

    # Rule 2: alias table over the normalized phrase.
    pred_phrase = " ".join(pred_tokens)
    pred_canon = Counter(aliases.get(pred_phrase, pred_phrase).split())
    if pred_canon:
        for ref_tokens in ref_token_lists:
            ref_phrase = " ".join(ref_tokens)
            ref_canon = Counter(aliases.get(ref_phrase, ref_phrase).split())
            if ref_canon and pred_canon == ref_canon:
                return Verdict(True, MatchRule.ALIAS)

    # Numeric rules. A prediction with no parseable number skips them all.
    pred_range = _parse_range(prediction, units)
    pred_scalar = None if pred_range else _parse_scalar(prediction, units)
    ref_scalars = [_parse_scalar(r, units) for r in references]

    if pred_range is not None:
        for ref in ref_scalars:
            if ref is None or not _same_unit(pred_range.unit, ref.unit, units):
                continue
            if pred_range.low <= ref.value <= pred_range.high:
                return Verdict(True, MatchRule.RANGE_INCLUSION)

    if pred_scalar is not None:
        for ref in ref_scalars:
            if ref is None or not _same_unit(pred_scalar.unit, ref.unit, units):
                continue
            if _values_match(pred_scalar, ref.value):
                return Verdict(True, MatchRule.ROUNDING)

    # Same rules once more, converting the reference into the prediction's unit.
    for ref in ref_scalars:
        if ref is None or ref.unit is None:
            continue
        if (
            pred_range is not None
            and pred_range.unit is not None
            and units[pred_range.unit] != units[ref.unit]
        ):
            converted = _convert(ref.value, ref.unit, pred_range.unit, units)
            if converted is not None and pred_range.low <= converted <= pred_range.high:
                return Verdict(True, MatchRule.UNIT_CONVERSION)
        if (
            pred_scalar is not None
            and pred_scalar.unit is not None
            and units[pred_scalar.unit] != units[ref.unit]
        ):
            converted = _convert(ref.value, ref.unit, pred_scalar.unit, units)
            if converted is not None and _values_match(pred_scalar, converted):
                return Verdict(True, MatchRule.UNIT_CONVERSION)

    return Verdict(False, MatchRule.NO_MATCH)


JudgeBackend = Callable[[str, str, Sequence[str]], bool]


def judge(
    question: str,
    prediction: str,
    references: Sequence[str],
    *,
    alias_table: Mapping[str, str] | None = None,
    unit_table: Mapping[str, UnitEntry] | None = None,
    backend: JudgeBackend | None = None,
) -> Verdict:
    """Deterministic rules first; an optional backend decides only leftovers."""
    verdict = judge_deterministic(
        question, prediction, references, alias_table=alias_table, unit_table=unit_table
    )
    if verdict.correct or backend is None:
        return verdict
    try:
        accepted = bool(backend(question, prediction, list(references)))
    except Exception as exc:
        raise JudgeBackendError(f"judge backend failed: {exc}") from exc
    if accepted:
        return Verdict(True, MatchRule.JUDGE_BACKEND)
    return Verdict(False, MatchRule.NO_MATCH)


def load_alias_table(path: str | Path) -> dict[str, str]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise ValueError("alias table must be a JSON object of strings")
    return {k.casefold(): v.casefold() for k, v in data.items()}


def load_unit_table(path: str | Path) -> dict[str, UnitEntry]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    table = {}
    for key, entry in data.items():
        table[key.casefold()] = UnitEntry(
            entry["dimension"], float(entry["factor"]), float(entry.get("offset", 0.0))
        )
    return table


# --- aggregates --------------------------------------------------------------


@dataclass(frozen=True)
class ToolUsageStats:
    """Breakdown of executed tool usage across a set of episodes."""

    total: int
    no_search: int
    text_only: int
    image_only: int
    mixed: int
    any_tool_fraction: float
    multi_text_search_fraction: float
    cropped_search_fraction: float

    def __post_init__(self) -> None:
        if self.no_search + self.text_only + self.image_only + self.mixed != self.total:
            raise ValueError("usage classes must partition the episode count")


def _used_crop(episode: Episode) -> bool:
    for turn in episode.turns:
        action = turn.parsed.action
        if (
            action is not None
            and isinstance(action.directive, ImageSearchCrop)
            and turn.information is not None
            and not turn.information.is_failure_notice
        ):
            return True
    return False


def aggregate_stats(episodes: Sequence[Episode]) -> ToolUsageStats:
    """Classify episodes by which executed searches they contain."""
    total = len(episodes)
    if total == 0:
        return ToolUsageStats(0, 0, 0, 0, 0, 0.0, 0.0, 0.0)
    no_search = text_only = image_only = mixed = 0
    multi_text = cropped = 0
    for ep in episodes:
        texts = ep.ledger.text_searches_used
        images = ep.ledger.image_searches_used
        if texts == 0 and images == 0:
            no_search += 1
        elif images == 0:
            text_only += 1
        elif texts == 0:
            image_only += 1
        else:
            mixed += 1
        if texts >= 2:
            multi_text += 1
        if _used_crop(ep):
            cropped += 1
    return ToolUsageStats(
        total=total,
        no_search=no_search,
        text_only=text_only,
        image_only=image_only,
        mixed=mixed,
        any_tool_fraction=1.0 - no_search / total,
        multi_text_search_fraction=multi_text / total,
        cropped_search_fraction=cropped / total,
    )


class _ItemLike:
    question: str
    image_ref: str
    ground_truth: tuple[str, ...]


JudgeFn = Callable[[str, str, Sequence[str]], Verdict]


def _check_alignment(episodes: Sequence[Episode], items: Sequence) -> None:
    if len(episodes) != len(items):
        raise ValueError(f"{len(episodes)} episodes vs {len(items)} items")
    for i, (ep, item) in enumerate(zip(episodes, items)):
        if ep.question != item.question or ep.image_ref != item.image_ref:
            raise ValueError(f"episode/item mismatch at position {i}")


def accuracy(episodes: Sequence[Episode], items: Sequence, judge_fn: JudgeFn) -> float:
    """Fraction of episodes whose final answer the judge accepts.

    Episodes that never answered count as incorrect. Episode i must carry
    the same question and image_ref as item i.
    """
    _check_alignment(episodes, items)
    if not episodes:
        return 0.0
    correct = 0
    for ep, item in zip(episodes, items):
        if isinstance(ep.status, Answered):
            verdict = judge_fn(item.question, ep.status.final_text, list(item.ground_truth))
            if verdict.correct:
                correct += 1
    return correct / len(episodes)


@dataclass(frozen=True)
class EvaluationRow:
    question: str
    prediction: str | None
    correct: bool
    rule_fired: str


@dataclass(frozen=True)
class EvaluationReport:
    accuracy: float
    stats: ToolUsageStats
    rows: tuple[EvaluationRow, ...]


def evaluate(episodes: Sequence[Episode], items: Sequence, judge_fn: JudgeFn) -> EvaluationReport:
    _check_alignment(episodes, items)
    rows = []
    correct_count = 0
    for ep, item in zip(episodes, items):
        if isinstance(ep.status, Answered):
            verdict = judge_fn(item.question, ep.status.final_text, list(item.ground_truth))
            rows.append(
                EvaluationRow(
                    item.question, ep.status.final_text, verdict.correct, verdict.rule_fired.value
                )
            )
            correct_count += int(verdict.correct)
        else:
            rows.append(EvaluationRow(item.question, None, False, MatchRule.NO_MATCH.value))
    acc = correct_count / len(episodes) if episodes else 0.0
    return EvaluationReport(acc, aggregate_stats(episodes), tuple(rows))


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "accuracy": report.accuracy,
        "stats": {
            "total": report.stats.total,
            "no_search": report.stats.no_search,
            "text_only": report.stats.text_only,
            "image_only": report.stats.image_only,
            "mixed": report.stats.mixed,
            "any_tool_fraction": report.stats.any_tool_fraction,
            "multi_text_search_fraction": report.stats.multi_text_search_fraction,
            "cropped_search_fraction": report.stats.cropped_search_fraction,
        },
        "rows": [
            {
                "question": r.question,
                "prediction": r.prediction,
                "correct": r.correct,
                "rule_fired": r.rule_fired,
            }
            for r in report.rows
        ],
    }


def render_report(report: EvaluationReport) -> str:
    """Plain-text table for terminals."""
    lines = [
        f"accuracy: {report.accuracy:.4f}  episodes: {report.stats.total}",
        f"usage: no_search={report.stats.no_search} text_only={report.stats.text_only} "
        f"image_only={report.stats.image_only} mixed={report.stats.mixed}",
        f"fractions: any_tool={report.stats.any_tool_fraction:.4f} "
        f"multi_text={report.stats.multi_text_search_fraction:.4f} "
        f"cropped={report.stats.cropped_search_fraction:.4f}",
    ]
    if report.rows:
        lines.append("")
        lines.append(f"{'ok':<4}{'rule':<20}{'prediction':<32}question")
        for row in report.rows:
            prediction = (row.prediction or "(no answer)")[:30]
            lines.append(
                f"{'yes' if row.correct else 'no':<4}{row.rule_fired:<20}{prediction:<32}{row.question[:48]}"
            )
    return "\n".join(lines)
