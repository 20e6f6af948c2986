"""Training data generation: run oracles, validate, filter, balance, emit.

The pipeline turns seed items into masked conversations. Three validity
checks gate each candidate, mapped from the episode's terminal status:

  A. protocol validity (every turn parses)      -> ProtocolViolation fails
  B. budget legality (no directive over budget) -> BudgetExhausted fails
  C. completion (the episode answered)          -> MaxTurnsReached fails

Survivors are filtered against ground truth by the judge, balanced to a
target search/no-search ratio with near-uniform category counts, and
emitted as JSONL whose information spans are masked. The mask is audited
by re-deriving spans from the serialized text alone.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .engine import (
    Answered,
    Budget,
    BudgetExhausted,
    Episode,
    MaxTurnsReached,
    Policy,
    ProtocolViolation,
    ScriptedPolicy,
    Tools,
    episode_from_dict,
    episode_to_dict,
    run_episode,
)
from .simtools import KnowledgeBase, RELATIONS
from .tags import render_information

INFORMATION_OPEN = "<information>"
INFORMATION_CLOSE = "</information>"


@dataclass(frozen=True)
class SeedItem:
    """One question with its ground truth and sampling metadata.

    ``script`` optionally carries the raw turns an offline oracle should
    replay; without it a default two-step plan (search the question text,
    then answer) is used for search_required items and a direct answer
    otherwise.
    """

    question: str
    image_ref: str
    ground_truth: tuple[str, ...]
    category: str
    search_required: bool
    script: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not self.question or not self.image_ref or not self.category:
            raise ValueError("question, image_ref, and category must be non-empty")
        if not self.ground_truth or any(not g for g in self.ground_truth):
            raise ValueError("ground_truth must be a non-empty list of non-empty strings")


def item_to_dict(item: SeedItem) -> dict:
    data = {
        "question": item.question,
        "image_ref": item.image_ref,
        "ground_truth": list(item.ground_truth),
        "category": item.category,
        "search_required": item.search_required,
    }
    if item.script is not None:
        data["script"] = list(item.script)
    return data


def item_from_dict(data: dict) -> SeedItem:
    script = data.get("script")
    return SeedItem(
        question=data["question"],
        image_ref=data["image_ref"],
        ground_truth=tuple(data["ground_truth"]),
        category=data["category"],
        search_required=bool(data["search_required"]),
        script=tuple(script) if script is not None else None,
    )


def write_seed_items(path: str | Path, items: Iterable[SeedItem]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(json.dumps(item_to_dict(item), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_seed_items(path: str | Path) -> list[SeedItem]:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(item_from_dict(json.loads(line)))
    return items


@dataclass(frozen=True)
class MaskSpan:
    """Half-open character span within one turn's serialized text."""

    turn_index: int
    start: int
    end: int
    masked: bool

    def __post_init__(self) -> None:
        if self.turn_index < 0 or self.start < 0 or self.end <= self.start:
            raise ValueError("span must be non-empty with non-negative bounds")


@dataclass(frozen=True)
class MaskedConversation:
    """A finished episode with loss-mask spans over its serialized turns.

    Spans partition each turn's text: assistant-generated characters are
    unmasked, injected information blocks (tags included) are masked.
    """

    episode: Episode
    spans: tuple[MaskSpan, ...]

    def turn_texts(self) -> list[str]:
        return [
            turn.assistant_raw
            + (
                render_information(turn.information.content)
                if turn.information is not None
                else ""
            )
            for turn in self.episode.turns
        ]


def build_masked_conversation(episode: Episode) -> MaskedConversation:
    spans: list[MaskSpan] = []
    for index, turn in enumerate(episode.turns):
        raw_len = len(turn.assistant_raw)
        if raw_len:
            spans.append(MaskSpan(index, 0, raw_len, masked=False))
        if turn.information is not None:
            rendered = render_information(turn.information.content)
            spans.append(MaskSpan(index, raw_len, raw_len + len(rendered), masked=True))
    return MaskedConversation(episode, tuple(spans))


@dataclass(frozen=True)
class Rejection:
    """A candidate that failed one of the three validity checks."""

    check: str
    detail: str

    def __post_init__(self) -> None:
        if self.check not in ("A", "B", "C"):
            raise ValueError("check must be A, B, or C")


def scripted_oracle(item: SeedItem) -> ScriptedPolicy:
    """The offline oracle policy for an item: its script, or a default plan."""
    if item.script is not None:
        return ScriptedPolicy(item.script)
    answer_turn = (
        f"<reason>answer from what is known</reason><answer>{item.ground_truth[0]}</answer>"
    )
    if item.search_required:
        return ScriptedPolicy(
            [
                f"<reason>look up the question</reason><text_search>{item.question}</text_search>",
                answer_turn,
            ]
        )
    return ScriptedPolicy([answer_turn])


def generate_example(
    item: SeedItem,
    tools: Tools,
    budget: Budget | None = None,
    policy: Policy | None = None,
) -> MaskedConversation | Rejection:
    """Run the oracle on one item and map the outcome through checks A/B/C."""
    budget = budget if budget is not None else Budget()
    policy = policy if policy is not None else scripted_oracle(item)
    episode = run_episode(policy, tools, budget, item.question, item.image_ref)
    if isinstance(episode.status, ProtocolViolation):
        return Rejection("A", "a turn failed to parse")
    if isinstance(episode.status, BudgetExhausted):
        return Rejection("B", "a directive exceeded the budget")
    if isinstance(episode.status, MaxTurnsReached):
        return Rejection("C", "the episode never answered")
    return build_masked_conversation(episode)


VerdictFn = Callable[[str, str, Sequence[str]], object]


def filter_by_ground_truth(
    conversation: MaskedConversation, item: SeedItem, judge_fn: VerdictFn
) -> bool:
    """Keep a candidate only when the judge accepts its final answer."""
    status = conversation.episode.status
    if not isinstance(status, Answered):
        raise ValueError("filter_by_ground_truth expects an answered conversation")
    verdict = judge_fn(item.question, status.final_text, list(item.ground_truth))
    return bool(getattr(verdict, "correct", False))


class InsufficientPool(RuntimeError):
    """The pool cannot satisfy the requested quotas."""

    def __init__(self, category: str, needed: int, available: int):
        super().__init__(
            f"category {category!r} needs {needed} items but only {available} are available"
        )
        self.category = category
        self.needed = needed
        self.available = available


def balance_sample(
    pool: Sequence[tuple[MaskedConversation, SeedItem]],
    target_size: int,
    search_ratio: float = 0.5,
    seed: int = 0,
    taxonomy: Sequence[str] | None = None,
    ratio_tolerance: float = 0.02,
) -> list[tuple[MaskedConversation, SeedItem]]:
    """Draw a corpus with a fixed search ratio and near-uniform categories.

    Category quotas are target_size // C with the remainder spread by a
    seeded shuffle, so every category lands within one item of
    target_size / C. Within each category the number of search_required
    items starts at the quota's share of the ratio, clamped to what the
    pool offers, then gets nudged toward the global target
    round(target_size * search_ratio). The achieved ratio must land within
    ratio_tolerance of search_ratio or InsufficientPool is raised, naming
    a binding category. Output order follows pool order.
    """
    if target_size < 1:
        raise ValueError("target_size must be positive")
    if not 0 <= search_ratio <= 1:
        raise ValueError("search_ratio must lie in [0, 1]")

    categories = [item.category for _, item in pool]
    if taxonomy is None:
        taxonomy = sorted(set(categories))
    else:
        taxonomy = list(taxonomy)
        unknown = set(categories) - set(taxonomy)
        if unknown:
            raise ValueError(f"pool categories outside the taxonomy: {sorted(unknown)}")
    if not taxonomy:
        raise InsufficientPool("(none)", target_size, 0)

    rng = random.Random(seed)
    shuffled = list(taxonomy)
    rng.shuffle(shuffled)
    base, remainder = divmod(target_size, len(taxonomy))
    quota = {c: base for c in taxonomy}
    for c in shuffled[:remainder]:
        quota[c] += 1

    by_cat: dict[str, dict[bool, list[int]]] = {c: {True: [], False: []} for c in taxonomy}
    for index, (_, item) in enumerate(pool):
        by_cat[item.category][item.search_required].append(index)

    lo: dict[str, int] = {}
    hi: dict[str, int] = {}
    searches: dict[str, int] = {}
    for c in taxonomy:
        available_s = len(by_cat[c][True])
        available_f = len(by_cat[c][False])
        if available_s + available_f < quota[c]:
            raise InsufficientPool(c, quota[c], available_s + available_f)
        lo[c] = max(0, quota[c] - available_f)
        hi[c] = min(quota[c], available_s)
        searches[c] = min(max(round(quota[c] * search_ratio), lo[c]), hi[c])

    target_searches = round(target_size * search_ratio)
    total = sum(searches.values())
    while total != target_searches:
        moved = False
        for c in shuffled:
            if total < target_searches and searches[c] < hi[c]:
                searches[c] += 1
                total += 1
                moved = True
            elif total > target_searches and searches[c] > lo[c]:
                searches[c] -= 1
                total -= 1
                moved = True
            if total == target_searches:
                break
        if not moved:
            break
    if abs(total / target_size - search_ratio) > ratio_tolerance + 1e-12:
        needs_search_items = total < target_searches
        binding = min(taxonomy, key=lambda c: len(by_cat[c][needs_search_items]))
        raise InsufficientPool(
            binding,
            abs(target_searches - total),
            len(by_cat[binding][needs_search_items]),
        )

    chosen: list[int] = []
    for c in taxonomy:
        chosen.extend(rng.sample(by_cat[c][True], searches[c]))
        chosen.extend(rng.sample(by_cat[c][False], quota[c] - searches[c]))
    chosen.sort()
    result = [pool[i] for i in chosen]

    counts = {c: 0 for c in taxonomy}
    picked_searches = 0
    for _, item in result:
        counts[item.category] += 1
        picked_searches += int(item.search_required)
    assert len(result) == target_size
    assert all(abs(counts[c] - target_size / len(taxonomy)) <= 1 for c in taxonomy)
    assert abs(picked_searches / target_size - search_ratio) <= ratio_tolerance + 1e-12
    return result


# --- corpus serialization and mask audit -------------------------------------


class MaskAuditError(RuntimeError):
    """A record's mask disagrees with the spans derivable from its text."""


def record_to_dict(conversation: MaskedConversation, item: SeedItem) -> dict:
    return {
        "question": item.question,
        "image_ref": item.image_ref,
        "ground_truth": list(item.ground_truth),
        "category": item.category,
        "search_required": item.search_required,
        "conversation": conversation.turn_texts(),
        "mask": [[s.turn_index, s.start, s.end, s.masked] for s in conversation.spans],
        "episode": episode_to_dict(conversation.episode),
    }


def record_from_dict(data: dict) -> tuple[MaskedConversation, SeedItem]:
    episode = episode_from_dict(data["episode"])
    spans = tuple(MaskSpan(t, s, e, bool(m)) for t, s, e, m in data["mask"])
    conversation = MaskedConversation(episode, spans)
    if conversation.turn_texts() != list(data["conversation"]):
        raise ValueError("conversation text does not match the embedded episode")
    item = SeedItem(
        question=data["question"],
        image_ref=data["image_ref"],
        ground_truth=tuple(data["ground_truth"]),
        category=data["category"],
        search_required=bool(data["search_required"]),
    )
    return conversation, item


def emit_sft_corpus(
    samples: Sequence[tuple[MaskedConversation, SeedItem]], path: str | Path
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for conversation, item in samples:
            fh.write(
                json.dumps(record_to_dict(conversation, item), ensure_ascii=False, separators=(",", ":"))
            )
            fh.write("\n")


def load_sft_corpus(path: str | Path) -> list[tuple[MaskedConversation, SeedItem]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_from_dict(json.loads(line)))
    return out


def derive_mask_spans(turn_text: str) -> list[tuple[int, int, bool]]:
    """Re-derive mask spans from one turn's text using only the tags.

    Every well-formed information block (tags included) is masked; all
    remaining text is unmasked. This is the independent oracle the audit
    compares records against.
    """
    spans: list[tuple[int, int, bool]] = []
    cursor = 0
    while True:
        start = turn_text.find(INFORMATION_OPEN, cursor)
        if start == -1:
            break
        close = turn_text.find(INFORMATION_CLOSE, start + len(INFORMATION_OPEN))
        if close == -1:
            raise MaskAuditError("unterminated information block in turn text")
        end = close + len(INFORMATION_CLOSE)
        if start > cursor:
            spans.append((cursor, start, False))
        spans.append((start, end, True))
        cursor = end
    if cursor < len(turn_text):
        spans.append((cursor, len(turn_text), False))
    return spans


def audit_sft_record(data: dict) -> None:
    """Check one corpus record's mask against spans re-derived from its text."""
    turn_texts = data["conversation"]
    recorded: dict[int, list[tuple[int, int, bool]]] = {i: [] for i in range(len(turn_texts))}
    for turn_index, start, end, masked in data["mask"]:
        if turn_index not in recorded:
            raise MaskAuditError(f"span references turn {turn_index} outside the conversation")
        recorded[turn_index].append((start, end, bool(masked)))
    for index, text in enumerate(turn_texts):
        derived = derive_mask_spans(text)
        if recorded[index] != derived:
            raise MaskAuditError(
                f"turn {index}: recorded spans {recorded[index]} != derived {derived}"
            )


def audit_sft_corpus(path: str | Path) -> int:
    """Audit every record in a corpus file. Returns the record count."""
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                audit_sft_record(json.loads(line))
                count += 1
    return count


# --- synthetic seed items -----------------------------------------------------


def synthesize_items(
    kb: KnowledgeBase,
    count: int,
    categories: Sequence[str],
    search_fraction: float = 0.5,
    seed: int = 0,
) -> list[SeedItem]:
    """Derive answerable seed items (with oracle scripts) from a knowledge base.

    Questions cycle over (entity, relation) pairs; categories cycle in
    order, so equal-sized categories come out when count is a multiple of
    len(categories). Exactly round(count * search_fraction) items are
    search_required, assigned by a seeded shuffle. Search scripts mostly
    use text search; every fifth one starts with a whole-image search and
    every seventh with a crop search when the entity appears in a scene.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if not categories:
        raise ValueError("categories must be non-empty")
    if not 0 <= search_fraction <= 1:
        raise ValueError("search_fraction must lie in [0, 1]")

    scenes_by_entity: dict[int, str] = {}
    for scene in kb.scenes:
        for region in scene.regions:
            scenes_by_entity.setdefault(region.entity_id, scene.image_ref)
    default_ref = kb.scenes[0].image_ref if kb.scenes else "scene-absent"

    search_count = round(count * search_fraction)
    flags = [True] * search_count + [False] * (count - search_count)
    random.Random(seed).shuffle(flags)

    items: list[SeedItem] = []
    for i in range(count):
        entity = kb.entities[i % len(kb.entities)]
        relation = RELATIONS[(i // len(kb.entities)) % len(RELATIONS)]
        value = entity.fact(relation)
        assert value is not None
        question = f"What is the {relation} of the {entity.canonical_name}?"
        image_ref = scenes_by_entity.get(entity.entity_id, default_ref)
        answer_turn = (
            f"<reason>the records give the {relation}</reason><answer>{value}</answer>"
        )
        script: tuple[str, ...]
        if not flags[i]:
            script = (answer_turn,)
        elif entity.entity_id in scenes_by_entity and i % 5 == 0:
            script = (
                "<reason>identify the subject first</reason><img_search>img</img_search>",
                answer_turn,
            )
        elif entity.entity_id in scenes_by_entity and i % 7 == 0:
            script = (
                f"<reason>focus on the subject</reason>"
                f"<img_search>{entity.visual_descriptor}</img_search>",
                answer_turn,
            )
        else:
            script = (
                f"<reason>look up the {relation}</reason>"
                f"<text_search>{entity.canonical_name} {relation}</text_search>",
                answer_turn,
            )
        items.append(
            SeedItem(
                question=question,
                image_ref=image_ref,
                ground_truth=(value,),
                category=categories[i % len(categories)],
                search_required=flags[i],
                script=script,
            )
        )
    return items
