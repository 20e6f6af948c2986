"""Build a small supervised fine-tuning corpus from a generated world.

The pipeline synthesizes seed questions from a knowledge base, replays an
oracle policy to produce conversations, drops anything that fails the
protocol, budget, or answer checks, keeps only answers the judge accepts,
balances categories and the search/no-search ratio, and emits masked
records. The mask marks injected tool output so a trainer can exclude it
from the loss. Run it with:

    python demos/build_corpus.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from searchagent import generate_kb, judge
from searchagent.datagen import (
    MaskedConversation,
    audit_sft_corpus,
    balance_sample,
    emit_sft_corpus,
    filter_by_ground_truth,
    generate_example,
    synthesize_items,
)
from searchagent.simtools import SimulatedToolSuite


def show_mask(conversation: MaskedConversation) -> None:
    """Print each turn with its masked (tool-injected) spans bracketed."""

    texts = conversation.turn_texts()
    for span in conversation.spans:
        if not span.masked:
            continue
        text = texts[span.turn_index]
        print(f"  turn {span.turn_index}: {text[: span.start]}")
        print(f"    masked -> {text[span.start : span.end][:90]}...")


def main() -> None:
    kb = generate_kb(2, entity_count=16, scene_count=6)
    categories = ["landmarks", "nature", "craft", "records"]
    items = synthesize_items(kb, 120, categories, seed=5)
    print(f"seed items: {len(items)} across {len(categories)} categories")

    tools = SimulatedToolSuite(kb)
    kept = []
    rejected = 0
    for item in items:
        outcome = generate_example(item, tools)
        if not isinstance(outcome, MaskedConversation):
            rejected += 1
            continue
        if filter_by_ground_truth(outcome, item, judge):
            kept.append((outcome, item))
    print(f"conversations kept: {len(kept)} (rejected {rejected})")

    corpus = balance_sample(kept, 80, search_ratio=0.5, seed=9)
    search_count = sum(item.search_required for _, item in corpus)
    print(f"balanced corpus: {len(corpus)} records, {search_count} need search")
    for category in categories:
        count = sum(item.category == category for _, item in corpus)
        print(f"  {category:<10} {count}")

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "corpus.jsonl"
        emit_sft_corpus(corpus, path)
        print(f"mask audit: {audit_sft_corpus(path)} records verified")

    conversation, item = next(
        (c, i) for c, i in corpus if i.search_required and len(c.episode.turns) > 1
    )
    print()
    print(f"sample record ({item.category}): {item.question}")
    show_mask(conversation)


if __name__ == "__main__":
    main()
