"""Simulated search tools over a small synthetic world.

A KnowledgeBase holds entities, scene images (regions with bounding boxes
and salience), and documents. The tools reproduce the qualitative behavior
the engine needs to exercise agents offline: lexical text search with
seeded distractor noise, salience-weighted whole-image search, crop-based
image search via box overlap, referring-expression grounding, and
extractive summarization.

Every operation is a pure function of (kb, inputs). Per-call randomness is
derived by hashing the noise seed together with the call inputs (sha256,
never the process-salted builtin hash), so results are stable across
processes and platforms.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .engine import ToolError

_WORD_RE = re.compile(r"[a-z0-9]+")
_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")

NO_RESULTS_NOTICE = "No results found."

DEFAULT_GROUNDING_MIN_OVERLAP = 0.2
DEFAULT_CROP_OVERLAP_THRESHOLD = 0.5


class EmptyQuery(ToolError):
    """The query has no usable terms."""


class UnknownImage(ToolError):
    """The image reference names no scene in the knowledge base."""


class GroundingFailure(ToolError):
    """No region matches the referring expression well enough."""


def terms(text: str) -> set[str]:
    """Lowercase word tokens of a text, as a set."""
    return set(_WORD_RE.findall(text.lower()))


def derive_rng(*parts: object) -> random.Random:
    """Seed a generator from a stable hash of the given parts."""
    h = hashlib.sha256()
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x00")
    return random.Random(int.from_bytes(h.digest()[:8], "big"))


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized [0, 1] image coordinates."""

    x: float
    y: float
    width: float
    height: float

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise ValueError("box origin must be non-negative")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("box must have positive extent")
        if self.x + self.width > 1 + 1e-9 or self.y + self.height > 1 + 1e-9:
            raise ValueError("box must lie within the unit square")

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection_area(self, other: "BoundingBox") -> float:
        dx = min(self.x + self.width, other.x + other.width) - max(self.x, other.x)
        dy = min(self.y + self.height, other.y + other.height) - max(self.y, other.y)
        if dx <= 0 or dy <= 0:
            return 0.0
        return dx * dy


@dataclass(frozen=True)
class Entity:
    entity_id: int
    canonical_name: str
    aliases: tuple[str, ...]
    facts: tuple[tuple[str, str], ...]
    visual_descriptor: str

    def __post_init__(self) -> None:
        if self.entity_id < 0:
            raise ValueError("entity_id must be non-negative")
        if not self.canonical_name or not self.visual_descriptor:
            raise ValueError("canonical_name and visual_descriptor must be non-empty")

    def fact(self, relation: str) -> str | None:
        for rel, value in self.facts:
            if rel == relation:
                return value
        return None


@dataclass(frozen=True)
class SceneRegion:
    entity_id: int
    box: BoundingBox
    salience: float

    def __post_init__(self) -> None:
        if not 0 < self.salience <= 1:
            raise ValueError("salience must lie in (0, 1]")


@dataclass(frozen=True)
class SceneImage:
    image_ref: str
    regions: tuple[SceneRegion, ...]

    def __post_init__(self) -> None:
        if not self.image_ref:
            raise ValueError("image_ref must be non-empty")
        if not self.regions:
            raise ValueError("a scene needs at least one region")
        ids = [r.entity_id for r in self.regions]
        if len(set(ids)) != len(ids):
            raise ValueError("scene regions must reference distinct entities")
        if sum(r.salience for r in self.regions) > 1 + 1e-9:
            raise ValueError("region saliences must sum to at most 1")


@dataclass(frozen=True)
class Document:
    doc_id: int
    title: str
    body: str
    about_entities: tuple[int, ...]
    quality: float

    def __post_init__(self) -> None:
        if self.doc_id < 0:
            raise ValueError("doc_id must be non-negative")
        if not self.title or not self.body:
            raise ValueError("title and body must be non-empty")
        if not 0 <= self.quality <= 1:
            raise ValueError("quality must lie in [0, 1]")


@dataclass
class KnowledgeBase:
    """Immutable world model. Treat all fields as read-only after construction."""

    entities: tuple[Entity, ...]
    scenes: tuple[SceneImage, ...]
    documents: tuple[Document, ...]
    noise_seed: int = 0
    distractor_rate: float = 0.0

    _entities_by_id: dict[int, Entity] = field(init=False, repr=False, compare=False)
    _scenes_by_ref: dict[str, SceneImage] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.entities = tuple(self.entities)
        self.scenes = tuple(self.scenes)
        self.documents = tuple(self.documents)
        if not 0 <= self.distractor_rate <= 1:
            raise ValueError("distractor_rate must lie in [0, 1]")
        self._entities_by_id = {e.entity_id: e for e in self.entities}
        if len(self._entities_by_id) != len(self.entities):
            raise ValueError("entity ids must be unique")
        self._scenes_by_ref = {s.image_ref: s for s in self.scenes}
        if len(self._scenes_by_ref) != len(self.scenes):
            raise ValueError("scene image_refs must be unique")
        doc_ids = {d.doc_id for d in self.documents}
        if len(doc_ids) != len(self.documents):
            raise ValueError("doc ids must be unique")
        for scene in self.scenes:
            for region in scene.regions:
                if region.entity_id not in self._entities_by_id:
                    raise ValueError(
                        f"scene {scene.image_ref} references unknown entity {region.entity_id}"
                    )
        for doc in self.documents:
            for eid in doc.about_entities:
                if eid not in self._entities_by_id:
                    raise ValueError(f"document {doc.doc_id} references unknown entity {eid}")

    def entity(self, entity_id: int) -> Entity:
        return self._entities_by_id[entity_id]

    def scene(self, image_ref: str) -> SceneImage:
        try:
            return self._scenes_by_ref[image_ref]
        except KeyError:
            raise UnknownImage(f"unknown image {image_ref!r}") from None


def text_search(kb: KnowledgeBase, query: str, k: int = 5, *, salt: int = 0) -> list[Document]:
    """Rank documents by query-term coverage, with seeded distractor swaps.

    Score = |query terms ∩ document terms| / |query terms| over title+body.
    Zero-score documents never rank; ties break toward smaller doc_id. Each
    result slot is then swapped for an unused off-topic document with
    probability kb.distractor_rate, drawn from a generator derived from
    (noise_seed, query, k, salt).
    """
    if k < 1:
        raise ValueError("k must be positive")
    query_terms = terms(query)
    if not query_terms:
        raise EmptyQuery(f"query {query!r} has no usable terms")

    scored: list[tuple[float, Document]] = []
    off_topic: list[Document] = []
    for doc in kb.documents:
        overlap = len(query_terms & terms(doc.title + " " + doc.body))
        if overlap > 0:
            scored.append((overlap / len(query_terms), doc))
        else:
            off_topic.append(doc)
    scored.sort(key=lambda pair: (-pair[0], pair[1].doc_id))
    results = [doc for _, doc in scored[:k]]

    if kb.distractor_rate > 0 and off_topic:
        rng = derive_rng(kb.noise_seed, "text_search", query, k, salt)
        pool = sorted(off_topic, key=lambda d: d.doc_id)
        for i in range(len(results)):
            if rng.random() < kb.distractor_rate and pool:
                results[i] = pool.pop(rng.randrange(len(pool)))
    return results


def image_search(
    kb: KnowledgeBase,
    image_ref: str,
    k: int = 5,
    crop: BoundingBox | None = None,
    *,
    crop_overlap_threshold: float = DEFAULT_CROP_OVERLAP_THRESHOLD,
    salt: int = 0,
) -> list[Document]:
    """Retrieve documents about entities visible in an image or a crop of it.

    Whole image: each of the k result slots samples a region with
    probability proportional to salience (generator derived from
    (noise_seed, image_ref, k, salt)) and takes that entity's best unused
    document by quality. Crop: only entities whose region covers more than
    ``crop_overlap_threshold`` of the crop's area are eligible, ranked by
    document quality with no randomness.
    """
    if k < 1:
        raise ValueError("k must be positive")
    scene = kb.scene(image_ref)

    if crop is not None:
        eligible = {
            r.entity_id
            for r in scene.regions
            if r.box.intersection_area(crop) / crop.area > crop_overlap_threshold
        }
        docs = [d for d in kb.documents if any(e in eligible for e in d.about_entities)]
        docs.sort(key=lambda d: (-d.quality, d.doc_id))
        return docs[:k]

    rng = derive_rng(kb.noise_seed, "image_search", image_ref, k, salt)
    regions = list(scene.regions)
    weights = [r.salience for r in regions]
    used: set[int] = set()
    picks: list[Document] = []
    for _ in range(k):
        region = rng.choices(regions, weights=weights, k=1)[0]
        candidates = [
            d
            for d in kb.documents
            if region.entity_id in d.about_entities and d.doc_id not in used
        ]
        if not candidates:
            continue
        best = min(candidates, key=lambda d: (-d.quality, d.doc_id))
        used.add(best.doc_id)
        picks.append(best)
    picks.sort(key=lambda d: (-d.quality, d.doc_id))
    return picks


def ground(
    kb: KnowledgeBase,
    image_ref: str,
    expression: str,
    *,
    min_overlap: float = DEFAULT_GROUNDING_MIN_OVERLAP,
) -> BoundingBox:
    """Locate the region whose entity descriptor best matches the expression.

    Match score is the Jaccard overlap between expression tokens and the
    entity's visual_descriptor tokens. Ties prefer larger salience, then
    smaller entity_id. A best score below ``min_overlap`` raises
    GroundingFailure so the caller can fall back to whole-image search.
    """
    scene = kb.scene(image_ref)
    expr_terms = terms(expression)
    if not expr_terms:
        raise GroundingFailure(f"expression {expression!r} has no usable terms")

    def score(region: SceneRegion) -> float:
        descriptor_terms = terms(kb.entity(region.entity_id).visual_descriptor)
        union = expr_terms | descriptor_terms
        if not union:
            return 0.0
        return len(expr_terms & descriptor_terms) / len(union)

    best = max(scene.regions, key=lambda r: (score(r), r.salience, -r.entity_id))
    if score(best) < min_overlap:
        raise GroundingFailure(f"no region matches {expression!r}")
    return best.box


def summarize(question: str, docs: list[Document], max_sentences: int = 5) -> str:
    """Extractive summary: the sentences most relevant to the question.

    Sentences are scored by shared-term count with the question; the top
    ``max_sentences`` with positive score are kept (ties prefer earlier
    documents, then earlier sentences) and emitted in source order. If
    nothing scores, the first sentence of the top document stands in.
    """
    if not docs:
        raise ValueError("summarize needs at least one document")
    if max_sentences < 1:
        raise ValueError("max_sentences must be positive")
    question_terms = terms(question)

    candidates: list[tuple[int, int, int, str]] = []
    for rank, doc in enumerate(docs):
        for index, sentence in enumerate(_split_sentences(doc.body)):
            overlap = len(question_terms & terms(sentence))
            candidates.append((overlap, rank, index, sentence))

    scored = [c for c in candidates if c[0] > 0]
    scored.sort(key=lambda c: (-c[0], c[1], c[2]))
    selected = scored[:max_sentences]
    if not selected:
        first = _split_sentences(docs[0].body)[0]
        return first
    selected.sort(key=lambda c: (c[1], c[2]))
    return " ".join(c[3] for c in selected)


def _split_sentences(body: str) -> list[str]:
    parts = [s.strip() for s in _SENTENCE_SPLIT_RE.split(body.strip())]
    return [s for s in parts if s]


@dataclass
class SimulatedToolSuite:
    """Adapts the simulated tools to the engine's Tools interface.

    Search results are condensed by the extractive summarizer before they
    reach the conversation, the way a retrieval stack trims raw hits down
    to a handful of sentences.
    """

    kb: KnowledgeBase
    k: int = 5
    max_sentences: int = 5
    crop_overlap_threshold: float = DEFAULT_CROP_OVERLAP_THRESHOLD
    grounding_min_overlap: float = DEFAULT_GROUNDING_MIN_OVERLAP

    def lookup_text(self, question: str, query: str, *, salt: int = 0) -> str:
        docs = text_search(self.kb, query, self.k, salt=salt)
        if not docs:
            return NO_RESULTS_NOTICE
        return summarize(question, docs, self.max_sentences)

    def lookup_image(
        self, question: str, image_ref: str, expression: str | None = None, *, salt: int = 0
    ) -> str:
        if expression is not None:
            crop = ground(
                self.kb, image_ref, expression, min_overlap=self.grounding_min_overlap
            )
            docs = image_search(
                self.kb,
                image_ref,
                self.k,
                crop=crop,
                crop_overlap_threshold=self.crop_overlap_threshold,
            )
        else:
            docs = image_search(self.kb, image_ref, self.k, salt=salt)
        if not docs:
            return NO_RESULTS_NOTICE
        return summarize(question, docs, self.max_sentences)


# --- synthetic world generation --------------------------------------------

_ADJECTIVES = (
    "amber", "crimson", "cobalt", "ivory", "onyx", "emerald", "scarlet",
    "golden", "silver", "violet", "umber", "teal", "coral", "slate",
    "russet", "pearl", "jade", "copper", "indigo", "maroon",
)
_NOUNS = (
    "heron", "lighthouse", "footbridge", "locomotive", "observatory",
    "windmill", "fountain", "obelisk", "carousel", "aqueduct", "clocktower",
    "pavilion", "telescope", "galleon", "amphitheater", "viaduct",
    "planetarium", "monolith", "arboretum", "zeppelin",
)
_DETAILS = (
    "carved railings", "twin spires", "rivet seams", "curved glass panels",
    "stone arches", "brass fittings", "woven banners", "mosaic tiles",
)
_CITIES = (
    "Ostrava", "Valletta", "Tampere", "Cuenca", "Bergamo", "Namur",
    "Gdynia", "Leiria", "Brasov", "Kuopio",
)
_SURNAMES = (
    "Halvorsen", "Okonkwo", "Marchetti", "Lindqvist", "Abramov",
    "Castellanos", "Virtanen", "Dabrowski", "Meszaros", "Oyelaran",
)
_MATERIALS = ("granite", "wrought iron", "limestone", "cedar", "basalt", "terracotta")
_FILLER_WORDS = (
    "quarterly", "almanac", "ledger", "harvest", "monsoon", "archive",
    "bulletin", "gazette", "pamphlet", "chronicle", "survey", "census",
    "tariff", "manifest", "registry", "gazetteer",
)

RELATIONS = ("height", "opening year", "architect", "location", "material")


def generate_kb(
    seed: int,
    entity_count: int = 12,
    scene_count: int = 8,
    docs_per_entity: int = 3,
    filler_docs: int = 6,
    distractor_rate: float = 0.0,
    regions_per_scene: int = 2,
) -> KnowledgeBase:
    """Generate a self-consistent synthetic world, a pure function of its arguments.

    Every entity gets one fact per relation and ``docs_per_entity``
    documents covering them; scenes place ``regions_per_scene`` entities in
    side-by-side columns with uneven salience, so whole-image search has
    something to be distracted by and crops can isolate one entity.
    """
    if entity_count < 1 or scene_count < 0 or docs_per_entity < 1:
        raise ValueError("entity_count and docs_per_entity must be positive")
    if regions_per_scene < 1 or regions_per_scene > entity_count:
        raise ValueError("regions_per_scene must lie in [1, entity_count]")
    max_entities = len(_ADJECTIVES) * len(_NOUNS)
    if entity_count > max_entities:
        raise ValueError(f"at most {max_entities} entities supported")

    rng = random.Random(seed)
    names = rng.sample([(a, n) for a in _ADJECTIVES for n in _NOUNS], entity_count)

    entities: list[Entity] = []
    for entity_id, (adjective, noun) in enumerate(names):
        canonical = f"{adjective} {noun}"
        detail = rng.choice(_DETAILS)
        facts = (
            ("height", f"{rng.randint(20, 500)} meters"),
            ("opening year", str(rng.randint(1700, 2020))),
            ("architect", f"{rng.choice(_ADJECTIVES).capitalize()} {rng.choice(_SURNAMES)}"),
            ("location", rng.choice(_CITIES)),
            ("material", rng.choice(_MATERIALS)),
        )
        entities.append(
            Entity(
                entity_id=entity_id,
                canonical_name=canonical,
                aliases=(f"the {noun}",),
                facts=facts,
                visual_descriptor=f"a {adjective} {noun} with {detail}",
            )
        )

    documents: list[Document] = []
    doc_id = 0
    for entity in entities:
        fact_list = list(entity.facts)
        for j in range(docs_per_entity):
            # Rotate which facts each document covers so no single document
            # is the only source for a relation.
            covered = [fact_list[(j + i) % len(fact_list)] for i in range(3)]
            sentences = [
                f"The {entity.canonical_name} {rel} is {value}." for rel, value in covered
            ]
            sentences.append(
                f"Visitors describe {entity.canonical_name} notes in the {rng.choice(_FILLER_WORDS)}."
            )
            documents.append(
                Document(
                    doc_id=doc_id,
                    title=f"{entity.canonical_name}: {covered[0][0]} and {covered[1][0]}",
                    body=" ".join(sentences),
                    about_entities=(entity.entity_id,),
                    quality=round(rng.uniform(0.3, 0.99), 6),
                )
            )
            doc_id += 1
    for _ in range(filler_docs):
        words = rng.sample(_FILLER_WORDS, 4)
        documents.append(
            Document(
                doc_id=doc_id,
                title=f"{words[0]} {words[1]}",
                body=f"The {words[0]} {words[1]} lists {words[2]} totals. "
                f"Each {words[3]} entry repeats the {words[2]} figures.",
                about_entities=(),
                quality=round(rng.uniform(0.1, 0.5), 6),
            )
        )
        doc_id += 1

    scenes: list[SceneImage] = []
    for i in range(scene_count):
        chosen = rng.sample(entities, regions_per_scene)
        raw = [rng.uniform(0.2, 0.8) for _ in chosen]
        total = sum(raw)
        saliences = [round(0.9 * value / total, 6) for value in raw]
        regions = []
        for column, (entity, salience) in enumerate(zip(chosen, saliences)):
            width = 1.0 / regions_per_scene
            regions.append(
                SceneRegion(
                    entity_id=entity.entity_id,
                    box=BoundingBox(
                        x=round(column * width + 0.02, 6),
                        y=0.1,
                        width=round(width - 0.04, 6),
                        height=0.8,
                    ),
                    salience=salience,
                )
            )
        scenes.append(SceneImage(image_ref=f"scene-{i:03d}", regions=tuple(regions)))

    return KnowledgeBase(
        entities=tuple(entities),
        scenes=tuple(scenes),
        documents=tuple(documents),
        noise_seed=seed,
        distractor_rate=distractor_rate,
    )


# --- persistence ------------------------------------------------------------


def kb_to_dict(kb: KnowledgeBase) -> dict:
    return {
        "noise_seed": kb.noise_seed,
        "distractor_rate": kb.distractor_rate,
        "entities": [
            {
                "entity_id": e.entity_id,
                "canonical_name": e.canonical_name,
                "aliases": list(e.aliases),
                "facts": [[rel, value] for rel, value in e.facts],
                "visual_descriptor": e.visual_descriptor,
            }
            for e in kb.entities
        ],
        "scenes": [
            {
                "image_ref": s.image_ref,
                "regions": [
                    {
                        "entity_id": r.entity_id,
                        "box": [r.box.x, r.box.y, r.box.width, r.box.height],
                        "salience": r.salience,
                    }
                    for r in s.regions
                ],
            }
            for s in kb.scenes
        ],
        "documents": [
            {
                "doc_id": d.doc_id,
                "title": d.title,
                "body": d.body,
                "about_entities": list(d.about_entities),
                "quality": d.quality,
            }
            for d in kb.documents
        ],
    }


def kb_from_dict(data: dict) -> KnowledgeBase:
    entities = tuple(
        Entity(
            entity_id=e["entity_id"],
            canonical_name=e["canonical_name"],
            aliases=tuple(e.get("aliases", ())),
            facts=tuple((rel, value) for rel, value in e.get("facts", ())),
            visual_descriptor=e["visual_descriptor"],
        )
        for e in data["entities"]
    )
    scenes = tuple(
        SceneImage(
            image_ref=s["image_ref"],
            regions=tuple(
                SceneRegion(
                    entity_id=r["entity_id"],
                    box=BoundingBox(*r["box"]),
                    salience=r["salience"],
                )
                for r in s["regions"]
            ),
        )
        for s in data["scenes"]
    )
    documents = tuple(
        Document(
            doc_id=d["doc_id"],
            title=d["title"],
            body=d["body"],
            about_entities=tuple(d.get("about_entities", ())),
            quality=d["quality"],
        )
        for d in data["documents"]
    )
    return KnowledgeBase(
        entities=entities,
        scenes=scenes,
        documents=documents,
        noise_seed=data.get("noise_seed", 0),
        distractor_rate=data.get("distractor_rate", 0.0),
    )


def save_kb(kb: KnowledgeBase, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(kb_to_dict(kb), fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")


def load_kb(path: str | Path) -> KnowledgeBase:
    with open(path, "r", encoding="utf-8") as fh:
        return kb_from_dict(json.load(fh))
