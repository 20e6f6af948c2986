"""Shared fixtures: small handcrafted worlds whose behavior is known in advance.

Every knowledge base here is built by hand so that expected search rankings,
grounding boxes, and episode traces can be worked out independently of the
library code under test.
"""

from __future__ import annotations

import pytest

from searchagent import (
    AgentAction,
    Answer,
    BoundingBox,
    Budget,
    Document,
    Entity,
    ImageSearchCrop,
    ImageSearchWhole,
    KnowledgeBase,
    SceneImage,
    SceneRegion,
    ScriptedPolicy,
    SimulatedToolSuite,
    TextSearch,
    render_action,
    run_episode,
)


def turn(directive, reason: str | None = "thinking it through") -> str:
    """Render a well-formed assistant turn for scripted policies."""

    return render_action(AgentAction(reason=reason, directive=directive))


# Six documents over two topics plus three off-topic fillers.  For the query
# "eiffel height" the noise-free ranking is [0, 1, 2]: doc 0 covers both
# query terms, docs 1 and 2 cover one each (tie broken by id), docs 3-5
# share no terms with the query and form the distractor pool.
TEXT_DOCS = (
    (0, "eiffel tower height", "The eiffel tower height is 330 meters.", 0.9),
    (1, "eiffel tower tickets", "Visit the eiffel tower at night.", 0.8),
    (2, "tower height records", "Many towers compete on height.", 0.7),
    (3, "paris travel notes", "A guide to cafes and museums.", 0.6),
    (4, "cheese almanac", "Soft cheese ripens in caves.", 0.5),
    (5, "garden blooms", "Tulips bloom in early spring.", 0.4),
)


def make_text_kb(noise_seed: int = 0, distractor_rate: float = 0.0) -> KnowledgeBase:
    docs = tuple(Document(i, t, b, (), q) for i, t, b, q in TEXT_DOCS)
    return KnowledgeBase(
        entities=(),
        scenes=(),
        documents=docs,
        noise_seed=noise_seed,
        distractor_rate=distractor_rate,
    )


@pytest.fixture
def text_kb() -> KnowledgeBase:
    return make_text_kb()


# One pier scene holding two entities with disjoint boxes.  The lighthouse is
# the more salient region (0.65 vs 0.30), so whole-image search favors it,
# while a crop over the heron's box isolates the heron.
HERON_BOX = BoundingBox(0.55, 0.20, 0.30, 0.50)
LIGHTHOUSE_BOX = BoundingBox(0.05, 0.05, 0.40, 0.90)


def make_scene_kb() -> KnowledgeBase:
    heron = Entity(
        entity_id=0,
        canonical_name="amber heron",
        aliases=("the heron statue",),
        facts=(("height", "12 meters"), ("material", "bronze")),
        visual_descriptor="a small amber heron statue with bronze wings",
    )
    lighthouse = Entity(
        entity_id=1,
        canonical_name="cobalt lighthouse",
        aliases=(),
        facts=(("height", "55 meters"),),
        visual_descriptor="a tall cobalt lighthouse with white stripes",
    )
    scene = SceneImage(
        image_ref="pier-001",
        regions=(
            SceneRegion(entity_id=1, box=LIGHTHOUSE_BOX, salience=0.65),
            SceneRegion(entity_id=0, box=HERON_BOX, salience=0.30),
        ),
    )
    docs = (
        Document(0, "amber heron statue", "The amber heron height is 12 meters. It stands at the end of the pier.", (0,), 0.9),
        Document(1, "heron casting notes", "The amber heron was cast in bronze. Its wings gleam at dawn.", (0,), 0.7),
        Document(2, "cobalt lighthouse history", "The cobalt lighthouse height is 55 meters. Its lamp turns nightly.", (1,), 0.95),
        Document(3, "lighthouse keepers", "Keepers tended the cobalt lighthouse for a century.", (1,), 0.8),
        Document(4, "harbor weather", "Fog settles on the harbor in autumn.", (), 0.5),
    )
    return KnowledgeBase(entities=(heron, lighthouse), scenes=(scene,), documents=docs)


@pytest.fixture
def scene_kb() -> KnowledgeBase:
    return make_scene_kb()


@pytest.fixture
def scene_tools(scene_kb) -> SimulatedToolSuite:
    return SimulatedToolSuite(scene_kb)


def make_salience_kb() -> KnowledgeBase:
    """Scene with saliences 0.3 / 0.7 and five docs per entity.

    With five documents per entity every one of the k=5 whole-image slots can
    be filled by whichever entity its weighted draw lands on, so the fraction
    of returned documents about the 0.7-salience entity estimates 0.7.
    """

    kiosk = Entity(0, "ruby kiosk", (), (("material", "oak"),), "a squat ruby kiosk with oak shutters")
    obelisk = Entity(1, "onyx obelisk", (), (("height", "30 meters"),), "a sheer onyx obelisk with carved flutes")
    scene = SceneImage(
        image_ref="plaza-001",
        regions=(
            SceneRegion(entity_id=0, box=BoundingBox(0.05, 0.05, 0.25, 0.25), salience=0.3),
            SceneRegion(entity_id=1, box=BoundingBox(0.50, 0.10, 0.30, 0.80), salience=0.7),
        ),
    )
    docs = []
    for j in range(5):
        docs.append(Document(j, f"ruby kiosk digest {j}", f"Note {j} about the ruby kiosk and its oak shutters.", (0,), 0.9 - 0.1 * j))
        docs.append(Document(5 + j, f"onyx obelisk digest {j}", f"Note {j} about the onyx obelisk and its carved flutes.", (1,), 0.95 - 0.1 * j))
    return KnowledgeBase(entities=(kiosk, obelisk), scenes=(scene,), documents=tuple(docs))


@pytest.fixture
def salience_kb() -> KnowledgeBase:
    return make_salience_kb()


def run_scripted(kb: KnowledgeBase, script, question: str, image_ref: str, budget: Budget | None = None):
    """Run one scripted episode against a simulated tool suite."""

    policy = ScriptedPolicy(script)
    tools = SimulatedToolSuite(kb)
    return run_episode(policy, tools, budget or Budget(), question, image_ref)


HERON_QUESTION = "How tall is the amber heron?"

HERON_SCRIPT = (
    turn(ImageSearchCrop("the amber heron statue")),
    turn(TextSearch("amber heron height")),
    turn(TextSearch("heron casting bronze")),
    turn(Answer("12 meters")),
)
