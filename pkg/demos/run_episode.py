"""Walk one agent episode end to end against a tiny simulated world.

The agent is a fixed script here, standing in for a policy model: it crops
the image to the entity the question asks about, follows up with two text
searches, and answers. Run it with:

    python demos/run_episode.py
"""

from __future__ import annotations

from searchagent import (
    AgentAction,
    Answer,
    BoundingBox,
    Budget,
    Document,
    Entity,
    ImageSearchCrop,
    KnowledgeBase,
    SceneImage,
    SceneRegion,
    ScriptedPolicy,
    SimulatedToolSuite,
    TextSearch,
    render_action,
    run_episode,
)


def harbor_world() -> KnowledgeBase:
    """A pier scene with a small statue next to a much flashier lighthouse."""

    statue = Entity(
        entity_id=0,
        canonical_name="amber heron statue",
        aliases=("the heron",),
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
            SceneRegion(1, BoundingBox(0.05, 0.05, 0.40, 0.90), salience=0.65),
            SceneRegion(0, BoundingBox(0.55, 0.20, 0.30, 0.50), salience=0.30),
        ),
    )
    documents = (
        Document(0, "amber heron statue", "The amber heron height is 12 meters. It stands at the end of the pier.", (0,), 0.9),
        Document(1, "heron casting notes", "The heron was cast in bronze by a local forge.", (0,), 0.7),
        Document(2, "cobalt lighthouse", "The cobalt lighthouse height is 55 meters.", (1,), 0.95),
        Document(3, "lighthouse history", "The lighthouse guided ships for a century.", (1,), 0.8),
        Document(4, "harbor almanac", "Tides in the harbor swing two meters.", (), 0.5),
    )
    return KnowledgeBase(
        entities=(statue, lighthouse),
        scenes=(scene,),
        documents=documents,
        noise_seed=0,
        distractor_rate=0.0,
    )


def scripted_agent() -> ScriptedPolicy:
    steps = (
        AgentAction(
            reason="The question names the amber heron, so I should look at that part of the image first.",
            directive=ImageSearchCrop("the amber heron statue"),
        ),
        AgentAction(
            reason="The crop results mention a height; a text search should confirm it.",
            directive=TextSearch("amber heron height"),
        ),
        AgentAction(
            reason="One more check on the material to be safe.",
            directive=TextSearch("heron casting bronze"),
        ),
        AgentAction(
            reason="Both sources agree on the height.",
            directive=Answer("12 meters"),
        ),
    )
    return ScriptedPolicy([render_action(a) for a in steps])


def main() -> None:
    kb = harbor_world()
    episode = run_episode(
        scripted_agent(),
        SimulatedToolSuite(kb),
        Budget(),
        "How tall is the amber heron?",
        "pier-001",
    )

    print(f"question: {episode.question}")
    print(f"image:    {episode.image_ref}")
    print()
    for index, turn in enumerate(episode.turns):
        print(f"--- turn {index} ---")
        print(f"assistant: {turn.assistant_raw}")
        if turn.information is not None:
            print(f"[{turn.information.source.value}] {turn.information.content}")
        print()

    print(f"status: {episode.status}")
    print(
        "ledger: "
        f"{episode.ledger.image_searches_used} image search, "
        f"{episode.ledger.text_searches_used} text searches, "
        f"{episode.ledger.tokens_used} response tokens"
    )


if __name__ == "__main__":
    main()
