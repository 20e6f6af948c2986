"""Score a group of rollouts and compute the policy-gradient objective.

Four scripted rollouts answer the same question with different quality:
two are right, one is confidently wrong, and one breaks the tag protocol.
Their composite rewards spread the group, group-relative advantages credit
the good rollouts, and the clipped surrogate plus KL penalty turns synthetic
log-probabilities into a single training objective. Run it with:

    python demos/training_signals.py
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from searchagent import (
    AgentAction,
    Answer,
    Budget,
    GrpoConfig,
    RolloutGroup,
    ScriptedPolicy,
    SimulatedToolSuite,
    TextSearch,
    Trajectory,
    generate_kb,
    group_advantages,
    grpo_objective,
    judge,
    render_action,
    reward_trajectory,
    run_episode,
)


@dataclass(frozen=True)
class QuestionItem:
    question: str
    ground_truth: tuple[str, ...]


def rollout_scripts(fact_query: str, truth: str):
    ok = lambda reason, directive: render_action(AgentAction(reason=reason, directive=directive))
    return (
        # Careful searcher, right answer.
        [ok("I should verify before answering.", TextSearch(fact_query)),
         ok("The search confirms it.", Answer(truth))],
        # Direct answer, also right.
        [ok("I already know this one.", Answer(truth))],
        # Confidently wrong.
        [ok("No need to check.", Answer("forty-two"))],
        # Tag soup: the parser rejects this turn, ending the episode.
        ["<answer>missing reason and a broken tag<answer>"],
    )


def synthetic_logprobs(rng: random.Random, tokens: int):
    current = [rng.uniform(-4.0, -0.5) for _ in range(tokens)]
    old = [value + rng.uniform(-0.3, 0.3) for value in current]
    ref = [value + rng.uniform(-0.3, 0.3) for value in current]
    mask = [rng.random() < 0.8 for _ in range(tokens)]
    if not any(mask):
        mask[0] = True
    return tuple(current), tuple(old), tuple(ref), tuple(mask)


def main() -> None:
    kb = generate_kb(11)
    entity = kb.entities[0]
    relation, truth = entity.facts[0]
    item = QuestionItem(
        question=f"What is the {relation} of {entity.canonical_name}?",
        ground_truth=(truth,),
    )
    config = GrpoConfig()
    tools = SimulatedToolSuite(kb)
    rng = random.Random(7)

    trajectories = []
    rewards = []
    for script in rollout_scripts(f"{entity.canonical_name} {relation}", truth):
        episode = run_episode(
            ScriptedPolicy(script), tools, Budget(), item.question, kb.scenes[0].image_ref
        )
        breakdown = reward_trajectory(episode, item, judge, config)
        rewards.append(breakdown)
        current, old, ref, mask = synthetic_logprobs(rng, tokens=12)
        trajectories.append(Trajectory(current, old, ref, mask, breakdown))

    print(f"question: {item.question}")
    print(f"truth:    {truth}")
    print()
    advantages = group_advantages([b.total for b in rewards])
    labels = ("search then answer", "direct correct answer", "wrong answer", "malformed turn")
    for label, breakdown, advantage in zip(labels, rewards, advantages):
        print(
            f"{label:<24} answer={breakdown.answer_score} "
            f"format={breakdown.format_score} reward={breakdown.total:+.2f} "
            f"advantage={advantage:+.3f}"
        )

    report = grpo_objective(RolloutGroup("demo", tuple(trajectories)), config)
    print()
    print(f"surrogate:     {report.surrogate:+.6f}")
    print(f"kl penalty:    {report.kl:.6f} (beta {config.kl_beta})")
    print(f"objective:     {report.objective:+.6f}")
    print(f"clip fraction: {report.clip_fraction:.3f} over {report.token_count} generated tokens")


if __name__ == "__main__":
    main()
