"""Group-relative policy optimization arithmetic.

Pure math over recorded rollout groups: composite rewards, group-mean
advantages, and the clipped surrogate objective with a KL penalty. No
model, no optimizer, no sampling; everything here is exactly testable
against a brute-force evaluator.

Conventions: advantages are rewards minus the group mean. The surrogate
for a token is min(ratio * A, clip(ratio, 1-eps, 1+eps) * A) with
ratio = exp(logprob_current - logprob_old). The KL penalty uses the
low-variance estimator exp(d) - d - 1 with d = logprob_ref -
logprob_current, which is nonnegative for every d. The objective is the
mean over all generated-mask tokens in the whole group (one flat mean,
not a mean of per-trajectory means) of the surrogate, minus kl_beta times
the same flat mean of the KL term. The returned value is the quantity to
maximize; a trainer would descend on its negation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .engine import Answered, Episode
from .tags import format_score


@dataclass(frozen=True)
class GrpoConfig:
    """Optimization constants. Defaults match the training setup."""

    clip_epsilon: float = 0.2
    kl_beta: float = 0.001
    lambda_fmt: float = 0.1
    group_size: int = 8

    def __post_init__(self) -> None:
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must lie in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be non-negative")
        if not 0 <= self.lambda_fmt <= 1:
            raise ValueError("lambda_fmt must lie in [0, 1]")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")


def composite_reward(answer_score: int, format_score_value: int, lambda_fmt: float) -> float:
    """(1 - lambda) * answer + lambda * format, both scores binary."""
    if answer_score not in (0, 1):
        raise ValueError("answer_score must be 0 or 1")
    if format_score_value not in (0, 1):
        raise ValueError("format score must be 0 or 1")
    if not 0 <= lambda_fmt <= 1:
        raise ValueError("lambda_fmt must lie in [0, 1]")
    return (1.0 - lambda_fmt) * answer_score + lambda_fmt * format_score_value


@dataclass(frozen=True)
class RewardBreakdown:
    """Reward components for one trajectory: answer, format, and their blend."""

    answer_score: int
    format_score: int
    total: float

    def __post_init__(self) -> None:
        if self.answer_score not in (0, 1):
            raise ValueError("answer_score must be 0 or 1")
        if self.format_score not in (0, 1):
            raise ValueError("format_score must be 0 or 1")
        if not 0.0 <= self.total <= 1.0:
            raise ValueError("total must lie in [0, 1]")

    @classmethod
    def from_scores(
        cls, answer_score: int, format_score_value: int, config: GrpoConfig
    ) -> "RewardBreakdown":
        return cls(
            answer_score,
            format_score_value,
            composite_reward(answer_score, format_score_value, config.lambda_fmt),
        )


@dataclass(frozen=True)
class Trajectory:
    """Per-token log-probabilities and the generated-token mask for one rollout.

    The mask is True on tokens the policy generated and False on injected
    information tokens; only True positions contribute to the objective.
    """

    logprobs_current: tuple[float, ...]
    logprobs_old: tuple[float, ...]
    logprobs_ref: tuple[float, ...]
    generated_mask: tuple[bool, ...]
    reward: RewardBreakdown

    def __post_init__(self) -> None:
        n = len(self.logprobs_current)
        if n == 0:
            raise ValueError("trajectory must have at least one token")
        if not (len(self.logprobs_old) == len(self.logprobs_ref) == len(self.generated_mask) == n):
            raise ValueError("logprob and mask sequences must have equal length")
        if not all(isinstance(m, bool) for m in self.generated_mask):
            raise ValueError("generated_mask entries must be booleans")


@dataclass(frozen=True)
class RolloutGroup:
    """All rollouts sampled for one prompt."""

    prompt_id: str
    trajectories: tuple[Trajectory, ...]

    def __post_init__(self) -> None:
        if not self.prompt_id:
            raise ValueError("prompt_id must be non-empty")
        if not self.trajectories:
            raise ValueError("group must contain at least one trajectory")


def group_advantages(rewards: Sequence[float]) -> list[float]:
    """Rewards minus their group mean. Needs at least two rollouts."""
    if len(rewards) < 2:
        raise ValueError("advantages need a group of at least two rewards")
    mean = math.fsum(rewards) / len(rewards)
    return [r - mean for r in rewards]


@dataclass(frozen=True)
class TrajectoryTerms:
    """Per-trajectory decomposition of the group objective."""

    advantage: float
    token_count: int
    surrogate_sum: float
    kl_sum: float


@dataclass(frozen=True)
class GrpoReport:
    """Objective value plus the pieces it was assembled from."""

    objective: float
    surrogate: float
    kl: float
    token_count: int
    clip_fraction: float
    advantages: tuple[float, ...]
    per_trajectory: tuple[TrajectoryTerms, ...]


def grpo_objective(group: RolloutGroup, config: GrpoConfig) -> GrpoReport:
    """Evaluate the clipped surrogate objective with KL penalty for one group.

    Raises if the group has fewer than two trajectories or no generated
    tokens at all (the flat token mean would be undefined).
    """
    rewards = [t.reward.total for t in group.trajectories]
    advantages = group_advantages(rewards)

    low, high = 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon
    surrogate_parts: list[np.ndarray] = []
    kl_parts: list[np.ndarray] = []
    per_trajectory: list[TrajectoryTerms] = []
    clipped_tokens = 0

    for trajectory, advantage in zip(group.trajectories, advantages):
        current = np.asarray(trajectory.logprobs_current, dtype=np.float64)
        old = np.asarray(trajectory.logprobs_old, dtype=np.float64)
        ref = np.asarray(trajectory.logprobs_ref, dtype=np.float64)
        mask = np.asarray(trajectory.generated_mask, dtype=bool)

        ratio = np.exp(current - old)
        surrogate = np.minimum(ratio * advantage, np.clip(ratio, low, high) * advantage)
        delta = ref - current
        kl = np.exp(delta) - delta - 1.0

        masked_surrogate = surrogate[mask]
        masked_kl = kl[mask]
        surrogate_parts.append(masked_surrogate)
        kl_parts.append(masked_kl)
        clipped_tokens += int(np.count_nonzero((ratio[mask] < low) | (ratio[mask] > high)))
        per_trajectory.append(
            TrajectoryTerms(
                advantage=advantage,
                token_count=int(masked_surrogate.size),
                surrogate_sum=float(masked_surrogate.sum()),
                kl_sum=float(masked_kl.sum()),
            )
        )

    all_surrogate = np.concatenate(surrogate_parts)
    if all_surrogate.size == 0:
        raise ValueError("group has no generated tokens to average over")
    all_kl = np.concatenate(kl_parts)

    surrogate_mean = float(all_surrogate.mean())
    kl_mean = float(all_kl.mean())
    return GrpoReport(
        objective=surrogate_mean - config.kl_beta * kl_mean,
        surrogate=surrogate_mean,
        kl=kl_mean,
        token_count=int(all_surrogate.size),
        clip_fraction=clipped_tokens / all_surrogate.size,
        advantages=tuple(advantages),
        per_trajectory=tuple(per_trajectory),
    )


class _ItemLike(Protocol):
    question: str
    ground_truth: tuple[str, ...]


JudgeFn = Callable[[str, str, Sequence[str]], object]


def reward_trajectory(
    episode: Episode, item: _ItemLike, judge: JudgeFn, config: GrpoConfig
) -> RewardBreakdown:
    """Score one finished episode against its item.

    The answer score is 1 only when the episode terminated with Answer and
    the judge accepts the final text against the ground truth. The format
    score is the strict whole-trajectory check, so stray prose outside
    tags forfeits the format component even when the answer is right.
    """
    if episode.question != item.question:
        raise ValueError("episode and item disagree on the question")
    answer_score = 0
    if isinstance(episode.status, Answered):
        verdict = judge(item.question, episode.status.final_text, list(item.ground_truth))
        answer_score = 1 if getattr(verdict, "correct", False) else 0
    fmt = format_score([t.assistant_raw for t in episode.turns], strict=True)
    return RewardBreakdown.from_scores(answer_score, fmt, config)


# --- rollout group persistence ----------------------------------------------


def group_to_dict(group: RolloutGroup) -> dict:
    return {
        "prompt_id": group.prompt_id,
        "trajectories": [
            {
                "logprobs_current": list(t.logprobs_current),
                "logprobs_old": list(t.logprobs_old),
                "logprobs_ref": list(t.logprobs_ref),
                "generated_mask": list(t.generated_mask),
                "reward": {
                    "answer_score": t.reward.answer_score,
                    "format_score": t.reward.format_score,
                    "total": t.reward.total,
                },
            }
            for t in group.trajectories
        ],
    }


def group_from_dict(data: dict) -> RolloutGroup:
    trajectories = []
    for t in data["trajectories"]:
        reward = t["reward"]
        trajectories.append(
            Trajectory(
                logprobs_current=tuple(float(x) for x in t["logprobs_current"]),
                logprobs_old=tuple(float(x) for x in t["logprobs_old"]),
                logprobs_ref=tuple(float(x) for x in t["logprobs_ref"]),
                generated_mask=tuple(bool(x) for x in t["generated_mask"]),
                reward=RewardBreakdown(
                    reward["answer_score"], reward["format_score"], reward["total"]
                ),
            )
        )
    return RolloutGroup(data["prompt_id"], tuple(trajectories))


def write_groups_jsonl(path: str | Path, groups: Iterable[RolloutGroup]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for group in groups:
            fh.write(json.dumps(group_to_dict(group), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_groups_jsonl(path: str | Path) -> list[RolloutGroup]:
    groups = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                groups.append(group_from_dict(json.loads(line)))
    return groups
