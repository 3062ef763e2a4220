"""Step rewards, outcome bonus, episode return and trajectory quality scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .environment import SimResult

EXACT = 0.5
CATEGORY = 0.2
RECOVERY = 0.1
EXEC_OK = 0.5
EXEC_ERR = -0.5


@dataclass(frozen=True)
class RewardConfig:
    completed_bonus: float = 2.0
    partial_scale: float = 1.0


@dataclass(frozen=True)
class StepReward:
    intent: float
    exec: float

    @property
    def total(self) -> float:
        return self.intent + self.exec


@dataclass
class EpisodeScore:
    step_rewards: list
    outcome: float
    return_R: float
    q: float
    q_model: Optional[float]
    completed: bool


def intent_reward(chosen: int, reference: Optional[int], prev_chosen: Optional[int],
                  prev_reference: Optional[int], categories: Mapping[int, str]) -> float:
    """0.5 exact, 0.2 same category, else 0; +0.1 when an exact match follows a wrong step.

    `reference` is None past the end of the reference trajectory (intent 0).
    """
    if reference is None:
        return 0.0
    if chosen == reference:
        r = EXACT
        if prev_reference is not None and prev_chosen != prev_reference:
            r += RECOVERY
        return r
    if categories[chosen] == categories[reference]:
        return CATEGORY
    return 0.0


def exec_reward(sim: SimResult) -> float:
    return EXEC_ERR if sim.is_error else EXEC_OK


def outcome_bonus(completed: bool, q_final: float, cfg: RewardConfig = RewardConfig()) -> float:
    if completed:
        return cfg.completed_bonus
    return cfg.partial_scale * q_final


def match_ratio(predicted: Sequence[int], reference: Sequence[int]) -> float:
    if not reference:
        raise ValueError("reference must be non-empty")
    hits = sum(1 for a, b in zip(predicted, reference) if a == b)
    return hits / len(reference)


def model_quality(predicted: Sequence[int], forced: Sequence[bool],
                  reference: Sequence[int]) -> Optional[float]:
    """Match ratio over autonomous (not teacher-forced) steps; None if there are none."""
    steps = [t for t, f in enumerate(forced) if not f]
    if not steps:
        return None
    hits = sum(1 for t in steps if t < len(reference) and predicted[t] == reference[t])
    return hits / len(steps)


def episode_return(steps: Sequence[StepReward], outcome: float) -> float:
    return sum(s.total for s in steps) + outcome


def score_episode(predicted: Sequence[int], forced: Sequence[bool], reference: Sequence[int],
                  sims: Sequence[SimResult], categories: Mapping[int, str],
                  cfg: RewardConfig = RewardConfig()) -> EpisodeScore:
    """Score an executed tool sequence against its reference."""
    steps = []
    prev_c = prev_r = None
    for t, (tool, sim) in enumerate(zip(predicted, sims)):
        ref = reference[t] if t < len(reference) else None
        steps.append(StepReward(intent_reward(tool, ref, prev_c, prev_r, categories), exec_reward(sim)))
        prev_c, prev_r = tool, ref
    completed = bool(sims) and sims[-1].is_complete
    q = match_ratio(predicted, reference)
    outcome = outcome_bonus(completed, q, cfg)
    return EpisodeScore(steps, outcome, episode_return(steps, outcome), q,
                        model_quality(predicted, forced, reference), completed)
