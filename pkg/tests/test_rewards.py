import pytest

from phgpo.environment import SimResult
from phgpo.rewards import (RewardConfig, StepReward, episode_return, exec_reward, intent_reward,
                           match_ratio, model_quality, outcome_bonus, score_episode)

OK = SimResult("ok", False, False)
ERR = SimResult("ERROR", True, False)
DONE = SimResult("ok", False, True)
CATS = {0: "s", 1: "web", 2: "web", 3: "file", 4: "file"}


def test_step_reward_cases():
    assert StepReward(intent_reward(1, 1, None, None, CATS), exec_reward(OK)).total == 1.0
    assert StepReward(intent_reward(2, 1, None, None, CATS), exec_reward(ERR)).total == pytest.approx(-0.3)
    assert intent_reward(3, 1, None, None, CATS) == 0.0
    assert intent_reward(3, None, None, None, CATS) == 0.0


def test_recovery_bonus():
    r = intent_reward(3, 3, prev_chosen=2, prev_reference=1, categories=CATS)
    assert r == pytest.approx(0.6)
    assert r + exec_reward(OK) == pytest.approx(1.1)
    assert intent_reward(3, 3, prev_chosen=1, prev_reference=1, categories=CATS) == 0.5


def test_outcome_and_match_ratio():
    assert outcome_bonus(True, 0.3) == 2.0
    assert outcome_bonus(False, 0.25) == 0.25
    assert outcome_bonus(False, 0.5, RewardConfig(partial_scale=2.0)) == 1.0
    assert match_ratio([1, 2, 3], [1, 9, 3, 4]) == 0.5
    assert match_ratio([1, 2, 3, 4, 5], [1]) == 1.0
    with pytest.raises(ValueError):
        match_ratio([1], [])


def test_model_quality_ignores_forced_steps():
    assert model_quality([1, 2, 3], [True, False, False], [1, 2, 4]) == 0.5
    assert model_quality([1, 2], [True, True], [1, 2]) is None


@pytest.mark.parametrize("T", [1, 3, 7])
def test_perfect_episode_return(T):
    ref = [1 + (t % 4) for t in range(T)]
    sims = [OK] * (T - 1) + [DONE]
    s = score_episode(ref, [False] * T, ref, sims, CATS)
    assert s.completed and s.q == 1.0
    assert s.return_R == T + 2.0


def test_partial_episode_return():
    s = score_episode([1, 3], [False, False], [1, 2, 3], [OK, ERR], CATS)
    assert not s.completed
    assert s.q == pytest.approx(1 / 3)
    assert s.return_R == pytest.approx(1.0 + (0.0 - 0.5) + 1 / 3)
    assert episode_return(s.step_rewards, s.outcome) == s.return_R
