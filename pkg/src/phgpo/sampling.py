"""Pheromone-guided next-tool sampling, invocation sampling and teacher-forced mixing."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .policy import log_softmax
from .tool_graph import InvocationId

# (prev_tool, candidate tools) -> fused tool-transition pheromone per candidate
ToolTauFn = Callable[[int, np.ndarray], np.ndarray]
# tool -> fused invocation pheromone per pattern of that tool
ArgTauFn = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class SamplerConfig:
    top_k: int = 20
    temperature: float = 0.7
    epsilon_greedy: float = 0.05
    beta: float = 0.0
    beta_max: float = 0.8
    tau_min: float = 0.05
    tau_max: float = 5.0

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.epsilon_greedy <= 1.0:
            raise ValueError("epsilon_greedy must be in [0, 1]")
        if self.beta < 0 or self.beta_max < 0:
            raise ValueError("beta must be non-negative")
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")


@dataclass(frozen=True)
class StepChoice:
    tool: int
    invocation: InvocationId
    behavior_logprob: float
    policy_logprob_old: float
    teacher_forced: bool
    entropy: float = 0.0  # normalised entropy of the guided distribution at this step


def normalized_entropy(p: np.ndarray) -> float:
    """H(p) / log(len(p)), clamped to [0, 1]."""
    n = p.shape[0]
    if n < 2:
        return 0.0
    nz = p[p > 0]
    h = -float(np.sum(nz * np.log(nz)))
    return min(1.0, max(0.0, h / math.log(n)))


def top_k_support(policy_logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits, ties broken by lower tool index."""
    return np.argsort(-policy_logits, kind="stable")[:k]


def guided_scores(policy_logits: np.ndarray, prev_tool: int, tool_tau_fn: Optional[ToolTauFn],
                  cfg: SamplerConfig, support: np.ndarray,
                  logp: Optional[np.ndarray] = None) -> np.ndarray:
    """log pi / T + beta * log clip(tau) over the support (unnormalised)."""
    if logp is None:
        logp = log_softmax(policy_logits)
    scores = logp[support] / cfg.temperature
    if tool_tau_fn is not None:
        tau = np.clip(np.asarray(tool_tau_fn(prev_tool, support), dtype=float),
                      cfg.tau_min, cfg.tau_max)
        scores = scores + cfg.beta * np.log(tau)
    return scores


def guided_distribution(policy_logits: np.ndarray, prev_tool: int,
                        tool_tau_fn: Optional[ToolTauFn], cfg: SamplerConfig,
                        epsilon: Optional[float] = None,
                        logp: Optional[np.ndarray] = None) -> np.ndarray:
    """Full-length sampling distribution over tools (zero outside the top-K support)."""
    if not np.isfinite(policy_logits).all():
        raise ValueError("non-finite policy logits")
    support = top_k_support(policy_logits, cfg.top_k)
    p = np.exp(log_softmax(guided_scores(policy_logits, prev_tool, tool_tau_fn, cfg, support, logp)))
    eps = cfg.epsilon_greedy if epsilon is None else epsilon
    if eps > 0.0:
        p = (1.0 - eps) * p + eps / support.shape[0]
    dist = np.zeros(policy_logits.shape[0])
    dist[support] = p
    return dist


def cdf_index(dist: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF lookup of uniforms u in [0, 1) against an unnormalised distribution."""
    cdf = np.cumsum(dist)
    idx = np.minimum(np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="right"),
                     dist.shape[0] - 1)
    # a draw past the last positive bin (rounding at the top edge) falls back to that bin
    last = int(np.flatnonzero(dist)[-1])
    return np.minimum(idx, last)


def _draw(dist: np.ndarray, rng: np.random.Generator) -> int:
    return int(cdf_index(dist, rng.random()))


def draw_many(dist: np.ndarray, rng: np.random.Generator, n: int) -> np.ndarray:
    """n independent draws with the same lookup `_draw` uses."""
    return cdf_index(dist, rng.random(n))


def guided_tool_sample(policy_logits: np.ndarray, prev_tool: int,
                       tool_tau_fn: Optional[ToolTauFn], cfg: SamplerConfig,
                       rng: np.random.Generator) -> Tuple[int, float, np.ndarray]:
    """Returns (tool, log-prob under the distribution actually used, that distribution)."""
    dist = guided_distribution(policy_logits, prev_tool, tool_tau_fn, cfg)
    tool = _draw(dist, rng)
    return tool, float(np.log(dist[tool])), dist


def arg_distribution(taus: Sequence[float], tau_min: float = 0.05, tau_max: float = 5.0) -> np.ndarray:
    taus = np.clip(np.asarray(taus, dtype=float), tau_min, tau_max)
    if taus.size == 0:
        raise ValueError("empty invocation set")
    return taus / taus.sum()


def arg_sample(tool: int, arg_tau_fn: ArgTauFn, rng: Optional[np.random.Generator],
               greedy: bool = False, tau_min: float = 0.05, tau_max: float = 5.0) -> InvocationId:
    p = arg_distribution(arg_tau_fn(tool), tau_min, tau_max)
    if p.size == 1:
        return InvocationId(tool, 0)
    if greedy:
        return InvocationId(tool, int(np.argmax(p)))
    return InvocationId(tool, _draw(p, rng))


def mixed_step(policy_logits: np.ndarray, prev_tool: int, reference: Optional[InvocationId],
               p_tf: float, tool_tau_fn: Optional[ToolTauFn], arg_tau_fn: ArgTauFn,
               cfg: SamplerConfig, rng: np.random.Generator) -> StepChoice:
    """Execute the reference action with probability p_tf, else sample a guided step.

    The behaviour log-prob is that of the full mixture
    p_tf * [a = a*] + (1 - p_tf) * guided(a). Past the end of the reference the
    step falls back to pure guided sampling.
    """
    if not 0.0 <= p_tf <= 1.0:
        raise ValueError("p_tf must be in [0, 1]")
    if reference is None:
        p_tf = 0.0
    logp = log_softmax(policy_logits)
    dist = guided_distribution(policy_logits, prev_tool, tool_tau_fn, cfg, logp=logp)
    if p_tf >= 1.0:
        forced = True
    elif p_tf <= 0.0:
        forced = False
    else:
        forced = bool(rng.random() < p_tf)
    if forced:
        tool, inv = reference.tool, reference
    else:
        tool = _draw(dist, rng)
        inv = arg_sample(tool, arg_tau_fn, rng, tau_min=cfg.tau_min, tau_max=cfg.tau_max)
    mass = (1.0 - p_tf) * dist[tool]
    if reference is not None and tool == reference.tool:
        mass += p_tf
    return StepChoice(tool, inv, float(np.log(mass)), float(logp[tool]), forced,
                      normalized_entropy(dist))


def full_pheromone_step(policy_logits: np.ndarray, prev_tool: int, tool_tau_fn: Optional[ToolTauFn],
                        arg_tau_fn: ArgTauFn, cfg: SamplerConfig,
                        rng: np.random.Generator) -> StepChoice:
    """Autonomous step with the prior at its scheduled ceiling."""
    cfg = replace(cfg, beta=cfg.beta_max)
    return mixed_step(policy_logits, prev_tool, None, 0.0, tool_tau_fn, arg_tau_fn, cfg, rng)


def greedy_tool(policy_logits: np.ndarray, prev_tool: int, tool_tau_fn: Optional[ToolTauFn],
                cfg: SamplerConfig) -> int:
    """Argmax of the guided distribution (no epsilon); ties go to the lower index."""
    support = top_k_support(policy_logits, cfg.top_k)
    scores = guided_scores(policy_logits, prev_tool, tool_tau_fn, cfg, support)
    best = np.flatnonzero(scores == scores.max())
    return int(support[best].min())
