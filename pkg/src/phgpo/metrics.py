"""Evaluation and diagnostics: match ratio, next-tool accuracy, exploration diversity,
first-success tracking and pheromone heatmap export."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .pheromone import PheromoneStore, tau_lookups
from .policy import LinearSoftmaxPolicy, State
from .rewards import match_ratio
from .sampling import (SamplerConfig, greedy_tool, guided_distribution, guided_tool_sample,
                       normalized_entropy)

MODES = ("reference", "model")


@dataclass
class EvalReport:
    match_ratio_mean: float
    tool_acc: float
    diversity: float
    episodes: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "match_ratio_mean": self.match_ratio_mean,
            "tool_acc": self.tool_acc,
            "diversity": self.diversity,
            "episodes": self.episodes,
        }


@dataclass(frozen=True)
class DiscoveryRecord:
    task_id: str
    first_success_step: Optional[int]


def _lookups(store, task, w, graph):
    n_inv = [len(s) for s in graph.invocation_sets] if graph is not None else None
    return tau_lookups(store, task.embedding, w, n_inv or [])


def greedy_trajectory(policy: LinearSoftmaxPolicy, store: Optional[PheromoneStore], episode, task,
                      scfg: SamplerConfig, beta: float, w: float, graph=None) -> List[int]:
    """Autonomous argmax rollout for as many steps as the reference has."""
    scfg = replace(scfg, beta=beta)
    tool_fn, _ = _lookups(store, task, w, graph)
    last = prev = 0
    out = []
    for _ in episode.reference:
        tool = greedy_tool(policy.logits(State(task.bucket, last, prev)), last, tool_fn, scfg)
        out.append(tool)
        prev, last = last, tool
    return out


def episode_next_tool_hits(policy, store, episode, task, scfg, beta, w, graph=None,
                           mode: str = "reference") -> List[bool]:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    scfg = replace(scfg, beta=beta)
    tool_fn, _ = _lookups(store, task, w, graph)
    hits = []
    last = prev = 0
    for target in episode.tools:
        pred = greedy_tool(policy.logits(State(task.bucket, last, prev)), last, tool_fn, scfg)
        hits.append(pred == target)
        nxt = target if mode == "reference" else pred
        prev, last = last, nxt
    return hits


def eval_next_tool_accuracy(policy, store, episodes, tasks, scfg: SamplerConfig, beta: float = 0.0,
                            w: float = 0.0, graph=None, mode: str = "reference") -> float:
    """Fraction of reference steps where the argmax next tool is correct.

    `reference` conditions each step on the true prefix; `model` on the
    model's own greedy prefix. Pass store=None to score the bare policy.
    """
    hits = []
    for ep in episodes:
        hits.extend(episode_next_tool_hits(policy, store, ep, tasks[ep.task_id], scfg, beta, w,
                                           graph, mode))
    if not hits:
        raise ValueError("no episodes to evaluate")
    return sum(hits) / len(hits)


def sampled_trajectory(policy: LinearSoftmaxPolicy, store: Optional[PheromoneStore], episode, task,
                       scfg: SamplerConfig, beta: float, w: float, rng: np.random.Generator,
                       graph=None) -> List[int]:
    """Autonomous rollout drawn from the guided distribution (no teacher forcing)."""
    scfg = replace(scfg, beta=beta)
    tool_fn, _ = _lookups(store, task, w, graph)
    last = prev = 0
    out = []
    for _ in episode.reference:
        tool, _, _ = guided_tool_sample(policy.logits(State(task.bucket, last, prev)), last,
                                        tool_fn, scfg, rng)
        out.append(tool)
        prev, last = last, tool
    return out


def eval_match_ratio(policy, store, episodes, tasks, scfg: SamplerConfig, beta: float = 0.0,
                     w: float = 0.0, graph=None, samples: int = 0, seed: int = 0) -> float:
    """Mean match ratio of autonomous rollouts.

    samples=0 decodes greedily; otherwise each episode is scored by the mean
    over `samples` sampled rollouts, drawn from a stream seeded by (seed,
    episode position) so the result is reproducible.
    """
    if not episodes:
        raise ValueError("no episodes to evaluate")
    return float(np.mean(episode_match_ratios(policy, store, episodes, tasks, scfg, beta, w, graph,
                                              samples, seed)))


def episode_match_ratios(policy, store, episodes, tasks, scfg: SamplerConfig, beta: float = 0.0,
                         w: float = 0.0, graph=None, samples: int = 0, seed: int = 0) -> List[float]:
    out = []
    for n, ep in enumerate(episodes):
        task = tasks[ep.task_id]
        if samples <= 0:
            out.append(match_ratio(greedy_trajectory(policy, store, ep, task, scfg, beta, w, graph),
                                   ep.tools))
            continue
        rng = np.random.default_rng([seed, n, 3])
        out.append(float(np.mean([
            match_ratio(sampled_trajectory(policy, store, ep, task, scfg, beta, w, rng, graph),
                        ep.tools) for _ in range(samples)])))
    return out


def reference_states(episodes, tasks) -> List[Tuple[State, np.ndarray]]:
    """Every prefix state along the reference trajectories, with its task embedding."""
    out = []
    for ep in episodes:
        task = tasks[ep.task_id]
        last = prev = 0
        for target in ep.tools:
            out.append((State(task.bucket, last, prev), task.embedding))
            prev, last = last, target
    return out


def exploration_diversity(policy, store: Optional[PheromoneStore],
                          states: Sequence[Tuple[State, np.ndarray]], scfg: SamplerConfig,
                          beta: float, w: float = 0.0) -> float:
    """Mean normalised entropy of the sampling distribution over the given states."""
    if not states:
        raise ValueError("no states to evaluate")
    scfg = replace(scfg, beta=beta)
    vals = []
    fns = {}
    for state, e_x in states:
        key = id(e_x)
        if key not in fns:
            fns[key] = tau_lookups(store, e_x, w, [])[0]
        dist = guided_distribution(policy.logits(state), state.last_tool, fns[key], scfg)
        vals.append(normalized_entropy(dist))
    return float(np.mean(vals))


def first_success_tracking(quality_log: Iterable[Sequence], task_ids: Sequence[str],
                           gate: float = 0.6) -> List[DiscoveryRecord]:
    """First step at which each task reached quality >= gate (None if never).

    `quality_log` holds (step, task_id, q) entries in step order.
    """
    first: Dict[str, int] = {}
    for step, task_id, q in quality_log:
        if q >= gate and task_id not in first:
            first[task_id] = int(step)
    return [DiscoveryRecord(t, first.get(t)) for t in task_ids]


def mean_first_success(records: Sequence[DiscoveryRecord], censor: int) -> float:
    """Mean discovery step, counting never-discovered tasks at `censor`."""
    if not records:
        raise ValueError("no records")
    return float(np.mean([censor if r.first_success_step is None else r.first_success_step
                          for r in records]))


def coverage_curve(records: Sequence[DiscoveryRecord], steps: Sequence[int]) -> List[float]:
    found = sorted(r.first_success_step for r in records if r.first_success_step is not None)
    n = len(records)
    return [float(np.searchsorted(found, s, side="right")) / n for s in steps]


# ------------------------------------------------------------------ heatmap

def heatmap_matrix(store: PheromoneStore, e_x: Optional[np.ndarray], w: float,
                   tools: Sequence[int]) -> np.ndarray:
    return np.array([[store.fused_tool(i, j, e_x, w).value for j in tools] for i in tools])


def export_heatmap(store: PheromoneStore, e_x: Optional[np.ndarray], w: float,
                   tools: Sequence[int], names: Sequence[str], chain: Sequence[int],
                   csv_path, edges_path=None) -> np.ndarray:
    """Write the fused tool-transition matrix over `tools` as CSV.

    The optional sidecar lists every (src, dst, tau, on_chain) entry, flagging
    consecutive pairs of `chain`.
    """
    mat = heatmap_matrix(store, e_x, w, tools)
    labels = [names[t] for t in tools]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow([""] + labels)
        for label, row in zip(labels, mat):
            wr.writerow([label] + [repr(float(v)) for v in row])
    if edges_path is not None:
        on = chain_edges(chain)
        with open(edges_path, "w", newline="", encoding="utf-8") as f:
            wr = csv.writer(f)
            wr.writerow(["src", "dst", "tau", "on_chain"])
            for a, i in enumerate(tools):
                for b, j in enumerate(tools):
                    wr.writerow([names[i], names[j], repr(float(mat[a, b])), int((i, j) in on)])
    return mat


def read_heatmap(csv_path) -> Tuple[List[str], np.ndarray]:
    with open(csv_path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    labels = rows[0][1:]
    mat = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    return labels, mat


def chain_edges(chain: Sequence[int]) -> Set[Tuple[int, int]]:
    return set(zip(chain, chain[1:]))


def chain_concentration(mat: np.ndarray, tools: Sequence[int], chain: Sequence[int]) -> float:
    """Mean heatmap value on chain edges divided by the mean over all other entries."""
    on = chain_edges(chain)
    mask = np.array([[(i, j) in on for j in tools] for i in tools])
    if not mask.any() or mask.all():
        raise ValueError("chain edges must be a proper subset of the heatmap")
    return float(mat[mask].mean() / mat[~mask].mean())
