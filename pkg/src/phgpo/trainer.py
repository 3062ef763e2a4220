"""Progressive training pipeline: supervised warm-up, teacher-forced horizon curriculum
with group-relative policy optimisation, pheromone updates from verified rollouts, and
a final fully autonomous phase."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .embedding import task_context
from .environment import Episode, SimResult, Simulator
from .metrics import (eval_match_ratio, eval_next_tool_accuracy, exploration_diversity,
                      reference_states)
from .pheromone import TOOL, PheromoneParams, PheromoneStore, tau_lookups
from .policy import (LinearSoftmaxPolicy, State, apply_update, entropy_logit_grad, pg_logit_grad,
                     sl_logit_grad)
from .rewards import EpisodeScore, RewardConfig, score_episode
from .sampling import SamplerConfig, StepChoice, mixed_step
from .tool_graph import InvocationId, ToolGraph

log = logging.getLogger(__name__)

ADVANTAGE_MODES = ("grpo", "rloo", "ppo")


@dataclass
class TrainerConfig:
    group_size: int = 5
    clip_eps: float = 0.2
    entropy_coef: float = 0.005
    advantage_eps: float = 1e-8
    advantage_mode: str = "grpo"
    elite_gate: float = 0.3
    q_gate: float = 0.6
    sl_lr: float = 0.1
    pg_lr: float = 0.003
    warmup_epochs: int = 1
    stage_horizons: List[int] = field(default_factory=lambda: [5, 10, 15, 20])
    epochs_per_stage: int = 2
    final_epochs: int = 4
    p_tf_start: float = 1.0
    p_tf_final: float = 0.15
    beta_max: float = 0.8
    beta_ramp_frac: float = 0.3
    beta_fixed: Optional[float] = None
    w_max: float = 0.5
    use_pheromone: bool = True
    pheromone_updates: bool = True
    freeze_after_curriculum: bool = False
    final_rho: Optional[float] = None
    ppo_decay: float = 0.9
    n_buckets: int = 32
    embed_dim: int = 64
    threads: int = 1

    def __post_init__(self):
        if self.advantage_mode not in ADVANTAGE_MODES:
            raise ValueError(f"advantage_mode must be one of {ADVANTAGE_MODES}")
        if self.group_size < 2 and self.advantage_mode != "ppo":
            raise ValueError("group_size must be >= 2 for grpo/rloo")
        if self.group_size < 1:
            raise ValueError("group_size must be positive")
        if not self.stage_horizons or any(b < a for a, b in zip(self.stage_horizons,
                                                                 self.stage_horizons[1:])):
            raise ValueError("stage_horizons must be non-empty and nondecreasing")
        for name in ("clip_eps", "sl_lr", "pg_lr"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("entropy_coef", "advantage_eps", "beta_max", "w_max", "warmup_epochs",
                     "epochs_per_stage", "final_epochs"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.p_tf_final <= self.p_tf_start <= 1.0:
            raise ValueError("need 0 <= p_tf_final <= p_tf_start <= 1")
        if self.w_max > 1.0:
            raise ValueError("w_max must be <= 1")
        if self.beta_fixed is not None and self.beta_fixed < 0:
            raise ValueError("beta_fixed must be non-negative")

    @property
    def curriculum_epochs(self) -> int:
        return len(self.stage_horizons) * self.epochs_per_stage

    @property
    def total_epochs(self) -> int:
        return self.curriculum_epochs + self.final_epochs


@dataclass(frozen=True)
class ScheduleState:
    epoch: int  # 0-based index over RL epochs
    stage: int  # 1..S for curriculum stages, S+1 for the final phase
    horizon: int
    p_tf: float
    lam: float
    beta: float
    w: float


def schedule(cfg: TrainerConfig, epoch: int) -> ScheduleState:
    if not 0 <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    n_stages, c = len(cfg.stage_horizons), cfg.curriculum_epochs
    if epoch < c:
        stage = epoch // cfg.epochs_per_stage + 1
        horizon = cfg.stage_horizons[stage - 1]
        frac = epoch / (c - 1) if c > 1 else 1.0
        p_tf = cfg.p_tf_start + (cfg.p_tf_final - cfg.p_tf_start) * frac
        span = cfg.p_tf_start - cfg.p_tf_final
        lam = (p_tf - cfg.p_tf_final) / span if span > 0 else 0.0
    else:
        stage, horizon, p_tf, lam = n_stages + 1, cfg.stage_horizons[-1], 0.0, 0.0
    ramp = max(1, round(cfg.beta_ramp_frac * cfg.total_epochs))
    progress = min(1.0, epoch / ramp)
    if not cfg.use_pheromone:
        beta = w = 0.0
    else:
        beta = cfg.beta_fixed if cfg.beta_fixed is not None else cfg.beta_max * progress
        w = cfg.w_max * progress
    return ScheduleState(epoch, stage, horizon, p_tf, lam, beta, w)


# ------------------------------------------------------------------ rollouts

@dataclass
class Rollout:
    choices: List[StepChoice]
    states: List[State]
    sims: List[SimResult]
    score: EpisodeScore
    p_tf: float

    @property
    def tools(self) -> List[int]:
        return [c.tool for c in self.choices]

    @property
    def invocations(self) -> List[InvocationId]:
        return [c.invocation for c in self.choices]


@dataclass
class RolloutGroup:
    episode: Episode
    rollouts: List[Rollout]
    policy_version: int
    store_version: int

    @property
    def returns(self) -> List[float]:
        return [r.score.return_R for r in self.rollouts]


@dataclass
class TaskInfo:
    embedding: np.ndarray
    bucket: int


def rollout_seed(run_seed: int, step: int, m: int) -> np.random.Generator:
    """Independent stream per (run, global step, rollout index)."""
    return np.random.default_rng(np.random.SeedSequence([run_seed, step, m]))


def run_rollout(episode: Episode, task: TaskInfo, policy: LinearSoftmaxPolicy, tool_fn, arg_fn,
                sched: ScheduleState, scfg: SamplerConfig, sim: Simulator, graph: ToolGraph,
                rng: np.random.Generator, reward_cfg: RewardConfig) -> Rollout:
    ref = episode.reference
    horizon = min(sched.horizon, len(ref))
    choices, states, sims, history = [], [], [], []
    last = prev = 0
    for t in range(horizon):
        state = State(task.bucket, last, prev)
        ch = mixed_step(policy.logits(state), last, ref[t], sched.p_tf, tool_fn, arg_fn, scfg, rng)
        res = sim.simulate(ch.tool, ch.invocation, episode, history)
        choices.append(ch)
        states.append(state)
        sims.append(res)
        history.append(ch.invocation)
        if res.is_complete:
            break
        prev, last = last, ch.tool
    tools = [c.tool for c in choices]
    score = score_episode(tools, [c.teacher_forced for c in choices], episode.tools, sims,
                          graph.categories, reward_cfg)
    return Rollout(choices, states, sims, score, sched.p_tf)


def rollout_group(episode: Episode, task: TaskInfo, policy: LinearSoftmaxPolicy,
                  store: Optional[PheromoneStore], sched: ScheduleState, cfg: TrainerConfig,
                  scfg: SamplerConfig, sim: Simulator, graph: ToolGraph, run_seed: int, step: int,
                  reward_cfg: RewardConfig = RewardConfig(), pool=None) -> RolloutGroup:
    """M rollouts of one episode against frozen policy and pheromone snapshots."""
    scfg = replace(scfg, beta=sched.beta)
    n_inv = [len(s) for s in graph.invocation_sets]
    tool_fn, arg_fn = tau_lookups(store if cfg.use_pheromone else None, task.embedding,
                                  sched.w, n_inv)
    if not cfg.use_pheromone:
        tool_fn = None
    policy_version = policy.version
    store_version = store.version if store is not None else -1

    def one(m: int) -> Rollout:
        rng = rollout_seed(run_seed, step, m)
        return run_rollout(episode, task, policy, tool_fn, arg_fn, sched, scfg, sim, graph, rng,
                           reward_cfg)

    if pool is None:
        rollouts = [one(m) for m in range(cfg.group_size)]
    else:
        rollouts = list(pool.map(one, range(cfg.group_size)))
    assert policy.version == policy_version, "policy changed during rollouts"
    if store is not None:
        assert store.version == store_version, "pheromone changed during rollouts"
    return RolloutGroup(episode, rollouts, policy_version, store_version)


# ---------------------------------------------------------------- advantages

def advantages(returns: Sequence[float], mode: str = "grpo", eps: float = 1e-8,
               baseline: Optional[float] = None) -> List[float]:
    r = np.asarray(returns, dtype=float)
    m = r.shape[0]
    if mode == "grpo":
        if m < 2:
            raise ValueError("grpo needs at least two returns")
        return ((r - r.mean()) / (r.std() + eps)).tolist()
    if mode == "rloo":
        if m < 2:
            raise ValueError("rloo needs at least two returns")
        return (r - (r.sum() - r) / (m - 1)).tolist()
    if mode == "ppo":
        b = r.mean() if baseline is None else baseline
        return (r - b).tolist()
    raise ValueError(f"unknown advantage mode {mode!r}; expected one of {ADVANTAGE_MODES}")


def ema_baseline(baseline: Optional[float], returns: Sequence[float], decay: float = 0.9) -> float:
    mean = float(np.mean(returns))
    return mean if baseline is None else decay * baseline + (1.0 - decay) * mean


# ------------------------------------------------------------------ updates

@dataclass
class UpdateStats:
    loss: float
    n_steps: int
    max_ratio_dev: float


def mixed_gradient(policy: LinearSoftmaxPolicy, group: RolloutGroup, adv: Sequence[float],
                   lam: float, cfg: TrainerConfig):
    """Gradient of lam*SL + (1-lam)*PG - gamma*H summed over every step of every rollout."""
    grad = np.zeros_like(policy.weights)
    ref = group.episode.tools
    total, n, dev = 0.0, 0, 0.0
    for ro, a in zip(group.rollouts, adv):
        for t, (state, ch) in enumerate(zip(ro.states, ro.choices)):
            logp = policy.log_probs(state)
            g = np.zeros(policy.n_tools)
            if lam > 0.0 and t < len(ref):
                loss, gs = sl_logit_grad(logp, ref[t])
                total += lam * loss
                g += lam * gs
            if lam < 1.0:
                loss, gp = pg_logit_grad(logp, ch.policy_logprob_old, ch.tool, a, cfg.clip_eps)
                total += (1.0 - lam) * loss
                g += (1.0 - lam) * gp
                dev = max(dev, abs(float(np.exp(logp[ch.tool] - ch.policy_logprob_old)) - 1.0))
            if cfg.entropy_coef > 0.0:
                h, gh = entropy_logit_grad(logp)
                total -= cfg.entropy_coef * h
                g -= cfg.entropy_coef * gh
            for row in policy.rows(state):
                grad[row] += g
            n += 1
    return total, grad, UpdateStats(total, n, dev)


def update_policy(policy: LinearSoftmaxPolicy, group: RolloutGroup, adv: Sequence[float],
                  sched: ScheduleState, cfg: TrainerConfig) -> UpdateStats:
    _, grad, stats = mixed_gradient(policy, group, adv, sched.lam, cfg)
    if stats.n_steps:
        apply_update(policy, grad, cfg.pg_lr)
    return stats


def passes_gate(ro: Rollout, cfg: TrainerConfig) -> bool:
    return (ro.score.completed or ro.score.q >= cfg.q_gate) and ro.p_tf < cfg.elite_gate


def update_pheromone(store: PheromoneStore, group: RolloutGroup, e_x: np.ndarray,
                     cfg: TrainerConfig, audit: Optional[Dict[str, int]] = None) -> int:
    """Deposit from gated rollouts; returns how many passed. Evaporation is per epoch."""
    passed = 0
    for ro in group.rollouts:
        ok = passes_gate(ro, cfg)
        if audit is not None:
            audit["passed" if ok else "rejected"] = audit.get("passed" if ok else "rejected", 0) + 1
        if ok:
            store.record_success(ro.invocations, e_x, ro.score.q)
            passed += 1
    return passed


# ------------------------------------------------------------------- warm-up

def warmup(policy: LinearSoftmaxPolicy, episodes: Sequence[Episode], tasks: Dict[str, TaskInfo],
           epochs: int, lr: float, seed: int = 0) -> List[float]:
    """Supervised next-tool training on reference trajectories.

    One SGD step per episode (mean cross-entropy over its steps), episodes in a
    seeded order. Returns the mean loss seen in each epoch.
    """
    losses = []
    for ep_i in range(epochs):
        order = np.random.default_rng([seed, ep_i, 1]).permutation(len(episodes))
        total, count = 0.0, 0
        for i in order:
            ep = episodes[i]
            task = tasks[ep.task_id]
            grad = np.zeros_like(policy.weights)
            last = prev = 0
            for target in ep.tools:
                state = State(task.bucket, last, prev)
                loss, g = sl_logit_grad(policy.log_probs(state), target)
                for row in policy.rows(state):
                    grad[row] += g
                total += loss
                count += 1
                prev, last = last, target
            apply_update(policy, grad / len(ep.tools), lr)
        losses.append(total / max(count, 1))
    return losses


def sl_dataset_loss(policy: LinearSoftmaxPolicy, episodes: Sequence[Episode],
                    tasks: Dict[str, TaskInfo]) -> float:
    total, count = 0.0, 0
    for ep in episodes:
        task = tasks[ep.task_id]
        last = prev = 0
        for target in ep.tools:
            total -= float(policy.log_probs(State(task.bucket, last, prev))[target])
            count += 1
            prev, last = last, target
    return total / max(count, 1)


# ------------------------------------------------------------------ pipeline

CHECKPOINT_VERSION = 1


@dataclass
class TrainState:
    """Everything needed to continue a run exactly from an epoch boundary."""
    policy: LinearSoftmaxPolicy
    store: PheromoneStore
    epoch: int = 0  # RL epochs completed
    step: int = 0  # groups processed
    warmup_losses: List[float] = field(default_factory=list)
    ppo_baselines: Dict[str, float] = field(default_factory=dict)
    quality_log: List[list] = field(default_factory=list)  # [step, task_id, best eligible q]
    audit: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format_version": CHECKPOINT_VERSION,
            "epoch": self.epoch,
            "step": self.step,
            "policy": self.policy.to_dict(),
            "pheromone": self.store.to_dict(),
            "warmup_losses": list(self.warmup_losses),
            "ppo_baselines": dict(sorted(self.ppo_baselines.items())),
            "quality_log": [list(x) for x in self.quality_log],
            "audit": dict(sorted(self.audit.items())),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainState":
        if data.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint format version {data.get('format_version')}"
                             f" (expected {CHECKPOINT_VERSION})")
        return cls(
            policy=LinearSoftmaxPolicy.from_dict(data["policy"]),
            store=PheromoneStore.from_dict(data["pheromone"]),
            epoch=int(data["epoch"]),
            step=int(data["step"]),
            warmup_losses=[float(x) for x in data["warmup_losses"]],
            ppo_baselines={k: float(v) for k, v in data["ppo_baselines"].items()},
            quality_log=[[int(s), str(t), float(q)] for s, t, q in data["quality_log"]],
            audit={k: int(v) for k, v in data["audit"].items()},
        )


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, shortest round-trip floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def save_checkpoint(state: TrainState, path) -> None:
    Path(path).write_text(dumps(state.to_dict()) + "\n")


def load_checkpoint(path) -> TrainState:
    return TrainState.from_dict(json.loads(Path(path).read_text()))


class Trainer:
    def __init__(self, graph: ToolGraph, train: Sequence[Episode], val: Sequence[Episode],
                 cfg: TrainerConfig, scfg: SamplerConfig, pcfg: PheromoneParams, sim: Simulator,
                 seed: int = 0, reward_cfg: RewardConfig = RewardConfig()):
        if not train:
            raise ValueError("empty training split")
        self.graph = graph
        self.train = list(train)
        self.val = list(val)
        self.cfg = cfg
        self.scfg = replace(scfg, beta_max=cfg.beta_max, tau_min=pcfg.tau_min, tau_max=pcfg.tau_max)
        self.pcfg = pcfg
        self.sim = sim
        self.seed = seed
        self.reward_cfg = reward_cfg
        self.tasks = {ep.task_id: TaskInfo(*task_context(ep.text, cfg.embed_dim, cfg.n_buckets))
                      for ep in list(train) + list(val)}
        self.val_states = reference_states(self.val, self.tasks)
        self.metrics: List[dict] = []

    def initial_state(self) -> TrainState:
        return TrainState(LinearSoftmaxPolicy(self.graph.n_tools, self.cfg.n_buckets),
                          PheromoneStore(self.pcfg))

    def task(self, ep: Episode) -> TaskInfo:
        t = self.tasks.get(ep.task_id)
        if t is None:
            t = self.tasks[ep.task_id] = TaskInfo(*task_context(ep.text, self.cfg.embed_dim,
                                                                self.cfg.n_buckets))
        return t

    def do_warmup(self, st: TrainState) -> None:
        st.warmup_losses = warmup(st.policy, self.train, self.tasks, self.cfg.warmup_epochs,
                                  self.cfg.sl_lr, self.seed)

    def run_epoch(self, st: TrainState, pool=None) -> dict:
        cfg = self.cfg
        sched = schedule(cfg, st.epoch)
        store = st.store
        frozen = cfg.freeze_after_curriculum and st.epoch >= cfg.curriculum_epochs
        updates_on = cfg.use_pheromone and cfg.pheromone_updates and not frozen
        order = np.random.default_rng([self.seed, st.epoch, 2]).permutation(len(self.train))
        returns, quals, ents = [], [], []
        for i in order:
            ep = self.train[i]
            task = self.tasks[ep.task_id]
            group = rollout_group(ep, task, st.policy, store, sched, cfg, self.scfg, self.sim,
                                  self.graph, self.seed, st.step, self.reward_cfg, pool)
            rs = group.returns
            if cfg.advantage_mode == "ppo":
                b = st.ppo_baselines.get(ep.task_id)
                adv = advantages(rs, "ppo", cfg.advantage_eps, b)
                st.ppo_baselines[ep.task_id] = ema_baseline(b, rs, cfg.ppo_decay)
            else:
                adv = advantages(rs, cfg.advantage_mode, cfg.advantage_eps)
            update_policy(st.policy, group, adv, sched, cfg)
            if updates_on:
                update_pheromone(store, group, task.embedding, cfg, st.audit)
            eligible = [r.score.q for r in group.rollouts if r.p_tf < cfg.elite_gate]
            if eligible:
                st.quality_log.append([st.step, ep.task_id, max(eligible)])
            returns.extend(rs)
            quals.extend(r.score.q for r in group.rollouts)
            ents.extend(c.entropy for r in group.rollouts for c in r.choices)
            st.step += 1
        if updates_on:
            params = self.pcfg
            if cfg.final_rho is not None and st.epoch >= cfg.curriculum_epochs:
                params = replace(params, rho=cfg.final_rho)
            store.evaporate_all(params)
        st.epoch += 1
        return self.epoch_record(st, sched, returns, quals, ents)

    def epoch_record(self, st: TrainState, sched: ScheduleState, returns, quals, ents) -> dict:
        """Per-epoch log line. `diversity` is scored on validation reference prefixes;
        `rollout_diversity` averages the sampling entropy over the epoch's rollout steps."""
        store = st.store if self.cfg.use_pheromone else None
        acc = eval_next_tool_accuracy(st.policy, store, self.val, self.tasks, self.scfg,
                                      sched.beta, sched.w, self.graph) if self.val else 0.0
        div = exploration_diversity(st.policy, store, self.val_states, self.scfg, sched.beta,
                                    sched.w) if self.val_states else 0.0
        discovered = len({t for _, t, q in st.quality_log if q >= self.cfg.q_gate})
        return {
            "epoch": st.epoch,
            "stage": sched.stage,
            "horizon": sched.horizon,
            "step": st.step,
            "avg_return": float(np.mean(returns)),
            "match_ratio": float(np.mean(quals)),
            "tool_acc": acc,
            "diversity": div,
            "rollout_diversity": float(np.mean(ents)),
            "edge_count": st.store.edge_count(TOOL),
            "discovered": discovered,
            "p_tf": sched.p_tf,
            "beta": sched.beta,
            "lambda": sched.lam,
            "w": sched.w,
        }

    def evaluate(self, st: TrainState, episodes: Sequence[Episode], samples: int = 0,
                 epsilon: float = 0.0) -> float:
        """Autonomous match ratio under the final-phase prior (greedy when samples=0)."""
        sched = schedule(self.cfg, self.cfg.total_epochs - 1)
        store = st.store if self.cfg.use_pheromone else None
        for ep in episodes:
            self.task(ep)
        scfg = replace(self.scfg, epsilon_greedy=epsilon)
        return eval_match_ratio(st.policy, store, episodes, self.tasks, scfg, sched.beta, sched.w,
                                self.graph, samples, self.seed)

    def run(self, st: Optional[TrainState] = None, metrics_path=None, checkpoint_path=None,
            checkpoint_every: int = 1, stop_after: Optional[int] = None) -> TrainState:
        """Train to completion (or until `stop_after` RL epochs are done).

        Metric records are appended to `metrics_path`; a checkpoint is written
        after warm-up and every `checkpoint_every` epochs.
        """
        fresh = st is None
        if fresh:
            st = self.initial_state()
            self.do_warmup(st)
            if checkpoint_path:
                save_checkpoint(st, checkpoint_path)
        pool = ThreadPoolExecutor(self.cfg.threads) if self.cfg.threads > 1 else None
        try:
            while st.epoch < self.cfg.total_epochs:
                if stop_after is not None and st.epoch >= stop_after:
                    break
                rec = self.run_epoch(st, pool)
                log.info("epoch %d stage %d return %.3f match %.3f", rec["epoch"], rec["stage"],
                         rec["avg_return"], rec["match_ratio"])
                if metrics_path:
                    with open(metrics_path, "a", encoding="utf-8") as f:
                        f.write(dumps(rec) + "\n")
                self.metrics.append(rec)
                if checkpoint_path and (st.epoch % checkpoint_every == 0
                                        or st.epoch == self.cfg.total_epochs):
                    save_checkpoint(st, checkpoint_path)
        finally:
            if pool is not None:
                pool.shutdown()
        return st
