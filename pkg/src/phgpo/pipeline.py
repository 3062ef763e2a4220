"""Run configuration, ablation variants and the end-to-end training pipeline."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import List, Optional, Tuple

from .environment import (Episode, Simulator, SimulatorConfig, SyntheticSpec, generate_synthetic,
                          load_corpus, split)
from .metrics import (EvalReport, episode_match_ratios, episode_next_tool_hits,
                      exploration_diversity, first_success_tracking, reference_states)
from .pheromone import PheromoneParams
from .rewards import RewardConfig
from .sampling import SamplerConfig
from .tool_graph import ToolGraph
from .trainer import (TrainState, Trainer, TrainerConfig, dumps, load_checkpoint,
                      schedule)

SEED_ENV = "PHGPO_SEED"
METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "checkpoint.json"
CONFIG_FILE = "config.json"
GRAPH_FILE = "graph.json"
DISCOVERY_FILE = "discoveries.jsonl"
SUMMARY_FILE = "summary.json"


@dataclass
class CorpusConfig:
    path: Optional[str] = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    ratios: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class RunConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pheromone: PheromoneParams = field(default_factory=PheromoneParams)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    rewards: RewardConfig = field(default_factory=RewardConfig)
    output_dir: str = "runs/default"
    checkpoint_every: int = 1
    eval_samples: int = 20

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        return _build(cls, data, "config")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ValueError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc.msg})") from None
    cfg = RunConfig.from_dict(data)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        cfg.seed = int(env)
    return cfg


# ------------------------------------------------------------------ variants

def _trainer(**kw):
    return lambda cfg: replace(cfg, trainer=replace(cfg.trainer, **kw))


def _no_curriculum(cfg: RunConfig) -> RunConfig:
    t = cfg.trainer
    return replace(cfg, trainer=replace(
        t, stage_horizons=[t.stage_horizons[-1]], epochs_per_stage=t.curriculum_epochs,
        p_tf_start=0.0, p_tf_final=0.0))


VARIANTS = {
    "full": lambda cfg: cfg,
    "no_pheromone": _trainer(use_pheromone=False),
    "no_curriculum": _no_curriculum,
    "static_prior": _trainer(freeze_after_curriculum=True),
    "no_evaporation": _trainer(final_rho=0.0),
    "no_task_dependent": _trainer(w_max=0.0),
    "beta_0": _trainer(beta_fixed=0.0),
    "beta_1": _trainer(beta_fixed=1.0),
    "beta_5": _trainer(beta_fixed=5.0),
    "beta_dynamic": _trainer(beta_fixed=None),
    "grpo": _trainer(advantage_mode="grpo"),
    "ppo": _trainer(advantage_mode="ppo"),
    "rloo": _trainer(advantage_mode="rloo"),
}


def apply_variant(cfg: RunConfig, name: str) -> RunConfig:
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {name!r}; valid variants: {', '.join(sorted(VARIANTS))}")
    return VARIANTS[name](copy.deepcopy(cfg))


# ------------------------------------------------------------------- corpus

def build_corpus(cfg: RunConfig) -> Tuple[ToolGraph, List[Episode]]:
    if cfg.corpus.path:
        return load_corpus(cfg.corpus.path)
    spec = asdict(cfg.corpus.synthetic)
    return generate_synthetic(**spec)


def build_trainer(cfg: RunConfig) -> Tuple[Trainer, Tuple[list, list, list]]:
    graph, episodes = build_corpus(cfg)
    parts = split(episodes, tuple(cfg.corpus.ratios), cfg.seed)
    trainer = Trainer(graph, parts[0], parts[1], cfg.trainer, cfg.sampler, cfg.pheromone,
                      Simulator(graph, cfg.simulator), cfg.seed, cfg.rewards)
    return trainer, parts


@dataclass
class RunArtifacts:
    trainer: Trainer
    state: TrainState
    splits: Tuple[list, list, list]
    out_dir: Optional[Path]

    @property
    def metrics(self) -> List[dict]:
        return self.trainer.metrics


def _truncate_metrics(path: Path, epoch: int):
    if not path.exists():
        return
    keep = [line for line in path.read_text().splitlines()
            if line.strip() and json.loads(line)["epoch"] <= epoch]
    path.write_text("".join(line + "\n" for line in keep))


def run_pipeline(cfg: RunConfig, out_dir=None, resume: bool = False,
                 stop_after: Optional[int] = None) -> RunArtifacts:
    """Warm-up, curriculum and final phase; writes metrics, checkpoints and a summary.

    With `resume`, training continues from the checkpoint in `out_dir` and
    the metrics log is cut back to that checkpoint's epoch first.
    """
    trainer, parts = build_trainer(cfg)
    out = Path(out_dir) if out_dir is not None else None
    metrics_path = ckpt_path = None
    state = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path, ckpt_path = out / METRICS_FILE, out / CHECKPOINT_FILE
        if resume:
            if not ckpt_path.exists():
                raise FileNotFoundError(f"no checkpoint to resume from in {out}")
            state = load_checkpoint(ckpt_path)
            _truncate_metrics(metrics_path, state.epoch)
        else:
            if metrics_path.exists():
                metrics_path.unlink()
            (out / CONFIG_FILE).write_text(dumps(cfg.to_dict()) + "\n")
            (out / GRAPH_FILE).write_text(dumps(trainer.graph.to_dict()) + "\n")
    state = trainer.run(state, metrics_path, ckpt_path, cfg.checkpoint_every, stop_after)
    if out is not None and state.epoch >= cfg.trainer.total_epochs:
        records = first_success_tracking(state.quality_log, [e.task_id for e in parts[0]],
                                         cfg.trainer.q_gate)
        with open(out / DISCOVERY_FILE, "w", encoding="utf-8") as f:
            for r in records:
                f.write(dumps({"task_id": r.task_id, "first_success_step": r.first_success_step}) + "\n")
        summary = {"epochs": state.epoch, "steps": state.step, "warmup_losses": state.warmup_losses,
                   "gate_audit": state.audit}
        if parts[2]:
            summary["test_match_ratio"] = trainer.evaluate(state, parts[2], cfg.eval_samples)
        (out / SUMMARY_FILE).write_text(dumps(summary) + "\n")
    return RunArtifacts(trainer, state, parts, out)


def evaluate_split(cfg: RunConfig, state: TrainState, split_name: str) -> EvalReport:
    trainer, parts = build_trainer(cfg)
    names = {"train": 0, "val": 1, "test": 2}
    if split_name not in names:
        raise ValueError(f"unknown split {split_name!r}; expected one of {sorted(names)}")
    episodes = parts[names[split_name]]
    if not episodes:
        raise ValueError(f"split {split_name!r} is empty")
    return eval_report(trainer, state, episodes, cfg.eval_samples)


def eval_report(trainer: Trainer, state: TrainState, episodes, samples: int) -> EvalReport:
    """Match ratio, next-tool accuracy and diversity under the final-phase schedule."""
    sched = schedule(trainer.cfg, trainer.cfg.total_epochs - 1)
    store = state.store if trainer.cfg.use_pheromone else None
    for ep in episodes:
        trainer.task(ep)
    tasks = trainer.tasks
    dec = replace(trainer.scfg, epsilon_greedy=0.0)
    ratios = episode_match_ratios(state.policy, store, episodes, tasks, dec, sched.beta, sched.w,
                                  trainer.graph, samples, trainer.seed)
    per_ep, hits = [], []
    for ep, mr in zip(episodes, ratios):
        h = episode_next_tool_hits(state.policy, store, ep, tasks[ep.task_id], trainer.scfg,
                                   sched.beta, sched.w, trainer.graph)
        hits.extend(h)
        per_ep.append({"task_id": ep.task_id, "match_ratio": mr, "tool_acc": sum(h) / len(h)})
    div = exploration_diversity(state.policy, store, reference_states(episodes, tasks), trainer.scfg,
                                sched.beta, sched.w)
    return EvalReport(sum(ratios) / len(ratios), sum(hits) / len(hits), div, per_ep)
