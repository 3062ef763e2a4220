"""Episode corpus handling, synthetic task generation and the scripted tool simulator."""

from __future__ import annotations

import hashlib
import json
import math
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .tool_graph import START, START_PATTERN, InvocationId, ToolGraph, build_graph, resolve_reference

END_MARKER = "<<END>>"
MAX_HORIZON = 20
CATEGORY_NAMES = ("web", "file", "code", "data", "mail", "calendar", "shell", "db",
                  "search", "doc", "chart", "repo")


@dataclass(frozen=True)
class Episode:
    task_id: str
    text: str
    reference: Tuple[InvocationId, ...]

    def __post_init__(self):
        if not self.reference:
            raise ValueError(f"episode {self.task_id!r} has an empty reference")

    @property
    def tools(self) -> Tuple[int, ...]:
        return tuple(inv.tool for inv in self.reference)


@dataclass(frozen=True)
class SimResult:
    output: str
    is_error: bool
    is_complete: bool


@dataclass
class SimulatorConfig:
    error_rate: float = 0.02
    cache_enabled: bool = True
    seed: int = 0
    history_window: int = 3

    def __post_init__(self):
        if not 0.0 <= self.error_rate <= 1.0:
            raise ValueError("error_rate must be in [0, 1]")


def strip_marker(raw: str) -> Tuple[str, bool]:
    lines = raw.rstrip("\n").split("\n")
    if lines and lines[-1].strip() == END_MARKER:
        return "\n".join(lines[:-1]), True
    return raw, False


class Simulator:
    """Deterministic stand-in for the tool-output simulator.

    The outcome is a pure function of (seed, content key); the cache only
    saves recomputation. Completion means the executed tool sequence equals the
    whole reference tool sequence.
    """

    def __init__(self, graph: ToolGraph, cfg: Optional[SimulatorConfig] = None):
        self.graph = graph
        self.cfg = cfg or SimulatorConfig()
        self.cache: Dict[str, SimResult] = {}
        self.calls = 0
        self.misses = 0
        self._lock = threading.Lock()

    def content_key(self, tool: int, inv: InvocationId, episode: Episode,
                    history: Sequence[InvocationId]) -> str:
        g = self.graph
        t = len(history)
        ref = episode.tools
        on_track = t < len(ref) and tuple(h.tool for h in history) == ref[:t]
        window = history[-self.cfg.history_window:] if self.cfg.history_window > 0 else ()
        fields = [
            f"{g.tools[tool]}::{g.pattern(inv)}",
            episode.task_id,
            episode.text,
            "|".join(f"{g.tools[h.tool]}::{g.pattern(h)}" for h in window),
            str(t),
            str(on_track),
            str(on_track and t == len(ref) - 1 and ref[t] == tool),
        ]
        return hashlib.sha256("\x1f".join(fields).encode()).hexdigest()

    def simulate(self, tool: int, inv: InvocationId, episode: Episode,
                 history: Sequence[InvocationId]) -> SimResult:
        if not 0 <= tool < self.graph.n_tools:
            raise ValueError(f"invalid tool id {tool}")
        if inv.tool != tool:
            raise ValueError(f"invocation {inv} does not belong to tool {tool}")
        try:
            pattern = self.graph.pattern(inv)
        except KeyError as exc:
            raise ValueError(str(exc)) from None
        key = self.content_key(tool, inv, episode, history)
        self.calls += 1
        if self.cfg.cache_enabled:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        self.misses += 1
        result = self._run(key, tool, pattern, episode, history)
        if self.cfg.cache_enabled:
            with self._lock:
                self.cache.setdefault(key, result)
        return result

    def _run(self, key: str, tool: int, pattern: str, episode: Episode,
             history: Sequence[InvocationId]) -> SimResult:
        h = hashlib.sha256(f"{self.cfg.seed}:{key}".encode()).digest()
        u = int.from_bytes(h[:8], "big") / 2.0 ** 64
        name = self.graph.tools[tool]
        malformed = not pattern.strip()
        if malformed or u < self.cfg.error_rate:
            reason = "invalid argument format" if malformed else "tool execution failed"
            return SimResult(f"ERROR: {name}({pattern}): {reason}", True, False)
        t = len(history)
        ref = episode.tools
        done = (t == len(ref) - 1 and ref[t] == tool
                and tuple(x.tool for x in history) == ref[:t])
        raw = f'{{"tool": "{name}", "invocation": "{pattern}", "status": "ok", "step": {t}}}'
        if done:
            raw += "\n" + END_MARKER
        output, complete = strip_marker(raw)
        return SimResult(output, False, complete)

    def save_cache(self, path):
        data = {k: asdict(v) for k, v in sorted(self.cache.items())}
        Path(path).write_text(json.dumps(data, sort_keys=True))

    def load_cache(self, path):
        data = json.loads(Path(path).read_text())
        self.cache.update({k: SimResult(**v) for k, v in data.items()})


# ---------------------------------------------------------------- corpus I/O

def episode_to_record(ep: Episode, graph: ToolGraph) -> dict:
    used = sorted({inv.tool for inv in ep.reference})
    return {
        "task_id": ep.task_id,
        "text": ep.text,
        "reference": [{"tool": graph.tools[i.tool], "arg": graph.pattern(i)} for i in ep.reference],
        "category": {graph.tools[i]: graph.categories[i] for i in used},
    }


def episodes_from_records(records: Sequence[dict], graph: ToolGraph) -> List[Episode]:
    out = []
    for rec in records:
        text = rec.get("text", "")
        if not isinstance(text, str) or not text.strip():
            raise ValueError(f"episode {rec.get('task_id')!r} has empty task text")
        out.append(Episode(str(rec["task_id"]), text, resolve_reference(rec, graph)))
    return out


def read_records(path) -> List[dict]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "task_id" not in rec or "reference" not in rec:
                raise ValueError(f"{path}:{lineno}: missing task_id/reference")
            records.append(rec)
    return records


def write_records(path, records: Sequence[dict]):
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def corpus_from_records(records: Sequence[dict]) -> Tuple[ToolGraph, List[Episode]]:
    graph = build_graph(records)
    return graph, episodes_from_records(records, graph)


def load_corpus(path) -> Tuple[ToolGraph, List[Episode]]:
    return corpus_from_records(read_records(path))


def split(episodes: Sequence[Episode], ratios=(0.8, 0.1, 0.1), seed: int = 0):
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ValueError("ratios must be three non-negative numbers summing to 1")
    n = len(episodes)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = min(n - n_train, int(round(ratios[1] * n)))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple([episodes[i] for i in sorted(part)] for part in parts)


# ----------------------------------------------------------- synthetic corpus

@dataclass
class SyntheticSpec:
    n_tools: int = 50
    n_categories: int = 8
    patterns_per_tool: int = 3
    n_episodes: int = 200
    horizon: int = MAX_HORIZON
    seed: int = 0
    branching: int = 3
    n_families: Optional[int] = None
    noise: float = 0.05
    max_horizon: int = MAX_HORIZON
    fixed_chain: List[int] = field(default_factory=list)


def generate_synthetic(n_tools=50, n_categories=8, patterns_per_tool=3, n_episodes=200,
                       horizon=MAX_HORIZON, seed=0, *, branching=3, n_families=None,
                       noise=0.05, max_horizon=MAX_HORIZON, fixed_chain=()):
    """Random-walk corpus over a sparse transition structure.

    Every tool gets `branching` successors. Episodes come in families; each
    family fixes a start tool, a preferred successor per tool and a length, and
    its episodes walk the preferred successors, deviating to another successor
    with probability `noise`. Task text lists the reference tool names, so
    episodes of one family embed close together. If `fixed_chain` names a few
    tools (indices into the tool list), family 0 follows exactly that chain.
    """
    for name, v in (("n_tools", n_tools), ("n_categories", n_categories),
                    ("patterns_per_tool", patterns_per_tool), ("n_episodes", n_episodes),
                    ("horizon", horizon)):
        if v <= 0:
            raise ValueError(f"{name} must be positive")
    if horizon > max_horizon:
        raise ValueError(f"horizon {horizon} exceeds the maximum {max_horizon}")
    rng = np.random.default_rng(seed)
    n_categories = min(n_categories, n_tools)
    cats = [CATEGORY_NAMES[c % len(CATEGORY_NAMES)] + ("" if c < len(CATEGORY_NAMES) else str(c))
            for c in range(n_categories)]
    names = [f"{cats[i % n_categories]}_{i:02d}" for i in range(n_tools)]
    patterns = [[f"{names[i]}/args{k}" for k in range(patterns_per_tool)] for i in range(n_tools)]
    branching = max(1, min(branching, n_tools - 1)) if n_tools > 1 else 1
    succ = []
    for i in range(n_tools):
        others = [j for j in range(n_tools) if j != i] or [i]
        succ.append(sorted(rng.choice(others, size=min(branching, len(others)), replace=False).tolist()))

    fixed = [int(i) for i in fixed_chain]
    for a, b in zip(fixed, fixed[1:]):
        if b not in succ[a]:
            succ[a] = sorted(succ[a] + [b])

    n_families = n_families or max(1, n_episodes // 20)
    lo = max(1, math.ceil(horizon / 2))
    families = []
    for f in range(n_families):
        pref = [int(rng.choice(s)) for s in succ]
        length = int(rng.integers(lo, horizon + 1))
        start = int(rng.integers(n_tools))
        families.append((start, pref, length))

    episodes = []
    for e in range(n_episodes):
        f = e % n_families
        if f == 0 and fixed:
            walk = list(fixed)
        else:
            start, pref, length = families[f]
            walk = [start]
            while len(walk) < length:
                cur = walk[-1]
                nxt = pref[cur] if rng.random() >= noise else int(rng.choice(succ[cur]))
                walk.append(nxt)
        args = [int(rng.integers(patterns_per_tool)) for _ in walk]
        episodes.append((f"synth-{seed}-{e:04d}", walk, args))

    tools = [START] + names
    graph = ToolGraph(
        tools=tools,
        invocation_sets=[[START_PATTERN]] + patterns,
        transition_edges={(i + 1, j + 1) for i in range(n_tools) for j in succ[i]},
        categories={i + 1: names[i].split("_", 1)[0] for i in range(n_tools)},
    )
    out = []
    for task_id, walk, args in episodes:
        graph.transition_edges.add((0, walk[0] + 1))
        text = " ".join(names[i] for i in walk)
        ref = tuple(InvocationId(i + 1, k) for i, k in zip(walk, args))
        out.append(Episode(task_id, text, ref))
    return graph, out


def synthetic_records(**kwargs) -> List[dict]:
    graph, episodes = generate_synthetic(**kwargs)
    return [episode_to_record(ep, graph) for ep in episodes]


def corpus_stats(graph: ToolGraph, episodes: Sequence[Episode]) -> dict:
    lengths = [len(ep.reference) for ep in episodes]
    return {
        "episodes": len(episodes),
        "l1_tools": graph.n_tools - 1,
        "l2_tools": sum(len(p) for p in graph.invocation_sets[1:]),
        "transition_edges": len(graph.transition_edges),
        "avg_steps": sum(lengths) / len(lengths) if lengths else 0.0,
        "max_steps": max(lengths) if lengths else 0,
    }
