"""Two-layer action space: base tools, transitions, and argument invocations."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Set, Tuple

START = "<START>"
START_PATTERN = "<noop>"


class InvocationId(NamedTuple):
    tool: int
    pattern_index: int


@dataclass
class ToolGraph:
    tools: List[str]
    invocation_sets: List[List[str]]
    transition_edges: Set[Tuple[int, int]] = field(default_factory=set)
    categories: Dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.tools) != len(self.invocation_sets):
            raise ValueError("every tool needs an invocation set")
        if len(set(self.tools)) != len(self.tools):
            raise ValueError("duplicate tool names")
        for name, patterns in zip(self.tools, self.invocation_sets):
            if not patterns:
                raise ValueError(f"tool {name!r} has no invocation patterns")
        self._index = {name: i for i, name in enumerate(self.tools)}
        for i, name in enumerate(self.tools):
            self.categories.setdefault(i, default_category(name))

    @property
    def n_tools(self) -> int:
        return len(self.tools)

    @property
    def invocation_edges(self) -> Set[Tuple[int, InvocationId]]:
        return {
            (i, InvocationId(i, k))
            for i, patterns in enumerate(self.invocation_sets)
            for k in range(len(patterns))
        }

    def tool_id(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown tool {name!r}") from None

    def _check(self, tool: int):
        if not 0 <= tool < self.n_tools:
            raise KeyError(f"unknown tool id {tool}")

    def successors(self, tool: int) -> List[int]:
        self._check(tool)
        return sorted(j for (i, j) in self.transition_edges if i == tool)

    def invocations(self, tool: int) -> List[InvocationId]:
        self._check(tool)
        return [InvocationId(tool, k) for k in range(len(self.invocation_sets[tool]))]

    def pattern(self, inv: InvocationId) -> str:
        self._check(inv.tool)
        patterns = self.invocation_sets[inv.tool]
        if not 0 <= inv.pattern_index < len(patterns):
            raise KeyError(f"tool {self.tools[inv.tool]!r} has no invocation {inv.pattern_index}")
        return patterns[inv.pattern_index]

    def same_category(self, a: int, b: int) -> bool:
        return self.categories[a] == self.categories[b]

    def add_edge(self, i: int, j: int) -> bool:
        """Lazily insert a transition seen during rollouts. Returns True if new."""
        self._check(i)
        self._check(j)
        if (i, j) in self.transition_edges:
            return False
        self.transition_edges.add((i, j))
        return True

    def to_dict(self) -> dict:
        return {
            "tools": list(self.tools),
            "invocation_sets": [list(p) for p in self.invocation_sets],
            "edges": sorted([i, j] for i, j in self.transition_edges),
            "categories": {self.tools[i]: c for i, c in sorted(self.categories.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToolGraph":
        tools = list(data["tools"])
        index = {name: i for i, name in enumerate(tools)}
        return cls(
            tools=tools,
            invocation_sets=[list(p) for p in data["invocation_sets"]],
            transition_edges={(int(i), int(j)) for i, j in data["edges"]},
            categories={index[name]: c for name, c in data.get("categories", {}).items()},
        )

    def __eq__(self, other):
        if not isinstance(other, ToolGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def default_category(name: str) -> str:
    if name == START:
        return START
    for sep in ("_", ".", "-"):
        if sep in name:
            return name.split(sep, 1)[0]
    return name


def _steps(record: dict) -> list:
    steps = record.get("reference")
    if not steps:
        raise ValueError(f"episode {record.get('task_id')!r} has an empty reference")
    for t, step in enumerate(steps):
        if not isinstance(step, dict) or not isinstance(step.get("tool"), str) \
                or not isinstance(step.get("arg"), str):
            raise ValueError(
                f"episode {record.get('task_id')!r}: malformed step {t}: {step!r}")
    return steps


def build_graph(records: Iterable[dict]) -> ToolGraph:
    """Collect tools, adjacent-pair edges and invocation patterns from raw episodes.

    `records` use the corpus schema: {"task_id", "text", "reference": [{"tool", "arg"}],
    "category": {tool: label}}. Tool indices follow first appearance, with the
    synthetic START tool at index 0 linked to every first tool.
    """
    records = list(records)
    if not records:
        raise ValueError("empty corpus")
    tools = [START]
    patterns: List[List[str]] = [[START_PATTERN]]
    index = {START: 0}
    categories: Dict[int, str] = {0: START}
    edges: Set[Tuple[int, int]] = set()
    for rec in records:
        prev = 0
        cats = rec.get("category") or {}
        for step in _steps(rec):
            name, arg = step["tool"], step["arg"]
            if name == START:
                raise ValueError(f"episode {rec.get('task_id')!r} uses reserved tool {START}")
            i = index.get(name)
            if i is None:
                i = index[name] = len(tools)
                tools.append(name)
                patterns.append([])
            if arg not in patterns[i]:
                patterns[i].append(arg)
            if name in cats and i not in categories:
                categories[i] = cats[name]
            edges.add((prev, i))
            prev = i
    return ToolGraph(tools, patterns, edges, categories)


def resolve_reference(record: dict, graph: ToolGraph) -> Tuple[InvocationId, ...]:
    """Map a raw reference onto graph ids; unknown tools/patterns are errors."""
    out = []
    for t, step in enumerate(_steps(record)):
        try:
            i = graph.tool_id(step["tool"])
            k = graph.invocation_sets[i].index(step["arg"])
        except (KeyError, ValueError):
            raise ValueError(
                f"episode {record.get('task_id')!r}: step {t} references unknown "
                f"invocation {step['tool']!r}/{step['arg']!r}") from None
        out.append(InvocationId(i, k))
    return tuple(out)
