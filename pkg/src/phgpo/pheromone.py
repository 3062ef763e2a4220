"""Pheromone transition prior: ACO deposition/evaporation, per-edge memory banks,
task-dependent retrieval, confidence and fusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .tool_graph import InvocationId

Edge = Tuple[int, int]
TOOL = "tool"
ARG = "arg"


@dataclass(frozen=True)
class PheromoneParams:
    rho: float = 0.01
    alpha: float = 1.0
    tau_min: float = 0.05
    tau_max: float = 5.0
    tau0: float = 1.0
    theta_sim: float = 0.5
    n_min: int = 3
    epsilon: float = 1e-8
    bank_cap: int = 256

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.tau_min <= self.tau0 <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau0 <= tau_max")
        if self.n_min < 1 or self.bank_cap < 1:
            raise ValueError("n_min and bank_cap must be positive")

    def clip(self, value: float) -> float:
        return min(self.tau_max, max(self.tau_min, value))


@dataclass(frozen=True)
class FusedPheromone:
    value: float
    confidence: float


def deposit_value(old: float, q: float, params: PheromoneParams) -> float:
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quality {q} outside [0, 1]")
    return params.clip((1.0 - params.rho) * old + params.alpha * q)


def evaporate_value(old: float, params: PheromoneParams) -> float:
    return params.clip((1.0 - params.rho) * old)


class MemoryBank:
    """Append-only (embedding, quality) list with FIFO eviction past `cap`."""

    def __init__(self, cap: int = 256):
        self.cap = cap
        self._emb: List[np.ndarray] = []
        self._q: List[float] = []
        self._matrix: Optional[np.ndarray] = None
        self._qarr: Optional[np.ndarray] = None

    def __len__(self):
        return len(self._q)

    def append(self, embedding: np.ndarray, quality: float):
        if not 0.0 <= quality <= 1.0:
            raise ValueError(f"quality {quality} outside [0, 1]")
        self._emb.append(np.asarray(embedding, dtype=float))
        self._q.append(float(quality))
        if len(self._q) > self.cap:
            del self._emb[0]
            del self._q[0]
        self._matrix = self._qarr = None

    @property
    def entries(self) -> List[Tuple[np.ndarray, float]]:
        return list(zip(self._emb, self._q))

    def similarities(self, e_x: np.ndarray) -> np.ndarray:
        if not self._q:
            return np.zeros(0)
        if self._matrix is None:
            self._matrix = np.vstack(self._emb)
        return np.clip(self._matrix @ e_x, -1.0, 1.0)

    @property
    def qualities(self) -> np.ndarray:
        if self._qarr is None:
            self._qarr = np.asarray(self._q, dtype=float)
        return self._qarr

    def copy(self) -> "MemoryBank":
        out = MemoryBank(self.cap)
        out._emb = list(self._emb)
        out._q = list(self._q)
        out._matrix = self._matrix
        out._qarr = self._qarr
        return out


@dataclass(frozen=True)
class Retrieved:
    """Similarities and qualities of the bank entries at or above the threshold."""
    sims: np.ndarray
    qualities: np.ndarray

    def __len__(self):
        return self.sims.shape[0]

    def __iter__(self):
        return iter(zip(self.sims.tolist(), self.qualities.tolist()))


def retrieve(bank: MemoryBank, e_x: np.ndarray, params: PheromoneParams) -> Retrieved:
    if len(bank) == 0:
        return Retrieved(np.zeros(0), np.zeros(0))
    sims = bank.similarities(e_x)
    keep = sims >= params.theta_sim
    return Retrieved(sims[keep], bank.qualities[keep])


def task_dependent(retrieved: Retrieved, params: PheromoneParams) -> float:
    if len(retrieved) == 0:
        return params.tau0
    s, q = retrieved.sims, retrieved.qualities
    ratio = float(s @ q) / (float(s.sum()) + params.epsilon)
    return params.tau0 + ratio * (params.tau_max - params.tau0)


def confidence(retrieved: Retrieved, params: PheromoneParams) -> float:
    n_act = len(retrieved)
    if n_act == 0:
        return 0.0
    c = min(1.0, n_act / params.n_min) * float(retrieved.sims.max()) * float(retrieved.qualities.mean())
    return min(1.0, max(0.0, c))


def fuse(tau_agn: float, tau_dep: float, c: float, w: float, params: PheromoneParams) -> FusedPheromone:
    if not (0.0 <= c <= 1.0 and 0.0 <= w <= 1.0):
        raise ValueError("confidence and w must lie in [0, 1]")
    wc = w * c
    return FusedPheromone(params.clip((1.0 - wc) * tau_agn + wc * tau_dep), c)


def trajectory_edges(trajectory: Sequence[InvocationId], start: int = 0):
    """Distinct tool-transition and invocation edges of a trajectory, in traversal order."""
    tool_edges: Dict[Edge, None] = {}
    arg_edges: Dict[Edge, None] = {}
    prev = start
    for inv in trajectory:
        tool_edges[(prev, inv.tool)] = None
        arg_edges[(inv.tool, inv.pattern_index)] = None
        prev = inv.tool
    return list(tool_edges), list(arg_edges)


class PheromoneStore:
    """Task-agnostic pheromone on tool and invocation edges plus their memory banks.

    Missing entries read as tau0. `version` bumps on every mutation so rollouts
    can assert they all saw the same snapshot.
    """

    def __init__(self, params: Optional[PheromoneParams] = None):
        self.params = params or PheromoneParams()
        self.values: Dict[str, Dict[Edge, float]] = {TOOL: {}, ARG: {}}
        self.banks: Dict[str, Dict[Edge, MemoryBank]] = {TOOL: {}, ARG: {}}
        self.touched: set = set()
        self.version = 0

    @property
    def tool_pheromone(self) -> Dict[Edge, float]:
        return self.values[TOOL]

    @property
    def arg_pheromone(self) -> Dict[Edge, float]:
        return self.values[ARG]

    def value(self, kind: str, edge: Edge) -> float:
        return self.values[kind].get(edge, self.params.tau0)

    def deposit(self, kind: str, edge: Edge, q: float) -> float:
        new = deposit_value(self.value(kind, edge), q, self.params)
        self.values[kind][edge] = new
        self.touched.add((kind, edge))
        self.version += 1
        return new

    def evaporate_all(self, params: Optional[PheromoneParams] = None, skip_touched: bool = True):
        """Decay stored values once; edges deposited since the last call are skipped."""
        params = params or self.params
        for kind, table in self.values.items():
            for edge, v in table.items():
                if skip_touched and (kind, edge) in self.touched:
                    continue
                table[edge] = evaporate_value(v, params)
        self.touched.clear()
        self.version += 1

    def record_success(self, trajectory: Sequence[InvocationId], e_x: np.ndarray, q: float,
                       start: int = 0):
        """Deposit q on each distinct traversed edge and log (e_x, q) in its bank."""
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quality {q} outside [0, 1]")
        tool_edges, arg_edges = trajectory_edges(trajectory, start)
        for kind, edges in ((TOOL, tool_edges), (ARG, arg_edges)):
            for edge in edges:
                self.deposit(kind, edge, q)
                self.bank(kind, edge).append(e_x, q)

    def bank(self, kind: str, edge: Edge) -> MemoryBank:
        banks = self.banks[kind]
        if edge not in banks:
            banks[edge] = MemoryBank(self.params.bank_cap)
        return banks[edge]

    def fused(self, kind: str, edge: Edge, e_x: Optional[np.ndarray], w: float) -> FusedPheromone:
        tau_agn = self.values[kind].get(edge, self.params.tau0)
        bank = self.banks[kind].get(edge)
        if e_x is None or w == 0.0 or bank is None or len(bank) == 0:
            return FusedPheromone(self.params.clip(tau_agn), 0.0)
        hits = retrieve(bank, e_x, self.params)
        if len(hits) == 0:
            return FusedPheromone(self.params.clip(tau_agn), 0.0)
        return fuse(tau_agn, task_dependent(hits, self.params), confidence(hits, self.params),
                    w, self.params)

    def fused_tool(self, i: int, j: int, e_x: Optional[np.ndarray], w: float) -> FusedPheromone:
        return self.fused(TOOL, (i, j), e_x, w)

    def fused_arg(self, tool: int, k: int, e_x: Optional[np.ndarray], w: float) -> FusedPheromone:
        return self.fused(ARG, (tool, k), e_x, w)

    def copy(self) -> "PheromoneStore":
        out = PheromoneStore(self.params)
        out.values = {k: dict(v) for k, v in self.values.items()}
        out.banks = {k: {e: b.copy() for e, b in v.items()} for k, v in self.banks.items()}
        out.touched = set(self.touched)
        out.version = self.version
        return out

    def edge_count(self, kind: str = TOOL) -> int:
        return len(self.values[kind])

    def to_dict(self) -> dict:
        def table(kind):
            return [[i, j, v] for (i, j), v in sorted(self.values[kind].items())]

        def banks(kind):
            return [[i, j, [[*e.tolist(), q] for e, q in b.entries]]
                    for (i, j), b in sorted(self.banks[kind].items())]

        return {
            "params": asdict(self.params),
            "tool_pheromone": table(TOOL),
            "arg_pheromone": table(ARG),
            "banks": {TOOL: banks(TOOL), ARG: banks(ARG)},
            "touched": sorted([k, i, j] for k, (i, j) in self.touched),
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PheromoneStore":
        store = cls(PheromoneParams(**data["params"]))
        for kind, key in ((TOOL, "tool_pheromone"), (ARG, "arg_pheromone")):
            store.values[kind] = {(int(i), int(j)): float(v) for i, j, v in data[key]}
            for i, j, entries in data["banks"][kind]:
                bank = store.bank(kind, (int(i), int(j)))
                for row in entries:
                    bank.append(np.asarray(row[:-1], dtype=float), float(row[-1]))
        store.touched = {(k, (int(i), int(j))) for k, i, j in data.get("touched", [])}
        store.version = int(data.get("version", 0))
        return store


def all_values(store: PheromoneStore) -> Iterable[float]:
    for table in store.values.values():
        yield from table.values()


def tau_lookups(store: Optional[PheromoneStore], e_x: Optional[np.ndarray], w: float,
                n_invocations: Sequence[int]):
    """Memoised fused-value lookups for one task against a frozen store.

    Returns (tool_fn, arg_fn) for the sampler; tool_fn is None without a store.
    """
    tool_cache: Dict[Edge, float] = {}
    arg_cache: Dict[int, np.ndarray] = {}

    def arg_fn(tool: int) -> np.ndarray:
        out = arg_cache.get(tool)
        if out is None:
            n = n_invocations[tool]
            if store is None:
                out = np.ones(n)
            else:
                out = np.array([store.fused_arg(tool, k, e_x, w).value for k in range(n)])
            arg_cache[tool] = out
        return out

    if store is None:
        return None, arg_fn

    def tool_fn(prev: int, candidates: np.ndarray) -> np.ndarray:
        out = np.empty(len(candidates))
        for n, j in enumerate(candidates):
            key = (prev, int(j))
            v = tool_cache.get(key)
            if v is None:
                v = tool_cache[key] = store.fused_tool(prev, int(j), e_x, w).value
            out[n] = v
        return out

    return tool_fn, arg_fn
