import numpy as np
import pytest

from phgpo.environment import generate_synthetic


def rec(task_id, steps, text="do the thing", category=None):
    return {"task_id": task_id, "text": text,
            "reference": [{"tool": t, "arg": a} for t, a in steps],
            "category": category or {}}


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic(n_tools=12, n_categories=4, n_episodes=40, horizon=6, seed=3)


def central_diff(f, w, h=1e-6):
    """Central finite-difference gradient of scalar f at array w (w is restored)."""
    g = np.zeros_like(w)
    it = np.nditer(w, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = w[idx]
        w[idx] = old + h
        up = f()
        w[idx] = old - h
        down = f()
        w[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(1e-8, np.max(np.abs(a)) + np.max(np.abs(b))))


def tiny_trainer(corpus, seed=0, **overrides):
    from phgpo.environment import Simulator, split
    from phgpo.pheromone import PheromoneParams
    from phgpo.sampling import SamplerConfig
    from phgpo.trainer import Trainer, TrainerConfig

    graph, eps = corpus
    train, val, _ = split(eps, (0.8, 0.1, 0.1), seed)
    kw = dict(group_size=3, warmup_epochs=1, stage_horizons=[3, 6], epochs_per_stage=2,
              final_epochs=2)
    kw.update(overrides)
    return Trainer(graph, train, val, TrainerConfig(**kw), SamplerConfig(), PheromoneParams(),
                   Simulator(graph), seed=seed)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
