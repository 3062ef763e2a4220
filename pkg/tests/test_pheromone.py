import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from phgpo.embedding import encode
from phgpo.pheromone import (ARG, TOOL, MemoryBank, PheromoneParams, PheromoneStore, Retrieved,
                             all_values, confidence, deposit_value, evaporate_value, fuse, retrieve,
                             task_dependent, tau_lookups, trajectory_edges)
from phgpo.tool_graph import InvocationId

P = PheromoneParams()


def hits(pairs):
    arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
    return Retrieved(arr[:, 0], arr[:, 1])


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_deposit_examples():
    assert deposit_value(1.0, 0.8, P) == pytest.approx(1.79, abs=1e-12)
    p0 = PheromoneParams(rho=0.0)
    assert deposit_value(p0.tau0, 0.0, p0) == p0.tau0
    with pytest.raises(ValueError):
        deposit_value(1.0, 1.2, P)
    with pytest.raises(ValueError):
        deposit_value(1.0, -0.1, P)


def test_deposit_fixed_point():
    v = P.tau0
    for _ in range(5000):
        v = deposit_value(v, 0.5, P)
    assert abs(v - min(0.5 / 0.01, P.tau_max)) < 1e-6
    # an interior fixed point: alpha*q/rho inside the clip range
    p = PheromoneParams(rho=0.5, alpha=1.0)
    v = p.tau0
    for _ in range(200):
        v = deposit_value(v, 0.6, p)
    assert abs(v - 1.2) < 1e-6


def test_evaporation():
    assert evaporate_value(2.0, P) == pytest.approx(1.98)
    assert evaporate_value(P.tau_min, P) == P.tau_min
    assert evaporate_value(3.3, PheromoneParams(rho=0.0)) == 3.3


def test_evaporate_all_skips_touched_edges():
    s = PheromoneStore()
    s.deposit(TOOL, (0, 1), 1.0)
    s.evaporate_all()
    s.deposit(TOOL, (1, 2), 1.0)
    s.evaporate_all()
    assert s.value(TOOL, (0, 1)) == pytest.approx(evaporate_value(deposit_value(1.0, 1.0, P), P))
    assert s.value(TOOL, (1, 2)) == pytest.approx(1.99)
    assert s.value(TOOL, (5, 5)) == P.tau0


def test_retrieve_threshold():
    bank = MemoryBank()
    assert len(retrieve(bank, unit([1, 0]), P)) == 0
    x = unit([1.0, 0.0])
    for sim, q in ((0.9, 0.1), (0.6, 0.2), (0.3, 0.3)):
        bank.append(np.array([sim, np.sqrt(1 - sim ** 2)]), q)
    got = retrieve(bank, x, P)
    assert np.allclose(sorted(got.sims), [0.6, 0.9])
    assert len(retrieve(bank, x, PheromoneParams(theta_sim=0.0))) == 3
    assert len(retrieve(bank, x, PheromoneParams(theta_sim=1.0 + 1e-9))) == 0


def test_task_dependent_examples():
    assert task_dependent(hits([]), P) == 1.0
    p = PheromoneParams(epsilon=1e-15)
    assert task_dependent(hits([(0.9, 0.8), (0.6, 0.4)]), p) == pytest.approx(3.56, abs=1e-9)
    assert task_dependent(hits([(0.7, 1.0)]), p) == pytest.approx(P.tau_max, abs=1e-9)


def test_confidence_examples():
    assert confidence(hits([]), P) == 0.0
    assert confidence(hits([(0.9, 0.9), (0.5, 0.7)]), P) == pytest.approx(2 / 3 * 0.9 * 0.8)
    assert confidence(hits([(1.0, 1.0)] * 4), P) == 1.0


def test_fuse_examples():
    assert fuse(1.2, 3.0, 0.0, 0.5, P).value == 1.2
    assert fuse(1.2, 3.0, 0.48, 0.5, P).value == pytest.approx(1.632, abs=1e-12)
    assert fuse(1.2, 3.0, 1.0, 1.0, P).value == 3.0
    f = fuse(1.2, 3.0, 0.7, 0.0, P)
    assert f.value == 1.2 and f.confidence == 0.7


def test_record_success_traversal_and_banks():
    s = PheromoneStore()
    traj = [InvocationId(1, 0), InvocationId(2, 1)]
    e = encode("alpha beta")
    s.record_success(traj, e, 0.8)
    assert set(s.tool_pheromone) == {(0, 1), (1, 2)}
    assert set(s.arg_pheromone) == {(1, 0), (2, 1)}
    for kind, edges in ((TOOL, [(0, 1), (1, 2)]), (ARG, [(1, 0), (2, 1)])):
        for edge in edges:
            assert len(s.bank(kind, edge)) == 1
            assert s.value(kind, edge) == pytest.approx(1.79)
    s.record_success(traj, e, 0.8)
    assert len(s.bank(TOOL, (0, 1))) == 2


def test_record_success_monotone_in_q():
    hi, lo = PheromoneStore(), PheromoneStore()
    traj = [InvocationId(1, 0), InvocationId(3, 0)]
    hi.record_success(traj, encode("x"), 1.0)
    lo.record_success(traj, encode("x"), 0.5)
    for edge in hi.tool_pheromone:
        assert hi.value(TOOL, edge) > lo.value(TOOL, edge)
    with pytest.raises(ValueError):
        hi.record_success(traj, encode("x"), 1.5)


def test_trajectory_edges_dedup():
    t = [InvocationId(1, 0), InvocationId(2, 0), InvocationId(1, 0), InvocationId(2, 0)]
    tools, args = trajectory_edges(t)
    assert tools == [(0, 1), (1, 2), (2, 1)]
    assert args == [(1, 0), (2, 0)]


def test_bank_cap_is_fifo():
    b = MemoryBank(cap=3)
    for q in (0.1, 0.2, 0.3, 0.4):
        b.append(unit([1, 0]), q)
    assert len(b) == 3
    assert np.allclose(b.qualities, [0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        b.append(unit([1, 0]), 2.0)


def test_fused_uses_bank_for_similar_task_only():
    s = PheromoneStore()
    e = encode("open file read file")
    for _ in range(3):
        s.record_success([InvocationId(1, 0)], e, 1.0)
    agn = s.value(TOOL, (0, 1))
    near = s.fused_tool(0, 1, e, 0.5)
    assert near.confidence == pytest.approx(1.0)
    assert near.value == pytest.approx(0.5 * agn + 0.5 * P.tau_max)
    far = s.fused_tool(0, 1, unit(-e), 0.5)
    assert far.confidence == 0.0 and far.value == agn
    assert s.fused_tool(0, 1, e, 0.0).value == agn


def test_store_round_trip():
    s = PheromoneStore()
    s.record_success([InvocationId(1, 0), InvocationId(2, 2)], encode("a b"), 0.7)
    s.evaporate_all()
    s.deposit(TOOL, (2, 3), 0.3)
    again = PheromoneStore.from_dict(s.to_dict())
    assert again.to_dict() == s.to_dict()
    assert again.fused_tool(0, 1, encode("a b"), 0.5) == s.fused_tool(0, 1, encode("a b"), 0.5)


def test_tau_lookups_without_store():
    tool_fn, arg_fn = tau_lookups(None, None, 0.5, [1, 3])
    assert tool_fn is None
    assert np.array_equal(arg_fn(1), np.ones(3))


def test_params_validation():
    for kw in ({"rho": 1.0}, {"alpha": 0.0}, {"tau_min": 2.0}, {"tau0": 6.0}, {"n_min": 0}):
        with pytest.raises(ValueError):
            PheromoneParams(**kw)


unit_q = st.floats(0.0, 1.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 5.0), unit_q, unit_q)
def test_deposit_monotone_in_q(old, q1, q2):
    lo, hi = sorted((q1, q2))
    assert deposit_value(old, lo, P) <= deposit_value(old, hi, P)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.floats(-1.0, 1.0), unit_q), max_size=12), st.integers(1, 6))
def test_confidence_and_dependent_bounded(pairs, n_min):
    p = PheromoneParams(n_min=n_min, theta_sim=0.0)
    r = hits([(abs(s), q) for s, q in pairs])
    assert 0.0 <= confidence(r, p) <= 1.0
    assert p.tau0 <= task_dependent(r, p) <= p.tau_max + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["dep", "evap"]), st.integers(0, 3), st.integers(0, 3),
                          unit_q), max_size=60),
       st.floats(0.0, 0.99))
def test_store_values_stay_clipped(ops, rho):
    p = PheromoneParams(rho=rho, alpha=3.0)
    s = PheromoneStore(p)
    for op, i, j, q in ops:
        if op == "dep":
            s.deposit(TOOL, (i, j), q)
        else:
            s.evaporate_all()
        assert all(p.tau_min <= v <= p.tau_max for v in all_values(s))
