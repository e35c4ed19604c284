import math

import numpy as np
import pytest

from conftest import audit, make_instance, random_flat_instance, random_instance
from ttisched.exceptions import BudgetExceededError, InvalidInputError, NotFlatError
from ttisched.model import ScheduleDecision, objective_value, step_backlog
from ttisched.oracle import PartitionInstance, brute_force_optimum, reduce_partition
from ttisched.solvers import (
    build_ilp_view,
    canonical_key,
    check_result,
    is_flat,
    solve_cast,
    solve_exact,
    solve_flat_dp,
    solve_sdfs,
)


def cast_reference(inst, tol=1e-9):
    """Straight transcription of the greedy loop, kept free of optimizations."""
    best_value, best = -math.inf, None
    m = inst.completion_bonus
    for tti in inst.tti_menu:
        pool = [s for s, svc in enumerate(inst.services) if svc.deadline >= tti]
        backlog = [svc.demand for svc in inst.services]
        term = [0.0] * inst.num_services
        owners = [-1] * inst.num_channels
        total = 0.0
        for i in range(inst.num_channels):
            g_max, s_max, q_max = -math.inf, None, None
            for s in pool:
                if tti > inst.valid_for[i, s]:
                    continue
                svc = inst.services[s]
                q_temp = step_backlog(backlog[s], tti, inst.signaling_overhead,
                                      [inst.rates[i, s]], tol)
                g = (1.0 / svc.deadline) * (svc.demand - q_temp) / svc.demand
                if q_temp == 0.0:
                    g += m
                if g > g_max:
                    g_max, s_max, q_max = g, s, q_temp
            if s_max is None:
                continue
            owners[i] = s_max
            total += g_max - term[s_max]
            term[s_max] = g_max
            backlog[s_max] = q_max
            if q_max == 0.0:
                pool.remove(s_max)
        if total > best_value:
            best_value, best = total, (tti, owners)
    return ScheduleDecision.from_owners(best[0], best[1], inst.num_services)


# ---- exact ----------------------------------------------------------------------

def test_exact_partition_312():
    inst = reduce_partition(PartitionInstance((3, 1, 2)))
    res = solve_exact(inst)
    audit(inst, res)
    assert res.value == 4


def test_exact_single_service():
    inst = make_instance([[5]], [3], [1])
    res = solve_exact(inst)
    assert res.value == 1
    assert res.decision.owners() == (0,)


def test_exact_matches_dp_on_flat_k4():
    inst = make_instance(np.full((4, 2), 3.0), [7, 5], [2, 3], menu=(1, 2))
    assert solve_exact(inst).value == solve_flat_dp(inst).value


def test_exact_nothing_eligible():
    inst = make_instance([[5, 5]], [3, 3], [1, 1], menu=(2, 3))
    res = solve_exact(inst)
    assert res.value == 0
    assert not res.decision.assignment.any()


def test_exact_budget_exhaustion():
    rng = np.random.default_rng(0)
    inst = make_instance(rng.uniform(1, 10, (14, 6)), rng.uniform(50, 90, 6), [3] * 6, menu=(1, 2, 3))
    with pytest.raises(BudgetExceededError):
        solve_exact(inst, node_budget=50)


def test_exact_real_rates_match_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(200):
        inst = random_instance(rng, real=True, overhead=float(rng.choice([0.0, 0.5])))
        ex, bf = solve_exact(inst), brute_force_optimum(inst)
        audit(inst, ex)
        assert abs(ex.value - bf.value) <= 1e-9


def test_exact_tie_breaks_are_canonical():
    # Symmetric services and channels: lowest Delta, then lowest service ids first.
    inst = make_instance(np.full((2, 2), 1.0), [5, 5], [4, 4], menu=(1, 2))
    res = solve_exact(inst)
    bf = brute_force_optimum(inst)
    assert res.decision == bf.decision
    assert canonical_key(res.decision.tti_length, res.decision.owners(), 2) == canonical_key(
        bf.decision.tti_length, bf.decision.owners(), 2
    )


def test_exact_is_deterministic():
    rng = np.random.default_rng(3)
    inst = random_instance(rng, max_k=6, max_s=3)
    assert solve_exact(inst).decision == solve_exact(inst).decision


def test_ilp_view_agrees_with_objective():
    rng = np.random.default_rng(11)
    for _ in range(50):
        inst = random_instance(rng)
        res = solve_exact(inst)
        view = build_ilp_view(inst, res.decision.tti_length)
        assert view.value(res.decision.owners()) == pytest.approx(res.value, abs=1e-12)


# ---- CAST ----------------------------------------------------------------------

def test_cast_single_service_matches_exact():
    inst = make_instance([[5]], [3], [1])
    assert solve_cast(inst).decision == solve_exact(inst).decision


def test_cast_partition_11():
    inst = reduce_partition(PartitionInstance((1, 1)))
    assert solve_cast(inst).value == 4


def test_cast_gap_on_crafted_instance():
    # Channel 0 completes either service; the tie goes to service 0, which
    # also owns the only useful rate on channel 1.
    inst = make_instance([[10, 10], [10, 0]], [10, 10], [1, 1])
    assert solve_cast(inst).value == 2
    assert solve_exact(inst).value == 4


def test_cast_gap_found_by_search():
    rng = np.random.default_rng(2024)
    for _ in range(5000):
        rates = rng.integers(1, 11, size=(2, 2))
        inst = make_instance(rates, rng.integers(1, 21, size=2), rng.integers(1, 4, size=2),
                             menu=(1, 2))
        if solve_cast(inst).value < brute_force_optimum(inst).value - 1e-9:
            break
    else:
        pytest.fail("no 2x2 instance with a CAST gap found")


def test_cast_kernel_matches_reference():
    rng = np.random.default_rng(99)
    for _ in range(500):
        inst = random_instance(rng, real=bool(rng.integers(2)), overhead=float(rng.choice([0, 0.5])))
        res = solve_cast(inst)
        audit(inst, res)
        assert res.decision == cast_reference(inst)


def _cast_ops(k, n, big_l):
    inst = make_instance(np.full((k, n), 1.0), [1e9] * n, [big_l + 5] * n,
                         menu=tuple(range(1, big_l + 1)))
    return solve_cast(inst).stats["evaluations"]


@pytest.mark.parametrize("axis", ["channels", "services", "tti"])
def test_cast_work_linear(axis):
    base = {"k": 8, "n": 4, "big_l": 3}
    bigger = dict(base)
    bigger[{"channels": "k", "services": "n", "tti": "big_l"}[axis]] *= 2
    ratio = _cast_ops(**bigger) / _cast_ops(**base)
    assert 1.5 <= ratio <= 2.5


# ---- flat DP --------------------------------------------------------------------

def test_dp_two_services_complete():
    inst = make_instance(np.full((2, 2), 1.0), [1, 1], [1, 1])
    assert solve_flat_dp(inst).value == 4


def test_dp_single_service_takes_everything():
    inst = make_instance(np.full((3, 1), 2.0), [100], [4], menu=(1, 2))
    res = solve_flat_dp(inst)
    assert res.decision.owners() == (0, 0, 0)
    # Delta 2: 3 channels * 2 bits * 2 units = 12 of 100 bits, weight 1/4.
    assert res.value == pytest.approx(0.25 * 12 / 100)


def test_dp_rejects_non_flat():
    inst = make_instance([[1, 2]], [1, 1], [1, 1])
    assert not is_flat(inst)
    with pytest.raises(NotFlatError):
        solve_flat_dp(inst)


def test_dp_matches_exact_small():
    rng = np.random.default_rng(5)
    for _ in range(300):
        inst = random_flat_instance(rng, max_k=5, max_s=3)
        res = solve_flat_dp(inst)
        audit(inst, res)
        assert res.value == solve_exact(inst).value


def test_dp_work_quadratic_in_channels():
    def ops(k):
        return solve_flat_dp(make_instance(np.ones((k, 3)), [50] * 3, [5] * 3)).stats["table_ops"]

    assert 3.5 <= ops(64) / ops(32) <= 4.5


# ---- SDFS -----------------------------------------------------------------------

def test_sdfs_urgent_first():
    inst = make_instance([[10, 10]], [5, 5], [1, 5])
    assert solve_sdfs(inst, 1).decision.owners() == (0,)


def test_sdfs_stops_when_covered():
    inst = make_instance([[10], [30], [20]], [25], [3])
    assert solve_sdfs(inst, 1).decision.owners() == (-1, 0, -1)


def test_sdfs_needs_menu_tti():
    inst = make_instance([[1]], [1], [1])
    with pytest.raises(InvalidInputError):
        solve_sdfs(inst, 2)


def test_heuristics_never_beat_exact():
    rng = np.random.default_rng(17)
    for _ in range(300):
        inst = random_instance(rng, overhead=float(rng.choice([0.0, 0.5])))
        exact = solve_exact(inst).value
        for res in [solve_cast(inst)] + [solve_sdfs(inst, d) for d in inst.tti_menu]:
            audit(inst, res)
            assert res.value <= exact + 1e-9


def test_check_result_flags_tampering():
    inst = make_instance([[5]], [3], [1])
    res = solve_exact(inst)
    check_result(inst, res)
    tampered = type(res)(res.decision, res.value + 1.0, res.stats)
    with pytest.raises(AssertionError):
        check_result(inst, tampered)
    assert objective_value(inst, res.decision) == res.value
