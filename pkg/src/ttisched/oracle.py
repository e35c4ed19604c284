"""Ground truth for testing the solvers.

``brute_force_optimum`` enumerates every feasible assignment for every TTI
length. It shares no search logic with the branch-and-bound solver, only the
objective arithmetic, so agreement between the two is meaningful.

The Partition reduction maps a multiset of positive integers onto a
two-service, one-unit scheduling instance whose optimum reaches 4 exactly
when the multiset splits into two halves of equal sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import BudgetExceededError, InvalidInputError, NotReducibleError
from .model import (
    COMPLETION_TOL,
    UNASSIGNED,
    Instance,
    ScheduleDecision,
    ServiceClass,
    ServiceState,
    objective_value,
)
from .solvers import TIE_EPS, SolveResult, release_idle_channels, solve_exact

MAX_EVALUATIONS = 10**7
PARTITION_MAX_ITEMS = 20
_CHUNK = 1 << 18


@dataclass(frozen=True)
class PartitionInstance:
    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(p) for p in self.items)
        if not items:
            raise InvalidInputError("a Partition instance needs at least one item")
        if any(p < 1 for p in items):
            raise InvalidInputError(f"Partition items must be positive integers, got {items}")
        object.__setattr__(self, "items", items)

    @property
    def total(self) -> int:
        return sum(self.items)


@dataclass(frozen=True)
class DecisionThreshold:
    f: float

    def __post_init__(self):
        if not self.f > 0:
            raise InvalidInputError(f"threshold must be positive, got {self.f}")


# Both services complete: 1 + 1 utility plus a bonus of M = 1 each.
PARTITION_THRESHOLD = DecisionThreshold(4.0)


def _values(instance, tti, domains, start, stop, tol):
    """Objective of enumerated assignments ``start..stop`` (mixed radix, channel 0 most significant)."""
    n_ch, n_sv = instance.rates.shape
    idx = np.arange(start, stop, dtype=np.int64)
    codes = np.empty((len(idx), n_ch), dtype=np.int64)
    for i in range(n_ch - 1, -1, -1):
        radix = len(domains[i])
        codes[:, i] = domains[i][idx % radix]
        idx //= radix
    airtime = tti - instance.signaling_overhead
    utility = np.zeros(len(codes))
    completed = np.zeros(len(codes), dtype=np.int64)
    for s, svc in enumerate(instance.services):
        total = np.zeros(len(codes))
        for i in range(n_ch):
            total += np.where(codes[:, i] == s, instance.rates[i, s], 0.0)
        residual = svc.demand - airtime * total
        q_new = np.where(residual <= tol, 0.0, residual)
        utility += (1.0 / svc.deadline) * ((svc.demand - q_new) / svc.demand)
        completed += q_new == 0.0
    return utility + instance.completion_bonus * completed, codes


def brute_force_optimum(instance: Instance, tol=COMPLETION_TOL, max_evaluations=MAX_EVALUATIONS) -> SolveResult:
    """Exhaustive optimum over all TTI lengths and feasible assignments.

    Refuses with :class:`BudgetExceededError` when ``(|eligible| + 1) ** K``
    exceeds ``max_evaluations`` for any TTI length; it never approximates.
    Ties resolve to the same canonical decision the exact solver returns.
    """
    n_ch, n_sv = instance.rates.shape
    for tti in instance.tti_menu:
        alive = sum(1 for s in instance.services if s.deadline >= tti)
        if alive and (alive + 1) ** n_ch > max_evaluations:
            raise BudgetExceededError(
                f"brute force needs ({alive}+1)^{n_ch} evaluations at TTI {tti}, "
                f"over the {max_evaluations} limit"
            )
    best_value, best_tti, best_owners = -math.inf, instance.tti_menu[0], [UNASSIGNED] * n_ch
    evaluations = 0
    for tti in instance.tti_menu:
        alive = np.array([s.deadline >= tti for s in instance.services], dtype=bool)
        if not alive.any():
            continue
        # Services ascending, then "unassigned" (code n_sv) last: enumeration
        # order is then canonical-key order.
        domains = [
            np.array(
                [s for s in range(n_sv) if alive[s] and instance.valid_for[i, s] >= tti] + [n_sv],
                dtype=np.int64,
            )
            for i in range(n_ch)
        ]
        count = math.prod(len(d) for d in domains)
        evaluations += count
        top = -math.inf
        for start in range(0, count, _CHUNK):
            values, _ = _values(instance, tti, domains, start, min(start + _CHUNK, count), tol)
            top = max(top, float(values.max()))
        if not top > best_value + TIE_EPS:
            continue
        for start in range(0, count, _CHUNK):
            values, codes = _values(instance, tti, domains, start, min(start + _CHUNK, count), tol)
            hits = np.flatnonzero(values >= top - TIE_EPS)
            if len(hits):
                row = codes[hits[0]]
                best_owners = [UNASSIGNED if c == n_sv else int(c) for c in row]
                break
        best_value, best_tti = top, tti
    best_owners = release_idle_channels(instance, best_tti, best_owners, tol)
    decision = ScheduleDecision.from_owners(best_tti, best_owners, n_sv)
    return SolveResult(decision, objective_value(instance, decision, tol), {"evaluations": evaluations})


def reduce_partition(p: PartitionInstance) -> Instance:
    """Scheduling instance whose optimum is 4 iff ``p`` splits evenly.

    Two services, one channel per item with rate equal to the item for both
    services, deadlines and TTI of one unit, no signaling overhead, and each
    service owed half the total.
    """
    if p.total % 2:
        raise NotReducibleError(f"item sum {p.total} is odd; no equal split can exist")
    half = p.total / 2
    services = [ServiceState(id=s, demand=half, deadline=1, service_class=ServiceClass.MCC) for s in (0, 1)]
    rates = np.array([[float(x), float(x)] for x in p.items])
    valid = np.ones(rates.shape, dtype=np.int64)
    return Instance(tuple(services), rates, valid, (1,), 0.0)


def subset_sum_splits(items) -> bool:
    """Direct check: does some sub-multiset hit exactly half the total?"""
    total = sum(items)
    if total % 2:
        return False
    reachable = {0}
    for x in items:
        reachable |= {r + x for r in reachable}
    return total // 2 in reachable


def check_partition_equiv(p: PartitionInstance) -> bool:
    """Answer Partition through the scheduling reduction and cross-check it.

    Instances too large for enumeration fall back to the exact solver.
    """
    if len(p.items) > PARTITION_MAX_ITEMS:
        raise InvalidInputError(f"at most {PARTITION_MAX_ITEMS} items supported, got {len(p.items)}")
    instance = reduce_partition(p)
    try:
        result = brute_force_optimum(instance)
    except BudgetExceededError:
        result = solve_exact(instance, node_budget=10**8)
    via_schedule = result.value >= PARTITION_THRESHOLD.f - TIE_EPS
    direct = subset_sum_splits(p.items)
    if via_schedule != direct:
        raise AssertionError(
            f"reduction disagrees with subset-sum on {p.items}: optimum {result.value}, split={direct}"
        )
    return via_schedule
