"""Per-TTI scheduling policies.

Each solver takes an :class:`~ttisched.model.Instance` and returns a
:class:`SolveResult` whose ``value`` is recomputed through
:func:`~ttisched.model.objective_value`, so every policy is scored by the same
arithmetic.

Tie-breaking is fixed everywhere: a smaller TTI wins ties, then a lower
service index, then a lower channel index. For the exact solvers this is made
precise by the *canonical key* of a decision: the TTI length followed by each
channel's owner in channel order, with "unassigned" ranked after every
service. Among decisions within ``TIE_EPS`` of the optimum the smallest key
wins, after which :func:`release_idle_channels` hands back channels that
contribute nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import BudgetExceededError, NotFlatError, InvalidInputError
from .model import (
    COMPLETION_TOL,
    UNASSIGNED,
    Instance,
    ScheduleDecision,
    objective_value,
    validate_decision,
)

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure-Python fallback
    def njit(*args, **kwargs):
        return args[0] if args and callable(args[0]) else (lambda f: f)

TIE_EPS = 1e-9
DEFAULT_NODE_BUDGET = 500_000


@dataclass(frozen=True)
class SolveResult:
    decision: ScheduleDecision
    value: float
    stats: dict = field(default_factory=dict)


def _finish(instance, tti, owners, stats, tol=COMPLETION_TOL) -> SolveResult:
    decision = ScheduleDecision.from_owners(tti, owners, instance.num_services)
    return SolveResult(decision, objective_value(instance, decision, tol, check=False), stats)


def release_idle_channels(instance: Instance, tti: int, owners, tol=COMPLETION_TOL) -> list:
    """Unassign, in channel order, every channel whose removal leaves the
    objective exactly unchanged (zero-rate links, surplus on finished services)."""
    owners = list(owners)
    n_sv = instance.num_services
    value = objective_value(instance, ScheduleDecision.from_owners(tti, owners, n_sv), tol, False)
    for i, s in enumerate(owners):
        if s == UNASSIGNED:
            continue
        owners[i] = UNASSIGNED
        if objective_value(instance, ScheduleDecision.from_owners(tti, owners, n_sv), tol, False) != value:
            owners[i] = s
    return owners


def canonical_key(tti: int, owners, num_services: int) -> tuple:
    return (tti, *(num_services if s == UNASSIGNED else s for s in owners))


@dataclass(frozen=True, eq=False)
class IlpView:
    """The fixed-TTI subproblem solved for one candidate length.

    ``feasible[i, s]`` is true when channel ``i`` may carry service ``s``:
    the service is still alive for the whole TTI and the CSI stays valid that
    long. ``effective_rates`` are bits deliverable per TTI, i.e. the per-unit
    rate times the airtime left after signaling.
    """

    tti: int
    eligible: tuple[int, ...]
    feasible: np.ndarray
    effective_rates: np.ndarray
    residual: np.ndarray
    norm_weights: np.ndarray
    bonus: int

    def served(self, owners) -> np.ndarray:
        beta = np.zeros(len(self.residual))
        for i, s in enumerate(owners):
            if s != UNASSIGNED:
                beta[s] += self.effective_rates[i, s]
        return np.minimum(beta, self.residual)

    def completed(self, owners, tol=COMPLETION_TOL) -> np.ndarray:
        beta = self.served(owners)
        return self.residual - beta <= tol

    def value(self, owners, tol=COMPLETION_TOL) -> float:
        beta = self.served(owners)
        y = self.completed(owners, tol)
        return float(np.dot(self.norm_weights, beta) + self.bonus * int(y.sum()))


def build_ilp_view(instance: Instance, tti: int) -> IlpView:
    deadlines = instance.deadlines
    demand = instance.demands
    alive = deadlines >= tti
    feasible = (instance.valid_for >= tti) & alive[None, :]
    eff = (tti - instance.signaling_overhead) * instance.rates
    weights = 1.0 / deadlines
    return IlpView(
        tti=tti,
        eligible=tuple(int(s) for s in np.flatnonzero(alive)),
        feasible=feasible,
        effective_rates=np.where(feasible, eff, 0.0),
        residual=demand,
        norm_weights=weights / demand,
        bonus=instance.completion_bonus,
    )


class _BranchAndBound:
    """Depth-first search over channel owners for one fixed TTI length."""

    def __init__(self, view: IlpView, tol, budget, nodes_so_far=0):
        self.view = view
        self.tol = tol
        self.budget = budget
        self.nodes = nodes_so_far
        n_ch, n_sv = view.feasible.shape
        self.n_sv = n_sv
        self.rates = view.effective_rates.tolist()
        self.w = view.norm_weights.tolist()
        self.q = view.residual.tolist()
        self.domains = [
            [int(s) for s in np.flatnonzero(view.feasible[i])] for i in range(n_ch)
        ]
        # Fattest channels first so the incumbent is strong early.
        best_rate = [max((self.rates[i][s] for s in d), default=-1.0) for i, d in enumerate(self.domains)]
        self.order = [
            i
            for i in sorted(range(n_ch), key=lambda i: (-best_rate[i], i))
            if self.domains[i]
        ]
        self.owners = [UNASSIGNED] * n_ch
        self.best_value = -math.inf
        self.best_key = None
        self.best_owners = None

    def run(self):
        served = [0.0] * self.n_sv
        self._visit(0, served, 0.0, 0)
        return self.best_value, self.best_owners

    def _bound(self, pos, served, utility, n_done):
        m = self.view.bonus
        extra = 0.0
        capacity = 0.0
        reach = [0.0] * self.n_sv
        for i in self.order[pos:]:
            best_gain = 0.0
            best_cap = 0.0
            for s in self.domains[i]:
                res = self.q[s] - served[s]
                if res <= self.tol:
                    continue
                r = self.rates[i][s]
                gain = self.w[s] * (r if r < res else res)
                if gain > best_gain:
                    best_gain = gain
                if r > best_cap:
                    best_cap = r
                reach[s] += r
            extra += best_gain
            capacity += best_cap
        if m == 0:
            return utility + extra + m * n_done
        # Completion bonus: fit the smallest individually reachable residuals
        # into the pooled remaining capacity.
        residuals = sorted(
            self.q[s] - served[s]
            for s in range(self.n_sv)
            if self.q[s] - served[s] > self.tol and self.q[s] - served[s] - reach[s] <= self.tol
        )
        more = 0
        for res in residuals:
            if res - capacity > self.tol:
                break
            capacity -= res
            more += 1
        return utility + extra + m * (n_done + more)

    def _visit(self, pos, served, utility, n_done):
        self.nodes += 1
        if self.nodes > self.budget:
            raise BudgetExceededError(
                f"exact search exceeded {self.budget} nodes; "
                "reduce the number of channels or cap the active services"
            )
        m = self.view.bonus
        if pos == len(self.order):
            value = utility + m * n_done
            key = canonical_key(self.view.tti, self.owners, self.n_sv)
            if value > self.best_value + TIE_EPS:
                self.best_value = value
            elif not (value >= self.best_value - TIE_EPS and key < self.best_key):
                return
            else:
                self.best_value = max(value, self.best_value)
            self.best_key = key
            self.best_owners = list(self.owners)
            return
        if self.best_owners is not None:
            if self._bound(pos, served, utility, n_done) < self.best_value - TIE_EPS:
                return
        i = self.order[pos]
        children = []
        done_taken = False
        for s in self.domains[i]:
            res = self.q[s] - served[s]
            if res <= self.tol:
                # Extra capacity to a finished service changes nothing, so only
                # the lowest-index finished service needs exploring.
                if done_taken:
                    continue
                done_taken = True
                children.append((0.0, s, 0.0, False))
                continue
            r = self.rates[i][s]
            finishes = res - r <= self.tol
            gain = self.w[s] * (res if finishes else r)
            children.append((gain + (m if finishes else 0), s, gain, finishes))
        children.sort(key=lambda c: (-c[0], c[1]))
        for _, s, gain, finishes in children:
            self.owners[i] = s
            served[s] += self.rates[i][s]
            self._visit(pos + 1, served, utility + gain, n_done + finishes)
            served[s] -= self.rates[i][s]
        self.owners[i] = UNASSIGNED


def solve_exact(instance: Instance, tol=COMPLETION_TOL, node_budget=DEFAULT_NODE_BUDGET) -> SolveResult:
    """Optimal TTI length and assignment by a TTI sweep plus branch-and-bound.

    Raises :class:`BudgetExceededError` if the search would visit more than
    ``node_budget`` nodes in total.
    """
    n_ch, n_sv = instance.rates.shape
    best = None
    nodes = 0
    for tti in instance.tti_menu:
        view = build_ilp_view(instance, tti)
        if not view.eligible:
            continue
        bb = _BranchAndBound(view, tol, node_budget, nodes)
        value, owners = bb.run()
        nodes = bb.nodes
        if best is None or value > best[0] + TIE_EPS:
            best = (value, tti, owners)
    stats = {"nodes": nodes}
    if best is None:
        return _finish(instance, instance.tti_menu[0], [UNASSIGNED] * n_ch, stats, tol)
    return _finish(instance, best[1], release_idle_channels(instance, best[1], best[2], tol), stats, tol)


@njit(cache=True)
def _cast_kernel(rates, valid, demand, deadline, menu, overhead, bonus, tol):
    n_ch, n_sv = rates.shape
    evaluations = 0
    best_g = -np.inf
    best_tti = menu[0]
    best_owners = np.full(n_ch, UNASSIGNED, dtype=np.int64)
    weight = 1.0 / deadline
    for tti in menu:
        airtime = tti - overhead
        # Services that cannot survive this TTI never enter the pool.
        pool = np.empty(n_sv, dtype=np.int64)
        n_pool = 0
        for s in range(n_sv):
            evaluations += 1
            if deadline[s] - tti >= 0:
                pool[n_pool] = s
                n_pool += 1
        backlog = demand.copy()
        term = np.zeros(n_sv)
        owners = np.full(n_ch, UNASSIGNED, dtype=np.int64)
        g_total = 0.0
        for i in range(n_ch):
            g_max = -np.inf
            s_max = UNASSIGNED
            q_max = 0.0
            for k in range(n_pool):
                s = pool[k]
                evaluations += 1
                if tti <= valid[i, s]:
                    q_temp = backlog[s] - airtime * rates[i, s]
                    if q_temp <= tol:
                        q_temp = 0.0
                    g = weight[s] * ((demand[s] - q_temp) / demand[s])
                    if q_temp == 0.0:
                        g += bonus
                    if g > g_max:
                        g_max = g
                        s_max = s
                        q_max = q_temp
            if s_max == UNASSIGNED:
                continue
            owners[i] = s_max
            g_total += g_max - term[s_max]
            term[s_max] = g_max
            backlog[s_max] = q_max
            if q_max == 0.0:
                # Drop the finished service, keeping pool order.
                k = 0
                while pool[k] != s_max:
                    k += 1
                for k2 in range(k, n_pool - 1):
                    pool[k2] = pool[k2 + 1]
                n_pool -= 1
        if g_total > best_g:
            best_g = g_total
            best_tti = tti
            best_owners = owners
    return best_tti, best_owners, evaluations


def solve_cast(instance: Instance, tol=COMPLETION_TOL) -> SolveResult:
    """Greedy channel-by-channel allocation, repeated for every TTI length.

    For each candidate length, channels are visited in index order and each
    goes to the eligible service whose objective term would be largest with
    that channel added (lowest index on ties). A service leaves the candidate
    pool once fully served. The length whose allocation scores highest wins,
    earlier lengths keeping ties.

    ``stats["evaluations"]`` counts one deadline check per service and length
    plus every (channel, pooled service) pair examined.
    """
    tti, owners, evaluations = _cast_kernel(
        instance.rates,
        instance.valid_for,
        instance.demands,
        instance.deadlines.astype(float),
        np.array(instance.tti_menu, dtype=np.int64),
        instance.signaling_overhead,
        float(instance.completion_bonus),
        float(tol),
    )
    return _finish(instance, int(tti), owners.tolist(), {"evaluations": int(evaluations)}, tol)


def is_flat(instance: Instance) -> bool:
    r, t = instance.rates, instance.valid_for
    return bool(np.all(r == r.flat[0]) and np.all(t == t.flat[0])) if r.size else True


def solve_flat_dp(instance: Instance, tol=COMPLETION_TOL) -> SolveResult:
    """Exact optimum for flat channels via a services-by-channels table.

    With identical CSI everywhere only the channel *count* given to each
    service matters. Row ``s`` of the table holds the best value for the first
    ``s`` services using up to ``k`` channels; filling a row costs
    O(K^2), giving O(|S| K^2) per TTI length. Channels are handed out by
    lowest index in service order.
    """
    if not is_flat(instance):
        raise NotFlatError("flat-channel DP requires identical CSI on every channel-service pair")
    n_ch, n_sv = instance.rates.shape
    rate = float(instance.rates.flat[0]) if n_sv else 0.0
    valid = int(instance.valid_for.flat[0]) if n_sv else 0
    m = instance.completion_bonus
    table_ops = 0
    best = None
    for tti in instance.tti_menu:
        airtime = tti - instance.signaling_overhead
        usable = valid >= tti
        # value[s][j]: objective term of service s holding j channels.
        gains = []
        for svc in instance.services:
            row = [0.0] * (n_ch + 1)
            if usable and svc.deadline >= tti:
                total = 0
                for j in range(1, n_ch + 1):
                    total += rate
                    residual = svc.demand - airtime * total
                    q_new = 0.0 if residual <= tol else residual
                    row[j] = svc.weight * ((svc.demand - q_new) / svc.demand)
                    if q_new == 0.0:
                        row[j] += m
            gains.append(row)
        h_prev = [0.0] * (n_ch + 1)
        choice = []
        for s in range(n_sv):
            h = [0.0] * (n_ch + 1)
            pick = [0] * (n_ch + 1)
            g = gains[s]
            for k in range(n_ch + 1):
                best_v, best_j = -math.inf, 0
                for j in range(k + 1):
                    table_ops += 1
                    v = g[j] + h_prev[k - j]
                    if v > best_v + TIE_EPS:
                        best_v, best_j = v, j
                h[k], pick[k] = best_v, best_j
            choice.append(pick)
            h_prev = h
        value = h_prev[n_ch]
        if best is None or value > best[0] + TIE_EPS:
            counts = [0] * n_sv
            k = n_ch
            for s in range(n_sv - 1, -1, -1):
                counts[s] = choice[s][k]
                k -= counts[s]
            best = (value, tti, counts)
    owners = [UNASSIGNED] * n_ch
    nxt = 0
    for s, c in enumerate(best[2]):
        for _ in range(c):
            owners[nxt] = s
            nxt += 1
    return _finish(instance, best[1], owners, {"table_ops": table_ops}, tol)


def solve_sdfs(instance: Instance, fixed_tti: int, tol=COMPLETION_TOL) -> SolveResult:
    """Shortest-deadline-first baseline at a fixed TTI length.

    Services that survive the TTI are taken in deadline order (ties by id);
    each grabs its best remaining channels by decreasing rate until its
    backlog is covered or nothing usable is left.
    """
    if fixed_tti not in instance.tti_menu:
        raise InvalidInputError(f"fixed TTI {fixed_tti} not in menu {instance.tti_menu}")
    n_ch, _ = instance.rates.shape
    airtime = fixed_tti - instance.signaling_overhead
    # Per-service rows as plain lists: cheaper than numpy scalars in the loops.
    rates = instance.rates.T.tolist()
    valid = instance.valid_for.T.tolist()
    owners = [UNASSIGNED] * n_ch
    order = sorted(
        (s for s, svc in enumerate(instance.services) if svc.deadline >= fixed_tti),
        key=lambda s: (instance.services[s].deadline, instance.services[s].id, s),
    )
    steps = 0
    free = n_ch
    for s in order:
        if not free:
            break
        r_s, t_s = rates[s], valid[s]
        candidates = sorted(
            (i for i in range(n_ch) if owners[i] == UNASSIGNED and t_s[i] >= fixed_tti),
            key=lambda i: (-r_s[i], i),
        )
        need = instance.services[s].demand
        total = 0.0
        for i in candidates:
            steps += 1
            free -= 1
            owners[i] = s
            total += r_s[i]
            if need - airtime * total <= tol:
                break
    return _finish(instance, fixed_tti, owners, {"steps": steps}, tol)


def check_result(instance: Instance, result: SolveResult, tol=COMPLETION_TOL) -> None:
    """Assert a result is feasible and its value matches a fresh evaluation."""
    violations = validate_decision(instance, result.decision)
    assert not violations, violations
    fresh = objective_value(instance, result.decision, tol)
    assert abs(fresh - result.value) <= 1e-9, (fresh, result.value)
