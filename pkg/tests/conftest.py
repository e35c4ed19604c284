"""Shared instance builders and the always-on invariant audit."""

from __future__ import annotations

import numpy as np
import pytest

from ttisched.model import (
    Instance,
    ServiceClass,
    ServiceState,
    _new_backlogs,
    objective_value,
    validate_decision,
)


def make_instance(rates, demands, deadlines, menu=(1,), overhead=0.0, valid=None, classes=None):
    rates = np.asarray(rates, dtype=float)
    if rates.ndim == 1:
        rates = rates[:, None]
    services = tuple(
        ServiceState(s, float(q), int(d), (classes or ["MCC"] * len(demands))[s])
        for s, (q, d) in enumerate(zip(demands, deadlines))
    )
    if valid is None:
        valid = np.full(rates.shape, max(menu), dtype=np.int64)
    return Instance(services, rates, valid, tuple(menu), overhead)


def random_instance(rng, max_k=6, max_s=3, max_l=3, rate_hi=10, demand_hi=40,
                    deadline_hi=None, overhead=0.0, real=False):
    """Small random instance with integer (or real) rates and demands."""
    k = int(rng.integers(1, max_k + 1))
    n = int(rng.integers(1, max_s + 1))
    big_l = int(rng.integers(1, max_l + 1))
    menu = tuple(range(1, big_l + 1))
    if real:
        rates = rng.uniform(0.0, rate_hi, size=(k, n))
        demands = rng.uniform(1.0, demand_hi, size=n)
    else:
        rates = rng.integers(1, rate_hi + 1, size=(k, n))
        demands = rng.integers(1, demand_hi + 1, size=n)
    deadlines = rng.integers(1, (deadline_hi or big_l + 2) + 1, size=n)
    valid = rng.integers(1, big_l + 1, size=(k, n))
    return make_instance(rates, demands, deadlines, menu, overhead, valid)


def random_flat_instance(rng, max_k=10, max_s=4, max_l=3):
    k = int(rng.integers(1, max_k + 1))
    n = int(rng.integers(1, max_s + 1))
    big_l = int(rng.integers(1, max_l + 1))
    rate = int(rng.integers(1, 11))
    validity = int(rng.integers(1, big_l + 1))
    demands = rng.integers(1, 41, size=n)
    deadlines = rng.integers(1, big_l + 3, size=n)
    return make_instance(
        np.full((k, n), rate), demands, deadlines, tuple(range(1, big_l + 1)), 0.0,
        np.full((k, n), validity),
    )


def utility(instance, decision) -> float:
    """U alone: the weighted emptying rates, without the completion bonus."""
    q_new = _new_backlogs(instance, decision, 1e-9)
    d = instance.demands
    return float(np.sum((1.0 / instance.deadlines) * (d - q_new) / d))


def audit(instance, result) -> None:
    """Invariants every emitted decision must satisfy."""
    violations = validate_decision(instance, result.decision)
    assert not violations, violations
    u = utility(instance, result.decision)
    n = instance.num_services
    assert -1e-12 <= u <= n + 1e-9
    assert result.value <= n + instance.completion_bonus * n + 1e-9
    assert abs(objective_value(instance, result.decision) - result.value) <= 1e-9


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["make_instance", "random_instance", "random_flat_instance", "utility", "audit",
           "ServiceClass"]


# Acceptance verdict lines, echoed in the terminal summary.
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: s.split("criterion ", 1)[1]):
            terminalreporter.write_line(line)
