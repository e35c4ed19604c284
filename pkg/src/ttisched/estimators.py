"""Scheduler policies wrapped as scikit-learn style estimators.

The schedulers hold no learned state; ``fit`` only validates
hyper-parameters. What the estimator API buys is ``get_params`` /
``set_params`` / ``clone`` and a uniform ``predict`` so policies can be swept,
logged and compared like any other estimator::

    >>> sched = CastScheduler().fit()
    >>> decision = sched.predict(instance)          # doctest: +SKIP
    >>> clone(sched).set_params(fixed_tti=2)        # doctest: +SKIP
"""

from __future__ import annotations

from collections.abc import Iterable

from sklearn.base import BaseEstimator

from .exceptions import InvalidInputError
from .model import COMPLETION_TOL, Instance
from .solvers import (
    DEFAULT_NODE_BUDGET,
    SolveResult,
    solve_cast,
    solve_exact,
    solve_flat_dp,
    solve_sdfs,
)
from .validation import check_instance, check_positive_int, check_tti


class Scheduler(BaseEstimator):
    """Base class: subclasses implement :meth:`_solve` on a validated instance."""

    name = "base"

    def fit(self, X=None, y=None):
        if self.fixed_tti is not None:
            check_positive_int(self.fixed_tti, "fixed_tti")
        return self

    def _restrict(self, instance: Instance) -> Instance:
        if self.fixed_tti is None:
            return instance
        check_tti(instance, self.fixed_tti)
        return instance.with_menu((self.fixed_tti,))

    def solve(self, instance: Instance) -> SolveResult:
        instance = check_instance(instance)
        return self._solve(self._restrict(instance))

    def _solve(self, instance: Instance) -> SolveResult:
        raise NotImplementedError

    def predict(self, X):
        """Decision for one instance, or a list of decisions for an iterable."""
        if isinstance(X, Instance):
            return self.solve(X).decision
        if isinstance(X, Iterable):
            return [self.solve(x).decision for x in X]
        raise InvalidInputError(f"cannot schedule a {type(X).__name__}")

    def score(self, X, y=None) -> float:
        """Mean objective value over the given instances."""
        items = [X] if isinstance(X, Instance) else list(X)
        if not items:
            raise InvalidInputError("score needs at least one instance")
        return sum(self.solve(x).value for x in items) / len(items)

    @property
    def label(self) -> str:
        return self.name if self.fixed_tti is None else f"{self.name}:{self.fixed_tti}"


class ExactScheduler(Scheduler):
    name = "exact"

    def __init__(self, fixed_tti=None, node_budget=DEFAULT_NODE_BUDGET, tol=COMPLETION_TOL):
        self.fixed_tti = fixed_tti
        self.node_budget = node_budget
        self.tol = tol

    def _solve(self, instance):
        return solve_exact(instance, tol=self.tol, node_budget=self.node_budget)


class CastScheduler(Scheduler):
    name = "cast"

    def __init__(self, fixed_tti=None, tol=COMPLETION_TOL):
        self.fixed_tti = fixed_tti
        self.tol = tol

    def _solve(self, instance):
        return solve_cast(instance, tol=self.tol)


class FlatDPScheduler(Scheduler):
    name = "flat_dp"

    def __init__(self, fixed_tti=None, tol=COMPLETION_TOL):
        self.fixed_tti = fixed_tti
        self.tol = tol

    def _solve(self, instance):
        return solve_flat_dp(instance, tol=self.tol)


class SdfsScheduler(Scheduler):
    """Shortest-deadline-first baseline; ``fixed_tti=None`` uses the shortest menu entry."""

    name = "sdfs"

    def __init__(self, fixed_tti=None, tol=COMPLETION_TOL):
        self.fixed_tti = fixed_tti
        self.tol = tol

    def _restrict(self, instance):
        return instance

    def _solve(self, instance):
        tti = instance.tti_menu[0] if self.fixed_tti is None else self.fixed_tti
        return solve_sdfs(instance, tti, tol=self.tol)

    @property
    def label(self):
        return "sdfs" if self.fixed_tti is None else f"sdfs:{self.fixed_tti}"


SCHEDULERS = {
    cls.name: cls for cls in (ExactScheduler, CastScheduler, FlatDPScheduler, SdfsScheduler)
}


def make_scheduler(spec) -> Scheduler:
    """Build a scheduler from ``"name"`` or ``"name:tti"`` (e.g. ``"cast:2"``).

    A :class:`Scheduler` instance is passed through unchanged.
    """
    if isinstance(spec, Scheduler):
        return spec
    name, _, tti = str(spec).strip().lower().partition(":")
    name = name.replace("-", "_")
    if name not in SCHEDULERS:
        raise InvalidInputError(f"unknown policy {spec!r}; choose from {sorted(SCHEDULERS)}")
    fixed = None
    if tti:
        try:
            fixed = int(tti)
        except ValueError:
            raise InvalidInputError(f"bad TTI length in policy {spec!r}") from None
    return SCHEDULERS[name](fixed_tti=fixed).fit()
