"""Domain types and state-transition semantics for scalable-TTI channel allocation.

Time is counted in integer time units; demands and rates are bits and bits per
time unit. An :class:`Instance` is the snapshot the scheduler sees at the start
of one TTI, and a :class:`ScheduleDecision` is its answer: a TTI length plus a
binary channel-to-service assignment.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConstraintViolationError, InvalidInputError

# Residual backlog at or below this many bits counts as fully served.
COMPLETION_TOL = 1e-9

UNASSIGNED = -1


class ServiceClass(str, enum.Enum):
    MCC = "MCC"
    MBB = "MBB"


@dataclass(frozen=True)
class ServiceState:
    """One active service: bits still owed and time units left to deliver them."""

    id: int
    demand: float
    deadline: int
    service_class: ServiceClass = ServiceClass.MCC
    arrival_time: int = 0

    def __post_init__(self):
        if self.demand < 0:
            raise InvalidInputError(f"service {self.id}: negative demand {self.demand}")
        if self.deadline < 0:
            raise InvalidInputError(f"service {self.id}: negative deadline {self.deadline}")
        if not isinstance(self.service_class, ServiceClass):
            object.__setattr__(self, "service_class", ServiceClass(self.service_class))

    @property
    def weight(self) -> float:
        """Urgency weight, the reciprocal of the remaining deadline."""
        if self.deadline < 1:
            raise InvalidInputError(f"service {self.id} has no time left; weight undefined")
        return 1.0 / self.deadline

    def evolve(self, demand, deadline) -> "ServiceState":
        """Copy with a new backlog and deadline (the simulator's hot path)."""
        if demand < 0 or deadline < 0:
            raise InvalidInputError(f"service {self.id}: negative demand or deadline")
        new = object.__new__(ServiceState)
        new.__dict__.update(self.__dict__, demand=demand, deadline=deadline)
        return new


@dataclass(frozen=True)
class ChannelCsi:
    rate: float
    valid_for: int

    def __post_init__(self):
        if self.rate < 0:
            raise InvalidInputError(f"negative rate {self.rate}")
        if self.valid_for < 1:
            raise InvalidInputError(f"CSI validity must be >= 1, got {self.valid_for}")


@dataclass(frozen=True, eq=False)
class Instance:
    """Scheduling snapshot for one TTI.

    ``rates`` and ``valid_for`` are K x |services| arrays indexed
    ``[channel, service]``; use :meth:`from_csi` to build one from a matrix of
    :class:`ChannelCsi` and :meth:`channel_csi` to read a single entry back.
    """

    services: tuple[ServiceState, ...]
    rates: np.ndarray
    valid_for: np.ndarray
    tti_menu: tuple[int, ...]
    signaling_overhead: float = 0.0

    def __post_init__(self):
        services = tuple(self.services)
        rates = np.array(self.rates, dtype=float, copy=True)
        valid_for = np.array(self.valid_for, dtype=np.int64, copy=True)
        if rates.ndim != 2 or rates.shape[1] != len(services):
            raise InvalidInputError(
                f"rates must have shape (K, {len(services)}), got {rates.shape}"
            )
        if valid_for.shape != rates.shape:
            raise InvalidInputError(
                f"valid_for shape {valid_for.shape} does not match rates {rates.shape}"
            )
        if rates.shape[0] < 1:
            raise InvalidInputError("an instance needs at least one channel")
        if np.any(rates < 0) or not np.all(np.isfinite(rates)):
            raise InvalidInputError("rates must be finite and nonnegative")
        if np.any(valid_for < 1):
            raise InvalidInputError("CSI validity must be >= 1 time unit")
        menu = tuple(sorted({int(d) for d in self.tti_menu}))
        if not menu or menu[0] < 1:
            raise InvalidInputError(f"TTI menu must hold positive lengths, got {self.tti_menu}")
        overhead = float(self.signaling_overhead)
        if not 0.0 <= overhead <= 1.0:
            raise InvalidInputError(f"signaling overhead {overhead} outside [0, 1]")
        if overhead >= menu[0]:
            raise InvalidInputError(
                f"signaling overhead {overhead} leaves no airtime in a {menu[0]}-unit TTI"
            )
        for s in services:
            if s.demand <= 0 or s.deadline < 1:
                raise InvalidInputError(
                    f"service {s.id} is not active (demand={s.demand}, deadline={s.deadline})"
                )
        demands = np.array([svc.demand for svc in services], dtype=float)
        deadlines = np.array([svc.deadline for svc in services], dtype=np.int64)
        for arr in (rates, valid_for, demands, deadlines):
            arr.flags.writeable = False
        object.__setattr__(self, "_demands", demands)
        object.__setattr__(self, "_deadlines", deadlines)
        object.__setattr__(self, "services", services)
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "valid_for", valid_for)
        object.__setattr__(self, "tti_menu", menu)
        object.__setattr__(self, "signaling_overhead", overhead)

    @classmethod
    def trusted(cls, services, rates, valid_for, tti_menu, signaling_overhead=0.0) -> "Instance":
        """Build without validation from data the caller already guarantees.

        ``rates`` must be float64 and ``valid_for`` int64, both of shape
        (K, len(services)); ``tti_menu`` sorted and unique; every service
        active. The simulator uses this on its hot path.
        """
        out = object.__new__(cls)
        demands = np.array([svc.demand for svc in services], dtype=float)
        deadlines = np.array([svc.deadline for svc in services], dtype=np.int64)
        for arr in (rates, valid_for, demands, deadlines):
            arr.flags.writeable = False
        out.__dict__.update(
            services=tuple(services), rates=rates, valid_for=valid_for, tti_menu=tti_menu,
            signaling_overhead=float(signaling_overhead), _demands=demands, _deadlines=deadlines,
        )
        return out

    @classmethod
    def from_csi(cls, services, csi, tti_menu, signaling_overhead=0.0) -> "Instance":
        """Build from a ``[channel][service]`` matrix of :class:`ChannelCsi`."""
        services = tuple(services)
        rows = [list(row) for row in csi]
        rates = np.array([[c.rate for c in row] for row in rows], dtype=float).reshape(
            len(rows), len(services)
        )
        valid = np.array([[c.valid_for for c in row] for row in rows], dtype=np.int64).reshape(
            len(rows), len(services)
        )
        return cls(services, rates, valid, tuple(tti_menu), signaling_overhead)

    @property
    def demands(self) -> np.ndarray:
        """Per-service backlog in bits, in service order."""
        return self._demands

    @property
    def deadlines(self) -> np.ndarray:
        return self._deadlines

    @property
    def num_channels(self) -> int:
        return self.rates.shape[0]

    @property
    def num_services(self) -> int:
        return len(self.services)

    @property
    def max_tti(self) -> int:
        return self.tti_menu[-1]

    @property
    def completion_bonus(self) -> int:
        """The constant M = |S_n| - 1 multiplying the completed-service count."""
        return max(len(self.services) - 1, 0)

    def channel_csi(self, channel: int, service: int) -> ChannelCsi:
        return ChannelCsi(float(self.rates[channel, service]), int(self.valid_for[channel, service]))

    def with_menu(self, tti_menu) -> "Instance":
        menu = tuple(sorted({int(d) for d in tti_menu}))
        if not menu or menu[0] <= self.signaling_overhead:
            raise InvalidInputError(f"bad TTI menu {tti_menu}")
        # Arrays are read-only and already checked; share them.
        out = object.__new__(Instance)
        out.__dict__.update(self.__dict__)
        object.__setattr__(out, "tti_menu", menu)
        return out


@dataclass(frozen=True, eq=False)
class ScheduleDecision:
    """A TTI length and a K x |services| 0/1 assignment matrix."""

    tti_length: int
    assignment: np.ndarray

    def __post_init__(self):
        a = np.array(self.assignment, dtype=np.int8, copy=True)
        if a.ndim != 2:
            raise InvalidInputError(f"assignment must be 2-D, got shape {a.shape}")
        if np.any((a != 0) & (a != 1)):
            raise InvalidInputError("assignment entries must be 0 or 1")
        a.flags.writeable = False
        object.__setattr__(self, "assignment", a)
        object.__setattr__(self, "tti_length", int(self.tti_length))

    @classmethod
    def from_owners(cls, tti_length: int, owners: Sequence[int], num_services: int):
        """Build from a per-channel owner list, ``-1`` meaning unassigned."""
        owners = np.asarray(owners, dtype=np.int64).reshape(-1)
        if np.any((owners < UNASSIGNED) | (owners >= num_services)):
            raise InvalidInputError(f"owner index outside [-1, {num_services})")
        a = np.zeros((len(owners), num_services), dtype=np.int8)
        rows = np.flatnonzero(owners != UNASSIGNED)
        a[rows, owners[rows]] = 1
        # Built as 0/1 above, so the constructor's checks are skipped.
        a.flags.writeable = False
        out = object.__new__(cls)
        out.__dict__.update(tti_length=int(tti_length), assignment=a)
        return out

    @classmethod
    def idle(cls, num_channels: int, num_services: int, tti_length: int = 1):
        return cls(tti_length, np.zeros((num_channels, num_services), dtype=np.int8))

    def owners(self) -> tuple[int, ...]:
        """Per-channel owning service index (``-1`` if none).

        Raises if a channel is shared, since no single owner exists then.
        """
        out = []
        for i, row in enumerate(self.assignment):
            hits = np.flatnonzero(row)
            if len(hits) > 1:
                raise InvalidInputError(f"channel {i} is assigned to several services")
            out.append(int(hits[0]) if len(hits) else UNASSIGNED)
        return tuple(out)

    def channels_of(self, service: int) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.assignment[:, service]))

    def __eq__(self, other):
        if not isinstance(other, ScheduleDecision):
            return NotImplemented
        return self.tti_length == other.tti_length and np.array_equal(
            self.assignment, other.assignment
        )

    def __hash__(self):
        return hash((self.tti_length, self.assignment.tobytes(), self.assignment.shape))


@dataclass(frozen=True)
class TransitionOutcome:
    updated: tuple[ServiceState, ...]
    completed: tuple[int, ...]
    dropped: tuple[int, ...]
    served_bits: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Violation:
    constraint: str
    message: str

    def __str__(self):
        return f"[{self.constraint}] {self.message}"


def step_backlog(q_prev, delta, overhead, assigned_rates, tol=COMPLETION_TOL) -> float:
    """Backlog left after a TTI of ``delta`` units on the given channel rates.

    Residuals at or below ``tol`` snap to exactly zero.
    """
    if q_prev < 0:
        raise InvalidInputError(f"negative backlog {q_prev}")
    if delta < 1:
        raise InvalidInputError(f"TTI length must be >= 1, got {delta}")
    if not 0 <= overhead <= 1:
        raise InvalidInputError(f"overhead {overhead} outside [0, 1]")
    total = 0
    for r in assigned_rates:
        if r < 0:
            raise InvalidInputError(f"negative rate {r}")
        total += r
    residual = q_prev - (delta - overhead) * total
    return 0.0 if residual <= tol else float(residual)


def step_deadline(d_prev: int, delta: int) -> int:
    return max(d_prev - delta, 0)


def emptying_rate(q_prev, q_new) -> float:
    """Fraction of the previous backlog cleared during the TTI."""
    if q_prev <= 0:
        raise InvalidInputError("emptying rate is undefined for an empty backlog")
    if not 0 <= q_new <= q_prev:
        raise InvalidInputError(f"new backlog {q_new} outside [0, {q_prev}]")
    return (q_prev - q_new) / q_prev


def validate_decision(instance: Instance, decision: ScheduleDecision) -> list[Violation]:
    """Every feasibility violation of ``decision``; an empty list means valid."""
    a = decision.assignment
    if a.shape != instance.rates.shape:
        return [
            Violation(
                "shape",
                f"assignment shape {a.shape} does not match instance {instance.rates.shape}",
            )
        ]
    delta = decision.tti_length
    out = []
    if delta not in instance.tti_menu:
        out.append(Violation("tti_menu", f"TTI length {delta} not in menu {instance.tti_menu}"))
    used = a != 0
    if not used.any():
        return out
    for i in np.flatnonzero(used.sum(axis=1) > 1):
        users = [int(s) for s in np.flatnonzero(a[i])]
        out.append(
            Violation("channel_exclusive", f"channel {i} assigned to services {users}")
        )
    too_long = used & (instance.valid_for < delta)
    if too_long.any():
        for i, s in zip(*np.nonzero(too_long)):
            out.append(
                Violation(
                    "csi_validity",
                    f"channel {i} -> service {s}: TTI {delta} exceeds "
                    f"CSI validity {instance.valid_for[i, s]}",
                )
            )
    expiring = used & (instance.deadlines < delta)[None, :]
    if expiring.any():
        for i, s in zip(*np.nonzero(expiring)):
            out.append(
                Violation(
                    "deadline",
                    f"channel {i} -> service {s}: deadline {instance.deadlines[s]} "
                    f"shorter than TTI {delta}",
                )
            )
    return out


def _check(instance, decision):
    violations = validate_decision(instance, decision)
    if violations:
        raise ConstraintViolationError(violations)


def _new_backlogs(instance, decision, tol) -> np.ndarray:
    # Column sums run over channels in index order, matching a left fold.
    totals = np.where(decision.assignment != 0, instance.rates, 0.0).sum(axis=0)
    residual = instance.demands - (decision.tti_length - instance.signaling_overhead) * totals
    residual[residual <= tol] = 0.0
    return residual


def objective_value(
    instance: Instance, decision: ScheduleDecision, tol=COMPLETION_TOL, check=True
) -> float:
    """Weighted emptying-rate utility plus the completion bonus.

    Services left without channels contribute nothing, including those whose
    deadline is shorter than the TTI. ``check=False`` skips validation for
    callers that built the decision under the constraints themselves.
    """
    if check:
        _check(instance, decision)
    q_new = _new_backlogs(instance, decision, tol)
    demand = instance.demands
    terms = (1.0 / instance.deadlines) * ((demand - q_new) / demand)
    # Plain left-to-right sum, so equal decisions always score identically.
    utility = sum(terms.tolist(), 0.0)
    return utility + instance.completion_bonus * int(np.count_nonzero(q_new == 0.0))


_new_object = object.__new__


def advance_state(
    instance: Instance, decision: ScheduleDecision, tol=COMPLETION_TOL, check=True
) -> TransitionOutcome:
    """Apply one TTI and route each service to updated, completed or dropped.

    ``check=False`` skips re-validating a decision the caller already scored.
    """
    if check:
        _check(instance, decision)
    updated, completed, dropped, served = [], [], [], {}
    q_all = _new_backlogs(instance, decision, tol).tolist()
    d_all = np.maximum(instance.deadlines - decision.tti_length, 0).tolist()
    for svc, q_new, d_new in zip(instance.services, q_all, d_all):
        served[svc.id] = svc.demand - q_new
        if q_new == 0.0:
            completed.append(svc.id)
        elif d_new == 0:
            dropped.append(svc.id)
        else:
            # Inlined ServiceState.evolve; values are already known valid.
            new = _new_object(ServiceState)
            new.__dict__.update(svc.__dict__, demand=q_new, deadline=d_new)
            updated.append(new)
    return TransitionOutcome(tuple(updated), tuple(completed), tuple(dropped), served)
