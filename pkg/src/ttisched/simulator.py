"""Monte Carlo simulation of a single downlink cell under a per-TTI scheduler.

Three MCC sources and one MBB source emit services per time unit with
Bernoulli probabilities. At each scheduling instant the waiting services and
freshly drawn Rayleigh-faded CSI form an :class:`~ttisched.model.Instance`;
the scheduler's decision is applied and the clock jumps by the chosen TTI.

Randomness is counter-based (Philox) with one substream per block of arrival
slots and one per scheduling instant, so policies run on the same seed see
the same arrivals no matter how many draws they consume.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TextIO

import numpy as np
from sklearn.base import clone

from .estimators import make_scheduler
from .exceptions import BudgetExceededError, InvalidInputError, NotFlatError
from .model import Instance, ServiceClass, ServiceState, advance_state, step_deadline
from .validation import check_positive_int, check_probability

_ARRIVAL_STREAM = 1
_CSI_STREAM = 2
_ARRIVAL_BLOCK = 4096


@dataclass(frozen=True)
class SimConfig:
    """Experiment parameters; durations are in time units unless suffixed."""

    time_unit_ms: float = 0.1
    tti_menu: tuple[int, ...] = tuple(range(2, 11))
    overhead: float = 0.5
    num_channels: int = 16
    channel_bandwidth_hz: float = 5e5
    mean_snr_db: float = 5.0
    num_mcc_sources: int = 3
    num_mbb_sources: int = 1
    r_mcc: float = 0.1
    r_mbb: float = 0.2
    mcc_demand_bits: float = 1000.0
    mcc_deadline_units: int = 10
    mbb_demand_bits: float = 9000.0
    mbb_deadline_units: int = 100
    horizon_units: int = 10_000
    seed: int = 0
    # None: CSI valid for the longest TTI. (lo, hi): uniform integer validity.
    csi_validity: Optional[tuple[int, int]] = None
    flat_csi: bool = False
    # Offer at most this many of the most urgent services to the scheduler.
    service_cap: Optional[int] = None

    def __post_init__(self):
        menu = tuple(sorted({int(d) for d in self.tti_menu}))
        if not menu or menu[0] < 1:
            raise InvalidInputError(f"bad TTI menu {self.tti_menu}")
        object.__setattr__(self, "tti_menu", menu)
        check_probability(self.r_mcc, "r_mcc")
        check_probability(self.r_mbb, "r_mbb")
        if not 0 <= self.overhead < menu[0] or self.overhead > 1:
            raise InvalidInputError(f"overhead {self.overhead} must lie in [0, min(1, {menu[0]}))")
        check_positive_int(self.num_channels, "num_channels")
        check_positive_int(self.num_mcc_sources, "num_mcc_sources", 0)
        check_positive_int(self.num_mbb_sources, "num_mbb_sources", 0)
        check_positive_int(self.mcc_deadline_units, "mcc_deadline_units")
        check_positive_int(self.mbb_deadline_units, "mbb_deadline_units")
        if self.horizon_units < max(self.mcc_deadline_units, self.mbb_deadline_units):
            raise InvalidInputError("horizon must cover at least the longest deadline")
        if self.mcc_demand_bits <= 0 or self.mbb_demand_bits <= 0:
            raise InvalidInputError("service demands must be positive")
        if self.csi_validity is not None:
            lo, hi = (int(v) for v in self.csi_validity)
            if not 1 <= lo <= hi:
                raise InvalidInputError(f"bad CSI validity range {self.csi_validity}")
            object.__setattr__(self, "csi_validity", (lo, hi))
        if self.service_cap is not None:
            check_positive_int(self.service_cap, "service_cap")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInputError("seed must fit in 64 unsigned bits")

    @property
    def num_sources(self) -> int:
        return self.num_mcc_sources + self.num_mbb_sources

    @property
    def snr_linear(self) -> float:
        return 10.0 ** (self.mean_snr_db / 10.0)

    @property
    def bits_per_unit_per_hz(self) -> float:
        return self.channel_bandwidth_hz * self.time_unit_ms * 1e-3

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class RunMetrics:
    mcc_arrived: int = 0
    mcc_completed: int = 0
    mcc_dropped: int = 0
    mbb_arrived: int = 0
    mbb_completed: int = 0
    mbb_dropped: int = 0
    mbb_bits_served: float = 0.0
    elapsed_units: int = 0
    time_unit_ms: float = 0.1
    tti_histogram: Counter = field(default_factory=Counter)

    @property
    def mcc_active(self) -> int:
        return self.mcc_arrived - self.mcc_completed - self.mcc_dropped

    @property
    def mbb_active(self) -> int:
        return self.mbb_arrived - self.mbb_completed - self.mbb_dropped

    @property
    def mbb_throughput(self) -> float:
        """Bits per millisecond delivered to MBB services."""
        if self.elapsed_units == 0:
            return 0.0
        return self.mbb_bits_served / (self.elapsed_units * self.time_unit_ms)

    def pct_served(self, service_class) -> Optional[float]:
        """Completed share of resolved services, or None when none resolved."""
        cls = ServiceClass(service_class).value.lower()
        done = getattr(self, f"{cls}_completed")
        resolved = done + getattr(self, f"{cls}_dropped")
        return None if resolved == 0 else 100.0 * done / resolved

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        out = RunMetrics(time_unit_ms=self.time_unit_ms)
        for f in dataclasses.fields(self):
            if f.name in ("time_unit_ms", "tti_histogram"):
                continue
            setattr(out, f.name, getattr(self, f.name) + getattr(other, f.name))
        out.tti_histogram = self.tti_histogram + other.tti_histogram
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["tti_histogram"] = {str(k): v for k, v in sorted(self.tti_histogram.items())}
        d["mcc_active"] = self.mcc_active
        d["mbb_active"] = self.mbb_active
        d["mbb_throughput"] = self.mbb_throughput
        return d


class SimStreams:
    """Seeded substreams keyed by purpose and time, independent of draw order."""

    def __init__(self, seed: int, num_sources: int):
        self.seed = int(seed)
        self.num_sources = num_sources
        self._block = -1
        self._uniforms = None
        self._bitgen = np.random.Philox(key=self.seed)
        self._gen = np.random.Generator(self._bitgen)
        self._fresh = self._bitgen.state

    def _generator(self, stream: int, index: int) -> np.random.Generator:
        """Rewind the shared generator to the start of a substream.

        The substream id sits in the high counter words and draws advance the
        low ones. The returned generator is only valid until the next call.
        """
        state = dict(self._fresh)
        state["state"] = {
            "counter": np.array([0, 0, index, stream], dtype=np.uint64),
            "key": self._fresh["state"]["key"],
        }
        self._bitgen.state = state
        return self._gen

    def arrival_uniforms(self, t: int) -> np.ndarray:
        block = t // _ARRIVAL_BLOCK
        if block != self._block:
            gen = self._generator(_ARRIVAL_STREAM, block)
            self._uniforms = gen.random((_ARRIVAL_BLOCK, self.num_sources))
            self._block = block
        return self._uniforms[t % _ARRIVAL_BLOCK]

    def csi_generator(self, t: int) -> np.random.Generator:
        return self._generator(_CSI_STREAM, t)


def service_id(config: SimConfig, t: int, source: int) -> int:
    return t * config.num_sources + source


def generate_arrivals(config: SimConfig, streams: SimStreams, t: int) -> list[ServiceState]:
    """Services emitted at time unit ``t``: MCC sources first, then MBB."""
    if not 0 <= t < config.horizon_units:
        raise InvalidInputError(f"time unit {t} outside horizon {config.horizon_units}")
    u = streams.arrival_uniforms(t)
    out = []
    for j in range(config.num_sources):
        if j < config.num_mcc_sources:
            if u[j] < config.r_mcc:
                out.append(
                    ServiceState(service_id(config, t, j), config.mcc_demand_bits,
                                 config.mcc_deadline_units, ServiceClass.MCC, t)
                )
        elif u[j] < config.r_mbb:
            out.append(
                ServiceState(service_id(config, t, j), config.mbb_demand_bits,
                             config.mbb_deadline_units, ServiceClass.MBB, t)
            )
    return out


def shannon_rate(config: SimConfig, snr) -> np.ndarray:
    """Bits per time unit sustained at the given linear SNR."""
    return config.bits_per_unit_per_hz * np.log2(1.0 + np.asarray(snr, dtype=float))


def sample_csi(config: SimConfig, rng: np.random.Generator, num_services: int):
    """Fresh ``(rates, valid_for)`` arrays of shape (channels, services).

    Gains are zero-mean circular complex Gaussian with unit power. Only
    ``|h|^2`` enters the rate, and for such a gain it is exactly unit-mean
    exponential, so it is drawn directly. The instantaneous SNR then has mean
    ``config.snr_linear``.
    """
    shape = (config.num_channels, num_services)
    if config.flat_csi:
        power = rng.standard_exponential(size=(1, 1))
        rates = np.full(shape, shannon_rate(config, power * config.snr_linear)[0, 0])
    else:
        power = rng.standard_exponential(size=shape)
        rates = shannon_rate(config, power * config.snr_linear)
    if config.csi_validity is None:
        valid = np.full(shape, config.tti_menu[-1], dtype=np.int64)
    else:
        lo, hi = config.csi_validity
        draw = rng.integers(lo, hi + 1, size=(1, 1) if config.flat_csi else shape)
        valid = np.array(np.broadcast_to(draw, shape), dtype=np.int64)
    return rates, valid


class EventLog:
    """Line-oriented ``t,event,service_id,class,bits`` records."""

    def __init__(self, sink: TextIO):
        self.sink = sink

    def write(self, t, event, svc_id, service_class, bits):
        self.sink.write(f"{t},{event},{svc_id},{ServiceClass(service_class).value},{bits:.3f}\n")


def run_simulation(
    config: SimConfig,
    policy="cast",
    fixed_tti: Optional[int] = None,
    events: Optional[TextIO] = None,
    on_decision: Optional[Callable] = None,
    initial_services: Sequence[ServiceState] = (),
) -> RunMetrics:
    """Simulate ``config.horizon_units`` time units under ``policy``.

    ``policy`` is a :class:`Scheduler` or a name accepted by
    :func:`make_scheduler`; ``fixed_tti`` restricts it to one TTI length.
    ``on_decision(t, instance, result)`` is called after every scheduling
    decision. ``initial_services`` are active at t=0 in addition to the
    random traffic (their ids must not collide with generated ones; negative
    ids are safe). Arrivals landing inside a TTI join at the next instant with
    their deadline already reduced by the wait.
    """
    scheduler = make_scheduler(policy)
    if fixed_tti is not None:
        scheduler = clone(scheduler).set_params(fixed_tti=fixed_tti).fit()
    if scheduler.name == "flat_dp" and not config.flat_csi:
        raise NotFlatError("the flat_dp policy needs flat_csi=True")
    streams = SimStreams(config.seed, config.num_sources)
    log = EventLog(events) if events is not None else None
    metrics = RunMetrics(time_unit_ms=config.time_unit_ms)
    original = {}
    active: list[ServiceState] = []
    for svc in sorted(initial_services, key=lambda s: s.id):
        _count(metrics, svc.service_class, "arrived")
        original[svc.id] = svc
        if log:
            log.write(0, "arrive", svc.id, svc.service_class, svc.demand)
        active.append(svc)
    horizon = config.horizon_units
    t = 0
    next_unit = 0

    def admit(upto, now):
        nonlocal next_unit
        for u in range(next_unit, upto):
            for svc in generate_arrivals(config, streams, u):
                _count(metrics, svc.service_class, "arrived")
                original[svc.id] = svc
                if log:
                    log.write(u, "arrive", svc.id, svc.service_class, svc.demand)
                left = svc.deadline - (now - u)
                if left <= 0:
                    _count(metrics, svc.service_class, "dropped")
                    if log:
                        log.write(now, "drop", svc.id, svc.service_class, svc.demand)
                else:
                    active.append(svc.evolve(svc.demand, left))
        next_unit = max(next_unit, upto)

    while t < horizon:
        admit(t + 1, t)
        if not active:
            t += 1
            continue
        offered, waiting = active, []
        if config.service_cap is not None and len(active) > config.service_cap:
            ranked = sorted(active, key=lambda s: (s.deadline, s.id))
            offered, waiting = ranked[: config.service_cap], ranked[config.service_cap:]
            offered.sort(key=lambda s: s.id)
        rates, valid = sample_csi(config, streams.csi_generator(t), len(offered))
        instance = Instance.trusted(offered, rates, valid, config.tti_menu, config.overhead)
        try:
            result = scheduler.solve(instance)
        except BudgetExceededError as exc:
            raise BudgetExceededError(
                f"{exc} (at t={t} with {len(offered)} services on {config.num_channels} "
                "channels; lower num_channels or set service_cap)"
            ) from exc
        if on_decision is not None:
            on_decision(t, instance, result)
        outcome = advance_state(instance, result.decision, check=False)
        delta = result.decision.tti_length
        metrics.tti_histogram[delta] += 1
        end = t + delta
        by_id = {s.id: s for s in offered}
        for sid, bits in outcome.served_bits.items():
            if by_id[sid].service_class is ServiceClass.MBB:
                metrics.mbb_bits_served += bits
        for sid in outcome.completed:
            svc = by_id[sid]
            _count(metrics, svc.service_class, "completed")
            if log:
                log.write(end, "complete", sid, svc.service_class, original[sid].demand)
        for sid in outcome.dropped:
            svc = by_id[sid]
            _count(metrics, svc.service_class, "dropped")
            if log:
                log.write(end, "drop", sid, svc.service_class, svc.demand - outcome.served_bits[sid])
        survivors = list(outcome.updated)
        for svc in waiting:
            d = step_deadline(svc.deadline, delta)
            if d == 0:
                _count(metrics, svc.service_class, "dropped")
                if log:
                    log.write(end, "drop", svc.id, svc.service_class, svc.demand)
            else:
                survivors.append(svc.evolve(svc.demand, d))
        survivors.sort(key=lambda s: s.id)
        active = survivors
        t = end
    # Arrivals after the last scheduling instant stay in the residual backlog.
    admit(horizon, t)
    metrics.elapsed_units = t
    return metrics


_COUNTERS = {
    (cls, what): f"{cls.value.lower()}_{what}"
    for cls in ServiceClass
    for what in ("arrived", "completed", "dropped")
}


def _count(metrics: RunMetrics, service_class, what: str) -> None:
    name = _COUNTERS[ServiceClass(service_class), what]
    setattr(metrics, name, getattr(metrics, name) + 1)
