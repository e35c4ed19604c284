import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_instance, utility
from ttisched.exceptions import ConstraintViolationError, InvalidInputError
from ttisched.model import (
    ChannelCsi,
    Instance,
    ScheduleDecision,
    ServiceState,
    advance_state,
    emptying_rate,
    objective_value,
    step_backlog,
    step_deadline,
    validate_decision,
)


@pytest.mark.parametrize(
    "args, expected",
    [((100, 2, 0.5, [40]), 40), ((100, 2, 0.5, []), 100), ((10, 2, 0.5, [40]), 0)],
)
def test_step_backlog_examples(args, expected):
    assert step_backlog(*args) == expected


def test_step_backlog_rejects_negative_rate():
    with pytest.raises(InvalidInputError):
        step_backlog(100, 2, 0.5, [10, -1])


@pytest.mark.parametrize("args, expected", [((10, 2), 8), ((1, 2), 0), ((0, 5), 0)])
def test_step_deadline_examples(args, expected):
    assert step_deadline(*args) == expected


@pytest.mark.parametrize("args, expected", [((100, 0), 1.0), ((100, 100), 0.0), ((100, 50), 0.5)])
def test_emptying_rate_examples(args, expected):
    assert emptying_rate(*args) == expected


def test_emptying_rate_needs_backlog():
    with pytest.raises(InvalidInputError):
        emptying_rate(0, 0)


def test_objective_two_completed_deadline_one():
    inst = make_instance([[1, 1], [1, 1]], [1, 1], [1, 1])
    dec = ScheduleDecision.from_owners(1, [0, 1], 2)
    assert objective_value(inst, dec) == 4


def test_objective_single_service_no_bonus():
    inst = make_instance([[5]], [3], [1])
    assert objective_value(inst, ScheduleDecision.from_owners(1, [0], 1)) == 1.0


def test_objective_partial_service():
    # E = 0.5 and 0.25 with D = 2 and 4
    inst = make_instance([[10, 0], [0, 10]], [20, 40], [2, 4], menu=(1, 2))
    dec = ScheduleDecision.from_owners(1, [0, 1], 2)
    assert objective_value(inst, dec) == pytest.approx(0.3125, abs=1e-15)
    assert utility(inst, dec) == pytest.approx(0.3125, abs=1e-15)


def test_objective_rejects_invalid_decision():
    inst = make_instance([[1, 1]], [1, 1], [1, 1])
    with pytest.raises(ConstraintViolationError) as info:
        objective_value(inst, ScheduleDecision(1, [[1, 1]]))
    assert info.value.violations[0].constraint == "channel_exclusive"


def test_validate_empty_assignment_ok():
    inst = make_instance([[1, 1], [2, 2]], [5, 5], [3, 3], menu=(1, 2))
    assert validate_decision(inst, ScheduleDecision.idle(2, 2, 1)) == []


def test_validate_shared_channel():
    inst = make_instance([[1, 1], [2, 2]], [5, 5], [3, 3], menu=(1, 2))
    found = validate_decision(inst, ScheduleDecision(1, [[1, 1], [0, 0]]))
    assert [v.constraint for v in found] == ["channel_exclusive"]


def test_validate_csi_expired():
    inst = make_instance([[1, 1]], [5, 5], [5, 5], menu=(1, 2, 3), valid=[[2, 3]])
    found = validate_decision(inst, ScheduleDecision.from_owners(3, [0], 2))
    assert [v.constraint for v in found] == ["csi_validity"]
    assert validate_decision(inst, ScheduleDecision.from_owners(3, [1], 2)) == []


def test_validate_menu_and_deadline():
    inst = make_instance([[1, 1]], [5, 5], [1, 5], menu=(1, 2))
    assert [v.constraint for v in validate_decision(inst, ScheduleDecision.idle(1, 2, 3))] == [
        "tti_menu"
    ]
    found = validate_decision(inst, ScheduleDecision.from_owners(2, [0], 2))
    assert [v.constraint for v in found] == ["deadline"]


def test_validate_shape():
    inst = make_instance([[1, 1]], [5, 5], [1, 5])
    assert validate_decision(inst, ScheduleDecision.idle(2, 2))[0].constraint == "shape"


@pytest.mark.parametrize(
    "capacity, deadline, route, q, d",
    [(150, 2, "completed", None, None), (0, 2, "dropped", None, None), (60, 10, "updated", 40, 8)],
)
def test_advance_state_examples(capacity, deadline, route, q, d):
    # Airtime 2 (no overhead); a rate of capacity/2 gives the stated capacity.
    inst = make_instance([[capacity / 2]], [100], [deadline], menu=(2,))
    out = advance_state(inst, ScheduleDecision.from_owners(2, [0], 1))
    if route == "completed":
        assert out.completed == (0,) and out.served_bits[0] == 100
    elif route == "dropped":
        assert out.dropped == (0,) and out.served_bits[0] == 0
    else:
        (svc,) = out.updated
        assert (svc.demand, svc.deadline) == (q, d)


def test_completion_tolerance_snaps_residue():
    inst = make_instance([[0.1], [0.2]], [0.3], [1])
    out = advance_state(inst, ScheduleDecision.from_owners(1, [0, 0], 1))
    assert out.completed == (0,)


def test_instance_validation():
    svc = (ServiceState(0, 10, 3),)
    with pytest.raises(InvalidInputError):
        Instance(svc, [[-1.0]], [[1]], (1,))
    with pytest.raises(InvalidInputError):
        Instance(svc, [[1.0]], [[0]], (1,))
    with pytest.raises(InvalidInputError):
        Instance(svc, [[1.0, 2.0]], [[1, 1]], (1,))
    with pytest.raises(InvalidInputError):
        Instance(svc, [[1.0]], [[1]], (1,), signaling_overhead=1.0)
    with pytest.raises(InvalidInputError):
        Instance((ServiceState(0, 10, 0),), [[1.0]], [[1]], (1,))


def test_instance_from_csi_round_trip():
    svcs = (ServiceState(7, 10, 3), ServiceState(9, 5, 2, "MBB"))
    csi = [[ChannelCsi(1.5, 2), ChannelCsi(2.5, 3)]]
    inst = Instance.from_csi(svcs, csi, (1, 2, 3), 0.5)
    assert inst.channel_csi(0, 1) == ChannelCsi(2.5, 3)
    assert inst.completion_bonus == 1
    assert inst.max_tti == 3
    assert inst.with_menu((2,)).tti_menu == (2,)


def test_instance_arrays_are_read_only():
    inst = make_instance([[1.0]], [1], [1])
    with pytest.raises(ValueError):
        inst.rates[0, 0] = 2.0


def test_decision_owners_and_equality():
    d1 = ScheduleDecision.from_owners(2, [1, -1, 0], 2)
    assert d1.owners() == (1, -1, 0)
    assert d1.channels_of(0) == (2,)
    assert d1 == ScheduleDecision(2, [[0, 1], [0, 0], [1, 0]])
    assert len({d1, ScheduleDecision(2, d1.assignment)}) == 1
    with pytest.raises(InvalidInputError):
        ScheduleDecision(1, [[1, 1]]).owners()
    with pytest.raises(InvalidInputError):
        ScheduleDecision(1, [[2, 0]])


# ---- properties ---------------------------------------------------------------

small_instances = st.integers(1, 4).flatmap(
    lambda k: st.integers(1, 3).flatmap(
        lambda n: st.tuples(
            st.lists(st.lists(st.integers(0, 10), min_size=n, max_size=n), min_size=k, max_size=k),
            st.lists(st.integers(1, 40), min_size=n, max_size=n),
            st.lists(st.integers(1, 5), min_size=n, max_size=n),
            st.lists(st.integers(-1, n - 1), min_size=k, max_size=k),
            st.integers(1, 3),
        )
    )
)


@settings(max_examples=200, deadline=None)
@given(small_instances, st.integers(2, 9))
def test_scale_invariance(data, factor):
    rates, demands, deadlines, owners, tti = data
    inst = make_instance(rates, demands, [max(d, tti) for d in deadlines], menu=(tti,))
    scaled = make_instance(
        np.asarray(rates) * factor, np.asarray(demands) * factor,
        [max(d, tti) for d in deadlines], menu=(tti,),
    )
    dec = ScheduleDecision.from_owners(tti, owners, len(demands))
    assert objective_value(scaled, dec) == pytest.approx(objective_value(inst, dec), abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(small_instances)
def test_utility_bounds_and_partition(data):
    rates, demands, deadlines, owners, tti = data
    inst = make_instance(rates, demands, [max(d, tti) for d in deadlines], menu=(tti,))
    dec = ScheduleDecision.from_owners(tti, owners, len(demands))
    n = len(demands)
    u = utility(inst, dec)
    assert 0.0 <= u <= n + 1e-9
    assert objective_value(inst, dec) <= n + inst.completion_bonus * n + 1e-9
    out = advance_state(inst, dec)
    ids = [s.id for s in out.updated] + list(out.completed) + list(out.dropped)
    assert sorted(ids) == list(range(n))


@settings(max_examples=300, deadline=None)
@given(
    st.floats(0.001, 1e6),
    st.integers(1, 10),
    st.floats(0, 0.99),
    st.lists(st.floats(0, 1e5), max_size=5),
    st.floats(0, 1e5),
)
def test_step_backlog_monotone_and_zero_iff_covered(q, delta, overhead, rates, extra):
    base = step_backlog(q, delta, overhead, rates, tol=0.0)
    more = step_backlog(q, delta, overhead, rates + [extra], tol=0.0)
    assert more <= base
    capacity = (delta - overhead) * sum(rates)
    assert (base == 0.0) == (capacity >= q)
