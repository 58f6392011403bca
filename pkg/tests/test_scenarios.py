import json

import pytest

from cdvcs.scenarios import (
    SCENARIOS,
    read_txn,
    scenario_booking,
    scenario_calendar,
    scenario_single_writer,
    txn,
)


def test_txn_encoding_is_canonical():
    assert txn("book", b=2, a=1) == txn("book", a=1, b=2)
    assert read_txn(txn("book", guest="x")) == {"op": "book", "params": {"guest": "x"}}


@pytest.mark.parametrize("wire", [False, True])
def test_calendar(wire):
    rep = scenario_calendar(wire=wire)
    assert rep.passed, rep.render()
    assert rep.conflicts_observed == 1
    assert rep.histories["alice"] == rep.histories["bob"]
    assert len(rep.histories["alice"]) == 4  # root, two appointments, merge


@pytest.mark.parametrize("seed", range(3))
def test_calendar_other_seeds(seed):
    assert scenario_calendar(seed=seed).passed


@pytest.mark.parametrize("observers", [1, 3])
def test_single_writer(observers):
    rep = scenario_single_writer(40, observers=observers, seed=5)
    assert rep.passed, rep.render()
    assert rep.conflicts_observed == 0
    assert all(len(h) == 41 for h in rep.histories.values())


def test_single_writer_rejects_zero():
    with pytest.raises(ValueError):
        scenario_single_writer(0)


@pytest.mark.parametrize("seed", range(10))
def test_booking_capacity_one(seed):
    rep = scenario_booking(1, 2, seed)
    assert rep.passed, rep.render()
    assert len(rep.details["accepted"]) == 1 and len(rep.details["rejected"]) == 1
    assert rep.details["max_replayed_count"] == 1


def test_booking_first_arrival_varies_with_seed():
    winners = {tuple(scenario_booking(1, 2, s).details["accepted"]) for s in range(10)}
    assert len(winners) == 2


@pytest.mark.parametrize("capacity,requests", [(0, 2), (2, 4), (3, 3), (5, 2)])
def test_booking_other_capacities(capacity, requests):
    rep = scenario_booking(capacity, requests, seed=4)
    assert rep.passed, rep.render()
    assert len(rep.details["accepted"]) == min(capacity, requests)
    assert len(rep.histories["moderator"]) == 1 + min(capacity, requests) + max(0, min(capacity, requests) - 1)


def test_booking_wire():
    assert scenario_booking(1, 2, seed=9, wire=True).passed


def test_report_serialization():
    rep = scenario_booking(1, 2, 0)
    d = json.loads(rep.to_json())
    assert d["passed"] is True and d["name"] == "booking"
    assert all(set(a) == {"description", "passed"} for a in d["assertions"])
    assert "PASS" in rep.render()
    assert set(SCENARIOS) == {"calendar", "single-writer", "booking"}


def test_single_writer_minimal():
    rep = scenario_single_writer(1, observers=1)
    assert rep.passed
    assert rep.histories["writer"] == rep.histories["observer1"]
    assert len(rep.histories["writer"]) == 2
    assert "seed: 0" in rep.render()
