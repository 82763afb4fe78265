import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topodef.actions import BlueAction
from topodef.netsim import (
    PENALTY_IMPACT,
    PENALTY_RESTORE,
    PENALTY_SERVER_BREACH,
    PENALTY_USER_BREACH,
    CompromiseLevel,
    ConnectionRecord,
    RedAction,
    apply_blue,
    apply_green,
    apply_red,
    blue_step,
    compute_penalty,
    red_policy_meander,
    reset,
    state_snapshot,
    trace_record,
)
from topodef.scenario import load_bundled


def test_reset_entry_host_privileged(scenario2):
    st = reset(scenario2, 0)
    assert st.hosts[0].compromise is CompromiseLevel.PRIVILEGED
    assert all(
        st.hosts[i].compromise is CompromiseLevel.NOT_COMPROMISED for i in range(1, 13)
    )
    assert st.step_index == 0
    assert st.red.footholds == {0: CompromiseLevel.PRIVILEGED}
    assert st.red.discovered == {0, 1, 2, 3, 4}


def test_reset_is_deterministic(scenario2):
    a = state_snapshot(reset(scenario2, 7))
    b = state_snapshot(reset(scenario2, 7))
    assert a == b


def test_sleep_on_fresh_state_costs_exactly_one_user_breach(scenario2):
    st = reset(scenario2, 0)
    _, out, _ = blue_step(st, BlueAction.sleep())
    assert out.reward == PENALTY_USER_BREACH == -0.1
    assert out.events == (("UserBreach", 0, PENALTY_USER_BREACH),)
    assert not out.episode_done


def test_restore_penalised_even_when_host_clean(scenario2):
    st = reset(scenario2, 0)
    _, out, _ = blue_step(st, BlueAction.restore(5))
    assert ("Restore", 5, PENALTY_RESTORE) in out.events
    assert out.reward == PENALTY_USER_BREACH + PENALTY_RESTORE


def test_step_determinism(scenario2):
    actions = [BlueAction.sleep(), BlueAction.decoy(6, 0), BlueAction.analyse(1), BlueAction.remove(2)]
    snaps = []
    for _ in range(2):
        st = reset(scenario2, 3)
        for a in actions * 3:
            blue_step(st, a)
        snaps.append(state_snapshot(st))
    assert snaps[0] == snaps[1]


def test_step_on_invalid_node_rejected(scenario2):
    st = reset(scenario2, 0)
    with pytest.raises(ValueError, match="nonexistent node"):
        blue_step(st, BlueAction.restore(99))


def test_step_after_done_rejected(tiny_scenario):
    st = reset(tiny_scenario, 0)
    for _ in range(st.horizon):
        blue_step(st, BlueAction.sleep())
    with pytest.raises(RuntimeError, match="done"):
        blue_step(st, BlueAction.sleep())


# apply_blue semantics


def test_remove_fails_on_privileged_host(scenario2):
    st = reset(scenario2, 0)
    before = state_snapshot(st)
    assert apply_blue(st, BlueAction.remove(0)) is False
    assert state_snapshot(st) == before


def test_remove_clears_user_access_and_identified_records(scenario2):
    st = reset(scenario2, 0)
    h = st.hosts[3]
    h.compromise = CompromiseLevel.USER_ACCESS
    st.red.footholds[3] = CompromiseLevel.USER_ACCESS
    h.connections = [
        ConnectionRecord(22, 0, 50000, malicious=True, detected=True),
        ConnectionRecord(22, 0, 50001, malicious=True, detected=False),
        ConnectionRecord(22, 2, 50002, malicious=False, detected=True),
    ]
    assert apply_blue(st, BlueAction.remove(3)) is True
    assert st.hosts[3].compromise is CompromiseLevel.NOT_COMPROMISED
    assert 3 not in st.red.footholds
    # only records identified as malicious (detected) are dropped
    assert [c.remote_port for c in st.hosts[3].connections] == [50001, 50002]


def test_restore_resets_host_but_entry_stays_privileged(scenario2):
    st = reset(scenario2, 0)
    h = st.hosts[0]
    apply_blue(st, BlueAction.decoy(0, 0))
    h.malicious_file_present = True
    h.connections.append(ConnectionRecord(22, 1, 50000, True, True))
    assert apply_blue(st, BlueAction.restore(0)) is True
    assert h.open_ports == set(scenario2.hosts[0].base_open_ports)
    assert h.decoys == set() and h.connections == []
    assert not h.malicious_file_present
    assert h.compromise is CompromiseLevel.PRIVILEGED
    assert st.red.footholds[0] is CompromiseLevel.PRIVILEGED


def test_restore_clears_non_entry_compromise(scenario2):
    st = reset(scenario2, 0)
    st.hosts[6].compromise = CompromiseLevel.PRIVILEGED
    st.red.footholds[6] = CompromiseLevel.PRIVILEGED
    apply_blue(st, BlueAction.restore(6))
    assert st.hosts[6].compromise is CompromiseLevel.NOT_COMPROMISED
    assert 6 not in st.red.footholds


def test_decoy_fails_on_open_port(scenario2):
    st = reset(scenario2, 0)
    svchost = 5  # SvcHost decoy port 135 is already open on enterprise hosts
    assert apply_blue(st, BlueAction.decoy(5, svchost)) is False
    assert apply_blue(st, BlueAction.decoy(5, 0)) is True  # Apache on 80
    assert 80 in st.hosts[5].open_ports
    assert apply_blue(st, BlueAction.decoy(5, 0)) is False  # now taken


def test_analyse_reflects_current_file_state(scenario2):
    st = reset(scenario2, 0)
    assert apply_blue(st, BlueAction.analyse(2)) is True
    assert st.hosts[2].malicious_file_analysed is False
    st.hosts[2].malicious_file_present = True
    apply_blue(st, BlueAction.analyse(2))
    assert st.hosts[2].malicious_file_analysed is True
    apply_blue(st, BlueAction.restore(2))
    apply_blue(st, BlueAction.analyse(2))
    assert st.hosts[2].malicious_file_analysed is False


def test_sleep_and_monitor_change_nothing(scenario2):
    st = reset(scenario2, 0)
    before = state_snapshot(st)
    assert apply_blue(st, BlueAction.sleep()) is True
    assert apply_blue(st, BlueAction.monitor()) is True
    assert state_snapshot(st) == before


# red agent


def test_meander_scans_lowest_index_unscanned_user_host(scenario2):
    st = reset(scenario2, 0)
    ra = red_policy_meander(st)
    assert ra == RedAction("scan", 0)
    st.hosts[0].scanned_by_red = True
    assert red_policy_meander(st) == RedAction("scan", 1)


def test_meander_impacts_when_everything_privileged(scenario2):
    st = reset(scenario2, 0)
    for i, h in enumerate(st.hosts):
        h.compromise = CompromiseLevel.PRIVILEGED
        h.scanned_by_red = True
        st.red.footholds[i] = CompromiseLevel.PRIVILEGED
    st.red.discovered = set(range(13))
    st.red.target_subnet = 2
    for _ in range(3):
        ra = red_policy_meander(st)
        assert ra == RedAction("impact", scenario2.impact_index)
        apply_red(st, ra)


def test_meander_discovers_next_subnet_via_bridge(scenario2):
    st = reset(scenario2, 0)
    for i in range(5):
        st.hosts[i].compromise = CompromiseLevel.PRIVILEGED
        st.hosts[i].scanned_by_red = True
        st.red.footholds[i] = CompromiseLevel.PRIVILEGED
    ra = red_policy_meander(st)
    assert ra == RedAction("discover", 1)
    apply_red(st, ra)
    assert st.red.target_subnet == 1
    assert set(scenario2.hosts_in_subnet(1)) <= st.red.discovered


def test_exploit_into_decoy_only_alerts(scenario2):
    st = reset(scenario2, 0)
    h = st.hosts[1]
    h.scanned_by_red = True
    h.open_ports = {80}
    h.decoys = {(0, 80)}
    apply_red(st, RedAction("exploit", 1))
    assert h.compromise is CompromiseLevel.NOT_COMPROMISED
    assert len(h.connections) == 1
    assert h.connections[0].malicious and h.connections[0].detected
    assert h.connections[0].local_port == 80


def test_exploit_success_records_three_connections_one_port():
    from dataclasses import replace

    sc = load_bundled("scenario2")
    sc = replace(sc, dynamics=sc.dynamics.replace(p_exploit=1.0))
    st = reset(sc, 0)
    h = st.hosts[1]
    h.scanned_by_red = True
    apply_red(st, RedAction("exploit", 1))  # p_exploit=0.9; seed 0 draw succeeds
    assert h.compromise is CompromiseLevel.USER_ACCESS
    assert len(h.connections) == 3
    assert {c.local_port for c in h.connections} == {22}
    assert all(c.malicious for c in h.connections)


def test_escalate_sets_privileged_and_plants_file(scenario2):
    st = reset(scenario2, 0)
    st.hosts[2].compromise = CompromiseLevel.USER_ACCESS
    st.red.footholds[2] = CompromiseLevel.USER_ACCESS
    apply_red(st, RedAction("escalate", 2))
    assert st.hosts[2].compromise is CompromiseLevel.PRIVILEGED
    assert st.hosts[2].malicious_file_present
    assert st.red.footholds[2] is CompromiseLevel.PRIVILEGED


def test_scan_spans_two_local_ports(scenario2):
    st = reset(scenario2, 0)
    apply_red(st, RedAction("scan", 1))
    conns = st.hosts[1].connections
    assert len(conns) == 3
    assert len({c.local_port for c in conns}) == 2
    assert st.hosts[1].scanned_by_red
    assert all(c.detected and c.malicious for c in conns)


# green agent


def test_green_disabled_changes_nothing(scenario2):
    from dataclasses import replace

    sc = replace(scenario2, dynamics=scenario2.dynamics.replace(p_green=0.0))
    st = reset(sc, 0)
    before = [len(h.connections) for h in st.hosts]
    apply_green(st)
    assert [len(h.connections) for h in st.hosts] == before


def test_green_always_adds_one_benign_connection(scenario2):
    from dataclasses import replace

    sc = replace(scenario2, dynamics=scenario2.dynamics.replace(p_green=1.0))
    st = reset(sc, 0)
    compromise_before = [h.compromise for h in st.hosts]
    apply_green(st)
    new = [(i, c) for i, h in enumerate(st.hosts) for c in h.connections]
    assert len(new) == 1
    node, conn = new[0]
    assert sc.is_user_host(node)
    assert sc.subnet_of[conn.remote_host] == sc.subnet_of[node]
    assert conn.remote_host != node
    assert not conn.malicious and conn.detected
    assert [h.compromise for h in st.hosts] == compromise_before


# penalties (exact Table-style accounting)


def test_penalty_single_breached_user(scenario2):
    st = reset(scenario2, 0)
    out = compute_penalty(st, BlueAction.sleep(), [])
    assert out.reward == -0.1


def test_penalty_privileged_server_plus_restore(scenario2):
    st = reset(scenario2, 0)
    st.hosts[0].compromise = CompromiseLevel.NOT_COMPROMISED  # isolate the server term
    st.hosts[6].compromise = CompromiseLevel.PRIVILEGED
    out = compute_penalty(st, BlueAction.restore(6), [])
    assert out.reward == PENALTY_SERVER_BREACH + PENALTY_RESTORE == -2.0


def test_penalty_impact_event(scenario2):
    st = reset(scenario2, 0)
    st.hosts[12].compromise = CompromiseLevel.PRIVILEGED
    out = compute_penalty(st, BlueAction.sleep(), [("impact", 12)])
    assert ("Impact", 12, PENALTY_IMPACT) in out.events
    assert out.reward == PENALTY_USER_BREACH + PENALTY_SERVER_BREACH + PENALTY_IMPACT


def test_penalty_user_access_server_not_charged(scenario2):
    st = reset(scenario2, 0)
    st.hosts[0].compromise = CompromiseLevel.NOT_COMPROMISED
    st.hosts[6].compromise = CompromiseLevel.USER_ACCESS
    out = compute_penalty(st, BlueAction.sleep(), [])
    assert out.reward == 0.0


def test_reward_equals_event_sum(scenario2):
    st = reset(scenario2, 0)
    for i in (1, 2):
        st.hosts[i].compromise = CompromiseLevel.USER_ACCESS
    st.hosts[5].compromise = CompromiseLevel.PRIVILEGED
    out = compute_penalty(st, BlueAction.restore(1), [("impact", 12)])
    total = 0.0
    for e in out.events:
        total += e.amount
    assert out.reward == total


# invariants over random action sequences


@st.composite
def action_sequences(draw):
    n = 13
    seq = []
    for _ in range(draw(st.integers(4, 12))):
        slot = draw(st.integers(0, 11))
        if slot < 2:
            seq.append(BlueAction(None, slot))
        else:
            seq.append(BlueAction(draw(st.integers(0, n - 1)), slot - 2))
    return seq


@given(seq=action_sequences(), seed=st.integers(0, 100))
@settings(max_examples=30)
def test_entry_stays_privileged_and_reward_bounded(seq, seed):
    sc = load_bundled("scenario2")
    st = reset(sc, seed)
    n_user = 5
    n_servers = 8
    lower = -(0.1 * n_user + 1.0 * n_servers + 11.0)
    for a in seq:
        _, out, _ = blue_step(st, a)
        assert st.hosts[0].compromise is CompromiseLevel.PRIVILEGED
        assert lower <= out.reward <= 0.0


# meander end-to-end timing (closed-form oracle on a tiny scenario)


def _deterministic(sc):
    from dataclasses import replace

    return replace(sc, dynamics=sc.dynamics.replace(p_exploit=1.0, p_green=0.0))


def test_red_reaches_impact_in_closed_form_steps(tiny_scenario):
    sc = _deterministic(tiny_scenario)
    sizes = [len(sc.hosts_in_subnet(i)) for i in range(len(sc.subnets))]
    # entry subnet: scan all + exploit/escalate all but the entry host;
    # each later subnet: one discover plus scan/exploit/escalate per host.
    expected_first_impact = (3 * sizes[0] - 2) + sum(1 + 3 * k for k in sizes[1:])
    assert expected_first_impact == 12

    st = reset(sc, 0)
    first_impact = None
    for t in range(st.horizon):
        _, out, _ = blue_step(st, BlueAction.sleep())
        if any(e.kind == "Impact" for e in out.events):
            first_impact = t
            break
    assert first_impact == expected_first_impact
    # impact repeats every turn afterwards
    for _ in range(3):
        _, out, _ = blue_step(st, BlueAction.sleep())
        assert any(e.kind == "Impact" for e in out.events)


def test_trace_record_shape(scenario2):
    st = reset(scenario2, 0)
    a = BlueAction.restore(3)
    _, out, _ = blue_step(st, a)
    rec = trace_record(0, a, st, out)
    assert set(rec) == {"step", "blue_action", "success", "reward", "events", "red_action"}
    json.dumps(rec)  # JSON-serializable
    assert rec["blue_action"] == {"kind": "Restore", "node": 3}
    assert rec["red_action"]["kind"] == "scan"


def test_deltas_report_new_detected_connections(scenario2):
    st = reset(scenario2, 0)
    _, _, deltas = blue_step(st, BlueAction.sleep())  # red scans User0
    assert set(deltas) == {0}
    assert len(deltas[0]) == 3
