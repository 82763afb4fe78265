import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from topodef.scenario import (
    DECOY_KINDS,
    HostSpec,
    Importance,
    Scenario,
    ScenarioError,
    SubnetSpec,
    base_edges,
    bundled_scenario_text,
    intra_subnet_edge_count,
    load_bundled,
    load_scenario,
    make_variant,
    scenario_to_document,
)


def _doc(**overrides):
    doc = {
        "subnets": [
            {"name": "User", "importance": "User", "hosts": ["U0", "U1"]},
            {"name": "Ops", "importance": "Operational", "hosts": ["S0"]},
        ],
        "hosts": [
            {"name": "U0", "ports": [22], "entry": True},
            {"name": "U1", "ports": [22]},
            {"name": "S0", "ports": [22]},
        ],
        "bridges": [["U1", "S0"]],
    }
    doc.update(overrides)
    return doc


def test_bundled_scenario2_layout(scenario2):
    assert scenario2.n_hosts == 13
    names = [h.name for h in scenario2.hosts]
    assert names == [
        "User0", "User1", "User2", "User3", "User4",
        "Enterprise0", "Enterprise1", "Enterprise2", "Defender",
        "Op_Host0", "Op_Host1", "Op_Host2", "Op_Server0",
    ]
    assert [len(scenario2.hosts_in_subnet(i)) for i in range(3)] == [5, 4, 4]
    assert scenario2.hosts[scenario2.entry_index].name == "User0"
    assert scenario2.hosts[scenario2.impact_index].name == "Op_Server0"


def test_load_is_pure_function_of_text():
    text = bundled_scenario_text("scenario2")
    assert load_scenario(text) == load_scenario(text)


def test_entry_host_outside_user_subnet_rejected():
    doc = _doc()
    doc["hosts"][0].pop("entry")
    doc["hosts"][2]["entry"] = True
    with pytest.raises(ScenarioError, match="entry host not in user subnet"):
        load_scenario(json.dumps(doc))


def test_missing_entry_host_rejected():
    doc = _doc()
    doc["hosts"][0].pop("entry")
    with pytest.raises(ScenarioError, match="entry host missing"):
        load_scenario(json.dumps(doc))


def test_bridge_within_one_subnet_rejected():
    doc = _doc(bridges=[["U0", "U1"]])
    with pytest.raises(ScenarioError, match=r"bridges\[0\].*bridge within one subnet"):
        load_scenario(json.dumps(doc))


def test_duplicate_host_name_rejected():
    doc = _doc()
    doc["subnets"][1]["hosts"] = ["U0"]
    with pytest.raises(ScenarioError, match="more than one subnet"):
        load_scenario(json.dumps(doc))


def test_host_without_entry_in_hosts_array_rejected():
    doc = _doc()
    del doc["hosts"][1]
    with pytest.raises(ScenarioError, match="lack a hosts"):
        load_scenario(json.dumps(doc))


def test_empty_ports_rejected():
    doc = _doc()
    doc["hosts"][1]["ports"] = []
    with pytest.raises(ScenarioError, match=r"hosts\[1\]\.ports"):
        load_scenario(json.dumps(doc))


def test_port_out_of_range_rejected():
    doc = _doc()
    doc["hosts"][1]["ports"] = [0]
    with pytest.raises(ScenarioError, match="out of range"):
        load_scenario(json.dumps(doc))


def test_unknown_top_level_key_rejected():
    with pytest.raises(ScenarioError, match="unknown keys"):
        load_scenario(json.dumps(_doc(extra=1)))


def test_invalid_json_rejected():
    with pytest.raises(ScenarioError, match="invalid JSON"):
        load_scenario("{nope")


def test_wrong_decoy_kinds_rejected():
    doc = _doc(decoy_ports={"Apache": 80})
    with pytest.raises(ScenarioError, match="decoy kinds"):
        load_scenario(json.dumps(doc))


def test_decoy_ports_must_be_distinct():
    ports = {k: 80 for k in DECOY_KINDS}
    with pytest.raises(ScenarioError, match="distinct"):
        load_scenario(json.dumps(_doc(decoy_ports=ports)))


def test_base_edges_count_matches_pair_enumeration(scenario2):
    # Oracle: ordered pairs per subnet, counted directly.
    expected_intra = 0
    for i in range(len(scenario2.subnets)):
        k = len(scenario2.hosts_in_subnet(i))
        expected_intra += k * (k - 1)
    assert expected_intra == 5 * 4 + 4 * 3 + 4 * 3 == 44
    edges = base_edges(scenario2)
    assert intra_subnet_edge_count(scenario2) == expected_intra
    assert len(edges) == expected_intra + 2 * len(scenario2.bridges)
    assert len(set(edges)) == len(edges)
    assert edges == sorted(edges)


def _bare_scenario(subnet_sizes, importance=Importance.USER):
    subnets, hosts = [], []
    for s, size in enumerate(subnet_sizes):
        names = tuple(f"h{s}_{i}" for i in range(size))
        subnets.append(SubnetSpec(f"net{s}", importance, names))
        for i, name in enumerate(names):
            hosts.append(
                HostSpec(name, f"net{s}", frozenset({22}), is_entry=(s == 0 and i == 0))
            )
    return Scenario(tuple(subnets), tuple(hosts), (), tuple({"Apache": 80}.items()) + tuple(
        (k, p) for k, p in [("Femitter", 21), ("HarakaSMTP", 25), ("Smss", 139),
                            ("Sshd", 2222), ("SvcHost", 135), ("Tomcat", 443)]))


def test_base_edges_two_host_subnet():
    sc = _bare_scenario([2])
    assert base_edges(sc) == [(0, 1), (1, 0)]


def test_base_edges_singleton_subnet():
    sc = _bare_scenario([1])
    assert base_edges(sc) == []


def test_base_edges_symmetric_as_unordered_pairs(scenario2):
    edges = set(base_edges(scenario2))
    assert all((v, u) in edges for u, v in edges)


def test_variant_removal(scenario2):
    sc = make_variant(scenario2, -2, seed=0)
    user_names = {h.name for h in sc.hosts if sc.is_user_host(sc.host_index[h.name])}
    assert user_names == {"User0", "User1", "User2"}
    assert sum(1 for h in sc.hosts if not sc.is_user_host(sc.host_index[h.name])) == 8
    # bridges from the removed User3/User4 are gone
    assert len(sc.bridges) == 3


def test_variant_addition(scenario2):
    sc = make_variant(scenario2, +3, seed=0)
    new = {h.name for h in sc.hosts} - {h.name for h in scenario2.hosts}
    assert new == {"User5", "User6", "User7"}
    added = sc.hosts[-1]
    assert added.subnet == "User"
    assert added.base_open_ports == scenario2.hosts[scenario2.entry_index].base_open_ports


def test_variant_entry_removal_rejected(scenario2):
    with pytest.raises(ScenarioError, match="entry host"):
        make_variant(scenario2, -5, seed=0)


@given(k=st.integers(min_value=1, max_value=4), seed=st.integers(0, 10))
def test_variant_add_remove_roundtrip(k, seed):
    sc = load_bundled("scenario2")
    round_trip = make_variant(make_variant(sc, +k, seed), -k, seed)
    assert {h.name for h in round_trip.hosts} == {h.name for h in sc.hosts}


def test_variant_document_roundtrip(scenario2):
    sc = make_variant(scenario2, +1, seed=0)
    doc = scenario_to_document(sc)
    assert load_scenario(json.dumps(doc)) == sc


def test_dynamics_block_parsing():
    doc = _doc(dynamics={"p_exploit": 0.5, "horizon": 10})
    sc = load_scenario(json.dumps(doc))
    assert sc.dynamics.p_exploit == 0.5
    assert sc.dynamics.horizon == 10
    assert sc.dynamics.p_green == 0.1


def test_dynamics_validation():
    with pytest.raises(ScenarioError, match="p_exploit"):
        load_scenario(json.dumps(_doc(dynamics={"p_exploit": 1.5})))
