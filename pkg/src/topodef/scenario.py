"""Network topology definitions: loading, validation, and user-host variants.

A scenario declares the static "expected layout" of the simulated network:
subnets with an importance tier, hosts with their baseline open ports, the
bridge links that allow cross-subnet traffic, and the decoy port map used by
the defender. Scenario values are immutable after construction and safe to
share across workers.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Iterable


class Importance(str, Enum):
    USER = "User"
    ENTERPRISE = "Enterprise"
    OPERATIONAL = "Operational"


#: Canonical decoy service kinds, in the order the per-node Decoy actions use.
DECOY_KINDS = ("Apache", "Femitter", "HarakaSMTP", "Smss", "Sshd", "SvcHost", "Tomcat")

#: Default port for each decoy kind (overridable via the scenario file).
DEFAULT_DECOY_PORTS = {
    "Apache": 80,
    "Femitter": 21,
    "HarakaSMTP": 25,
    "Smss": 139,
    "Sshd": 2222,
    "SvcHost": 135,
    "Tomcat": 443,
}

_ALLOWED_TOP_KEYS = {"subnets", "hosts", "bridges", "decoy_ports", "dynamics"}
_ALLOWED_DYNAMICS_KEYS = {
    "p_exploit",
    "p_green",
    "p_detect",
    "horizon",
    "malicious_remote_ports",
}


class ScenarioError(ValueError):
    """Raised for schema violations; `path` names the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


@dataclass(frozen=True)
class DynamicsConfig:
    """Tunable environment dynamics (defaults are approximations, see README)."""

    p_exploit: float = 0.9
    p_green: float = 0.1
    p_detect: float = 0.95
    horizon: int = 30
    malicious_remote_ports: tuple[int, ...] = ()

    def replace(self, **kw) -> "DynamicsConfig":
        merged = {**self.__dict__, **{k: v for k, v in kw.items() if v is not None}}
        return DynamicsConfig(**merged)


@dataclass(frozen=True)
class SubnetSpec:
    name: str
    importance: Importance
    host_names: tuple[str, ...]


@dataclass(frozen=True)
class HostSpec:
    name: str
    subnet: str
    base_open_ports: frozenset[int]
    is_entry: bool = False
    is_defender: bool = False


@dataclass(frozen=True)
class BridgeSpec:
    source: str
    target: str


@dataclass(frozen=True)
class Scenario:
    """A validated topology plus derived index tables.

    Node index = position in `hosts`. Derived fields are computed once in
    `__post_init__` and must not be supplied by callers.
    """

    subnets: tuple[SubnetSpec, ...]
    hosts: tuple[HostSpec, ...]
    bridges: tuple[BridgeSpec, ...]
    decoy_port_map: tuple[tuple[str, int], ...]
    dynamics: DynamicsConfig = DynamicsConfig()

    host_index: dict = field(init=False, repr=False, compare=False)
    subnet_index: dict = field(init=False, repr=False, compare=False)
    subnet_of: tuple = field(init=False, repr=False, compare=False)
    entry_index: int = field(init=False, repr=False, compare=False)
    impact_index: int = field(init=False, repr=False, compare=False)
    bridge_pairs: frozenset = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "host_index", {h.name: i for i, h in enumerate(self.hosts)})
        object.__setattr__(self, "subnet_index", {s.name: i for i, s in enumerate(self.subnets)})
        object.__setattr__(
            self, "subnet_of", tuple(self.subnet_index[h.subnet] for h in self.hosts)
        )
        entry = [i for i, h in enumerate(self.hosts) if h.is_entry]
        object.__setattr__(self, "entry_index", entry[0] if entry else -1)
        object.__setattr__(self, "impact_index", _find_impact_target(self))
        pairs = set()
        for b in self.bridges:
            u, v = self.host_index[b.source], self.host_index[b.target]
            pairs.add((u, v))
            pairs.add((v, u))
        object.__setattr__(self, "bridge_pairs", frozenset(pairs))

    @property
    def n_hosts(self) -> int:
        return len(self.hosts)

    def decoy_ports(self) -> dict[str, int]:
        return dict(self.decoy_port_map)

    def decoy_port(self, kind_index: int) -> int:
        return self.decoy_port_map[kind_index][1]

    def hosts_in_subnet(self, subnet_idx: int) -> list[int]:
        return [i for i, s in enumerate(self.subnet_of) if s == subnet_idx]

    def is_user_host(self, node: int) -> bool:
        return self.subnets[self.subnet_of[node]].importance is Importance.USER

    def ip_label(self, node: int) -> str:
        """Cosmetic, deterministic IP-style label for table rendering."""
        s = self.subnet_of[node]
        k = self.hosts_in_subnet(s).index(node)
        return f"10.0.{100 + s}.{10 + k}"

    def subnet_cidr(self, subnet_idx: int) -> str:
        return f"10.0.{100 + subnet_idx}.0/28"


def _find_impact_target(s: Scenario) -> int:
    """The operational server: an Operational-subnet host named like a server."""
    for i, h in enumerate(s.hosts):
        if (
            s.subnets[s.subnet_of[i]].importance is Importance.OPERATIONAL
            and "server" in h.name.lower()
        ):
            return i
    return -1


def _expect(cond: bool, message: str, path: str):
    if not cond:
        raise ScenarioError(message, path)


def _check_port(p, path: str) -> int:
    _expect(isinstance(p, int) and not isinstance(p, bool), "port must be an integer", path)
    _expect(1 <= p <= 65535, f"port {p} out of range 1-65535", path)
    return p


def load_scenario(text: str) -> Scenario:
    """Parse and validate a scenario JSON document.

    Pure function of its input: identical text yields an identical Scenario.
    Raises ScenarioError naming the offending field on any schema violation.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e}") from e
    _expect(isinstance(doc, dict), "top-level value must be an object", "$")
    unknown = set(doc) - _ALLOWED_TOP_KEYS
    _expect(not unknown, f"unknown keys {sorted(unknown)}", "$")
    for key in ("subnets", "hosts"):
        _expect(key in doc, f"missing required key '{key}'", "$")

    subnets: list[SubnetSpec] = []
    seen_subnets: set[str] = set()
    host_to_subnet: dict[str, str] = {}
    for i, entry in enumerate(doc["subnets"]):
        path = f"subnets[{i}]"
        _expect(isinstance(entry, dict), "must be an object", path)
        name = entry.get("name")
        _expect(isinstance(name, str) and name, "missing subnet name", f"{path}.name")
        _expect(name not in seen_subnets, f"duplicate subnet name '{name}'", f"{path}.name")
        seen_subnets.add(name)
        try:
            importance = Importance(entry.get("importance"))
        except ValueError:
            raise ScenarioError(
                f"importance must be one of {[m.value for m in Importance]}",
                f"{path}.importance",
            ) from None
        names = entry.get("hosts")
        _expect(isinstance(names, list) and names, "subnet host list is empty", f"{path}.hosts")
        for j, hn in enumerate(names):
            _expect(isinstance(hn, str) and hn, "host name must be a string", f"{path}.hosts[{j}]")
            _expect(
                hn not in host_to_subnet,
                f"host '{hn}' listed in more than one subnet",
                f"{path}.hosts[{j}]",
            )
            host_to_subnet[hn] = name
        subnets.append(SubnetSpec(name, importance, tuple(names)))

    hosts: list[HostSpec] = []
    seen_hosts: set[str] = set()
    for i, entry in enumerate(doc["hosts"]):
        path = f"hosts[{i}]"
        _expect(isinstance(entry, dict), "must be an object", path)
        unknown = set(entry) - {"name", "ports", "entry", "defender"}
        _expect(not unknown, f"unknown keys {sorted(unknown)}", path)
        name = entry.get("name")
        _expect(isinstance(name, str) and name, "missing host name", f"{path}.name")
        _expect(name not in seen_hosts, f"duplicate host name '{name}'", f"{path}.name")
        seen_hosts.add(name)
        _expect(name in host_to_subnet, f"host '{name}' not listed in any subnet", f"{path}.name")
        ports = entry.get("ports")
        _expect(isinstance(ports, list) and ports, "base port set is empty", f"{path}.ports")
        port_set = frozenset(_check_port(p, f"{path}.ports") for p in ports)
        hosts.append(
            HostSpec(
                name=name,
                subnet=host_to_subnet[name],
                base_open_ports=port_set,
                is_entry=bool(entry.get("entry", False)),
                is_defender=bool(entry.get("defender", False)),
            )
        )
    missing = set(host_to_subnet) - seen_hosts
    _expect(not missing, f"hosts {sorted(missing)} lack a hosts[] entry", "hosts")
    _expect(len(hosts) >= 3, "scenario needs at least 3 hosts", "hosts")

    entries = [h for h in hosts if h.is_entry]
    _expect(len(entries) != 0, "entry host missing", "hosts")
    _expect(len(entries) == 1, "more than one entry host", "hosts")
    entry_subnet = next(s for s in subnets if s.name == entries[0].subnet)
    _expect(
        entry_subnet.importance is Importance.USER,
        "entry host not in user subnet",
        "hosts",
    )

    bridges: list[BridgeSpec] = []
    for i, pair in enumerate(doc.get("bridges", [])):
        path = f"bridges[{i}]"
        _expect(
            isinstance(pair, list) and len(pair) == 2,
            "bridge must be a [source, target] pair",
            path,
        )
        src, dst = pair
        for hn in (src, dst):
            _expect(hn in host_to_subnet, f"unknown host '{hn}'", path)
        _expect(
            host_to_subnet[src] != host_to_subnet[dst],
            "bridge within one subnet",
            path,
        )
        bridges.append(BridgeSpec(src, dst))

    decoy_doc = doc.get("decoy_ports", dict(DEFAULT_DECOY_PORTS))
    _expect(isinstance(decoy_doc, dict), "must be an object", "decoy_ports")
    _expect(
        set(decoy_doc) == set(DECOY_KINDS),
        f"decoy kinds must be exactly {list(DECOY_KINDS)}",
        "decoy_ports",
    )
    decoy_ports = tuple((k, _check_port(decoy_doc[k], f"decoy_ports.{k}")) for k in DECOY_KINDS)
    port_values = [p for _, p in decoy_ports]
    _expect(len(set(port_values)) == len(port_values), "decoy ports must be distinct", "decoy_ports")

    dyn_doc = doc.get("dynamics", {})
    _expect(isinstance(dyn_doc, dict), "must be an object", "dynamics")
    unknown = set(dyn_doc) - _ALLOWED_DYNAMICS_KEYS
    _expect(not unknown, f"unknown keys {sorted(unknown)}", "dynamics")
    if "malicious_remote_ports" in dyn_doc:
        dyn_doc = dict(dyn_doc)
        dyn_doc["malicious_remote_ports"] = tuple(
            _check_port(p, "dynamics.malicious_remote_ports")
            for p in dyn_doc["malicious_remote_ports"]
        )
    dynamics = DynamicsConfig(**dyn_doc)
    _expect(dynamics.horizon >= 1, "horizon must be >= 1", "dynamics.horizon")
    for prob in ("p_exploit", "p_green", "p_detect"):
        _expect(0.0 <= getattr(dynamics, prob) <= 1.0, f"{prob} must be in [0, 1]", f"dynamics.{prob}")

    return Scenario(
        subnets=tuple(subnets),
        hosts=tuple(hosts),
        bridges=tuple(bridges),
        decoy_port_map=decoy_ports,
        dynamics=dynamics,
    )


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as f:
        return load_scenario(f.read())


def bundled_scenario_text(name: str) -> str:
    """Text of a scenario shipped with the package (e.g. "scenario2")."""
    return resources.files("topodef.scenarios").joinpath(f"{name}.json").read_text("utf-8")


def load_bundled(name: str) -> Scenario:
    return load_scenario(bundled_scenario_text(name))


def scenario_to_document(s: Scenario) -> dict:
    """Inverse of load_scenario, suitable for json.dump."""
    doc = {
        "subnets": [
            {"name": sn.name, "importance": sn.importance.value, "hosts": list(sn.host_names)}
            for sn in s.subnets
        ],
        "hosts": [],
        "bridges": [[b.source, b.target] for b in s.bridges],
        "decoy_ports": dict(s.decoy_port_map),
    }
    for h in s.hosts:
        entry: dict = {"name": h.name, "ports": sorted(h.base_open_ports)}
        if h.is_entry:
            entry["entry"] = True
        if h.is_defender:
            entry["defender"] = True
        doc["hosts"].append(entry)
    dyn = s.dynamics
    if dyn != DynamicsConfig():
        doc["dynamics"] = {
            "p_exploit": dyn.p_exploit,
            "p_green": dyn.p_green,
            "p_detect": dyn.p_detect,
            "horizon": dyn.horizon,
        }
        if dyn.malicious_remote_ports:
            doc["dynamics"]["malicious_remote_ports"] = list(dyn.malicious_remote_ports)
    return doc


def base_edges(s: Scenario) -> list[tuple[int, int]]:
    """All directed edges of the expected layout.

    Every ordered pair within a subnet (intra-subnet traffic is unrestricted)
    plus both directions of every bridge; sorted lexicographically.
    """
    edges: set[tuple[int, int]] = set()
    for si in range(len(s.subnets)):
        members = s.hosts_in_subnet(si)
        for u in members:
            for v in members:
                if u != v:
                    edges.add((u, v))
    for b in s.bridges:
        u, v = s.host_index[b.source], s.host_index[b.target]
        edges.add((u, v))
        edges.add((v, u))
    return sorted(edges)


def intra_subnet_edge_count(s: Scenario) -> int:
    return sum(len(s.hosts_in_subnet(i)) * (len(s.hosts_in_subnet(i)) - 1) for i in range(len(s.subnets)))


_USER_SUFFIX = re.compile(r"^User(\d+)$")


def make_variant(s: Scenario, delta_users: int, seed: int = 0) -> Scenario:
    """Add or remove user hosts (the entry host's subnet).

    Additions append hosts named User{k} (next free numeric suffix) carrying
    the entry host's base port set; removals drop the highest-numbered
    non-entry user hosts along with any bridges touching them. Deterministic
    given (s, delta_users, seed); `seed` is reserved for future randomized
    variants and does not affect the current construction.
    """
    entry = s.hosts[s.entry_index]
    user_subnet = next(sn for sn in s.subnets if sn.name == entry.subnet)

    if delta_users == 0:
        return s

    if delta_users < 0:
        removable = [n for n in user_subnet.host_names if n != entry.name]
        if len(removable) < -delta_users:
            raise ScenarioError(
                "removal would delete the entry host or empty the user subnet",
                "delta_users",
            )

        def suffix_key(name: str):
            m = _USER_SUFFIX.match(name)
            return (0, int(m.group(1))) if m else (1, name)

        doomed = set(sorted(removable, key=suffix_key)[-(-delta_users):])
        new_subnets = tuple(
            SubnetSpec(sn.name, sn.importance, tuple(n for n in sn.host_names if n not in doomed))
            if sn.name == user_subnet.name
            else sn
            for sn in s.subnets
        )
        new_hosts = tuple(h for h in s.hosts if h.name not in doomed)
        new_bridges = tuple(b for b in s.bridges if b.source not in doomed and b.target not in doomed)
        return Scenario(new_subnets, new_hosts, new_bridges, s.decoy_port_map, s.dynamics)

    used = [
        int(m.group(1)) for h in s.hosts if (m := _USER_SUFFIX.match(h.name)) is not None
    ]
    next_k = max(used) + 1 if used else len(user_subnet.host_names)
    new_names = []
    existing = {h.name for h in s.hosts}
    k = next_k
    while len(new_names) < delta_users:
        candidate = f"User{k}"
        if candidate not in existing:
            new_names.append(candidate)
        k += 1
    added = tuple(
        HostSpec(name=n, subnet=user_subnet.name, base_open_ports=entry.base_open_ports)
        for n in new_names
    )
    new_subnets = tuple(
        SubnetSpec(sn.name, sn.importance, sn.host_names + tuple(new_names))
        if sn.name == user_subnet.name
        else sn
        for sn in s.subnets
    )
    return Scenario(new_subnets, s.hosts + added, s.bridges, s.decoy_port_map, s.dynamics)
