"""Defender-side views of the world: the directed-graph encoding the policy
consumes, plus the per-host activity table and its bit-vector form used for
interpretability and rendering.

Everything here is a pure function of defender-visible evidence (detected
connections, analysed files, the defender's own action history); undetected
attacker state never leaks in.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .actions import REMOVE_SLOT, RESTORE_SLOT
from .netsim import SimState
from .scenario import Scenario, base_edges

NODE_FEATURE_DIM = 3
EDGE_FEATURE_DIM = 1
GLOBAL_FEATURE_DIM = 3


@dataclass(frozen=True)
class GraphObservation:
    """Directed graph the policy sees.

    Node rows are [subnet index, open-port count, malicious-file flag]; each
    edge carries the count of detected connections for that ordered pair
    (0 on quiet base-layout edges); the global vector is
    [previous action node (N for system-wide), action index, success].
    """

    node_features: np.ndarray  # (N, 3) float64
    edge_src: np.ndarray  # (E,) int64
    edge_dst: np.ndarray  # (E,) int64
    edge_features: np.ndarray  # (E, 1) float64
    global_features: np.ndarray  # (3,) float64
    hostnames: tuple

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edge_src.shape[0]

    def edge_set(self) -> set:
        return set(zip(self.edge_src.tolist(), self.edge_dst.tolist()))

    def with_extra_edges(self, extra) -> "GraphObservation":
        """Copy with additional (src, dst, count) edges appended; duplicates
        of existing pairs are rejected."""
        existing = self.edge_set()
        add = []
        for src, dst, count in extra:
            if (src, dst) in existing:
                raise ValueError(f"duplicate edge ({src}, {dst})")
            existing.add((src, dst))
            add.append((src, dst, count))
        if not add:
            return self
        src = np.concatenate([self.edge_src, np.array([e[0] for e in add], dtype=np.int64)])
        dst = np.concatenate([self.edge_dst, np.array([e[1] for e in add], dtype=np.int64)])
        feat = np.concatenate(
            [self.edge_features, np.array([[float(e[2])] for e in add], dtype=np.float64)]
        )
        return GraphObservation(
            self.node_features, src, dst, feat, self.global_features, self.hostnames
        )

    def to_json_dict(self) -> dict:
        return {
            "nodes": self.node_features.tolist(),
            "edges": [
                {"src": int(s), "dst": int(d), "count": float(c)}
                for s, d, c in zip(self.edge_src, self.edge_dst, self.edge_features[:, 0])
            ],
            "global": self.global_features.tolist(),
            "hosts": {str(i): name for i, name in enumerate(self.hostnames)},
        }


_BASE_EDGE_CACHE: dict = {}


def _base_edge_list(sc: Scenario):
    key = id(sc)
    cached = _BASE_EDGE_CACHE.get(key)
    if cached is None or cached[0] is not sc:
        cached = (sc, base_edges(sc))
        _BASE_EDGE_CACHE[key] = cached
    return cached[1]


def encode_graph(st: SimState) -> GraphObservation:
    sc = st.scenario
    n = sc.n_hosts
    nodes = np.empty((n, NODE_FEATURE_DIM), dtype=np.float64)
    for i, h in enumerate(st.hosts):
        nodes[i, 0] = sc.subnet_of[i]
        nodes[i, 1] = len(h.open_ports)
        nodes[i, 2] = 1.0 if h.malicious_file_analysed else 0.0

    counts: dict = {pair: 0 for pair in _base_edge_list(sc)}
    for local, h in enumerate(st.hosts):
        for c in h.connections:
            if c.detected:
                pair = (c.remote_host, local)
                counts[pair] = counts.get(pair, 0) + 1
    pairs = sorted(counts)
    edge_src = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    edge_dst = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    edge_feat = np.fromiter((counts[p] for p in pairs), dtype=np.float64, count=len(pairs))

    lb = st.last_blue
    global_feat = np.array(
        [float(n if lb.node is None else lb.node), float(lb.action_index), float(lb.success)],
        dtype=np.float64,
    )
    return GraphObservation(
        node_features=nodes,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_features=edge_feat.reshape(-1, 1),
        global_features=global_feat,
        hostnames=tuple(h.name for h in sc.hosts),
    )


class Activity(str, Enum):
    NONE = "None"
    SCAN = "Scan"
    EXPLOIT = "Exploit"


class Compromised(str, Enum):
    NO = "No"
    UNKNOWN = "Unknown"
    USER = "User"
    PRIVILEGED = "Privileged"


@dataclass(frozen=True)
class BlueTableRow:
    subnet: str
    ip: str
    hostname: str
    activity: Activity
    compromised: Compromised


def _malicious_port_set(sc: Scenario) -> set:
    return {p for _, p in sc.decoy_port_map} | set(sc.dynamics.malicious_remote_ports)


def classify_activity(detected_connections, malicious_ports) -> Activity:
    """Appendix-table heuristics on detected records.

    Exploit: traffic touching a known malicious port, or more than two
    connections concentrated on a single local port. Scan: more than two
    connections across two or more local ports, or any remaining anomaly.
    """
    if not detected_connections:
        return Activity.NONE
    local_ports = {c.local_port for c in detected_connections}
    if any(
        c.remote_port in malicious_ports or c.local_port in malicious_ports
        for c in detected_connections
    ):
        return Activity.EXPLOIT
    if len(detected_connections) > 2 and len(local_ports) == 1:
        return Activity.EXPLOIT
    return Activity.SCAN


def blue_table(st: SimState, last_host_action=None) -> list:
    """Per-host (Activity, Compromised) rows.

    `last_host_action` gives the most recent per-host blue action slot (or
    None); the caller tracks it across the episode. Compromised precedence:
    Privileged > User > Unknown > No.
    """
    sc = st.scenario
    if last_host_action is None:
        last_host_action = [None] * sc.n_hosts
    malicious_ports = _malicious_port_set(sc)
    rows = []
    for i, h in enumerate(st.hosts):
        detected = [c for c in h.connections if c.detected]
        activity = classify_activity(detected, malicious_ports)
        if h.malicious_file_analysed:
            compromised = Compromised.PRIVILEGED
        elif activity is Activity.EXPLOIT:
            compromised = Compromised.USER
        elif last_host_action[i] == REMOVE_SLOT:
            compromised = Compromised.UNKNOWN
        else:
            compromised = Compromised.NO
        rows.append(
            BlueTableRow(
                subnet=sc.subnets[sc.subnet_of[i]].name,
                ip=sc.ip_label(i),
                hostname=sc.hosts[i].name,
                activity=activity,
                compromised=compromised,
            )
        )
    return rows


_ACTIVITY_BITS = {Activity.NONE: (0, 0), Activity.SCAN: (1, 0), Activity.EXPLOIT: (1, 1)}
_COMPROMISED_BITS = {
    Compromised.NO: (0, 0),
    Compromised.UNKNOWN: (1, 0),
    Compromised.USER: (0, 1),
    Compromised.PRIVILEGED: (1, 1),
}


def bitvector(rows) -> list:
    """4 bits per host in host-index order: activity pair then compromised pair."""
    bits = []
    for row in rows:
        bits.extend(_ACTIVITY_BITS[row.activity])
        bits.extend(_COMPROMISED_BITS[row.compromised])
    return bits


def render_table(rows) -> str:
    headers = ("Subnet", "IP", "Hostname", "Activity", "Compromised")
    cells = [
        (r.subnet, r.ip, r.hostname, r.activity.value, r.compromised.value) for r in rows
    ]
    widths = [max(len(h), *(len(c[k]) for c in cells)) if cells else len(h) for k, h in enumerate(headers)]
    def fmt(values):
        return "  ".join(v.ljust(w) for v, w in zip(values, widths)).rstrip()
    lines = [fmt(headers), fmt(tuple("-" * w for w in widths))]
    lines.extend(fmt(c) for c in cells)
    return "\n".join(lines)


def track_last_host_action(last_host_action: list, action) -> list:
    """Update the per-host action history used by blue_table."""
    if not action.is_global:
        last_host_action = list(last_host_action)
        last_host_action[action.node] = action.slot
    return last_host_action
