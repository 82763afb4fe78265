"""Ground-truth network dynamics: defender actions, the meandering attacker,
benign background traffic, and per-turn penalty accounting.

Turn order within one step: blue action, green traffic, red turn, penalty.
All randomness flows through three independent seeded streams (red, green,
detection), so full episode traces are bit-reproducible from
(scenario, seed, blue action sequence).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .actions import (
    ANALYSE_SLOT,
    BlueAction,
    FIRST_DECOY_SLOT,
    NUM_CANONICAL_LOCAL_ACTIONS,
    REMOVE_SLOT,
    RESTORE_SLOT,
)
from .scenario import Importance, Scenario

# Per-turn penalty amounts.
PENALTY_USER_BREACH = -0.1
PENALTY_SERVER_BREACH = -1.0
PENALTY_IMPACT = -10.0
PENALTY_RESTORE = -1.0

EPHEMERAL_LO, EPHEMERAL_HI = 49152, 65536

#: Connection-record counts chosen so the table classifier's "more than two
#: connections" thresholds fire deterministically.
SCAN_CONNECTIONS = 3
EXPLOIT_CONNECTIONS = 3


class CompromiseLevel(IntEnum):
    NOT_COMPROMISED = 0
    USER_ACCESS = 1
    PRIVILEGED = 2


class ConnectionRecord(NamedTuple):
    local_port: int
    remote_host: int
    remote_port: int
    malicious: bool
    detected: bool


class Event(NamedTuple):
    kind: str  # "UserBreach" | "ServerBreach" | "Impact" | "Restore"
    node: int
    amount: float


@dataclass
class HostRuntime:
    open_ports: set
    decoys: set  # of (decoy kind index, port)
    connections: list
    malicious_file_present: bool = False
    malicious_file_analysed: bool = False
    compromise: CompromiseLevel = CompromiseLevel.NOT_COMPROMISED
    scanned_by_red: bool = False

    def decoy_ports(self) -> set:
        return {p for _, p in self.decoys}


@dataclass
class RedState:
    discovered: set
    footholds: dict  # node index -> CompromiseLevel
    target_subnet: int


class LastBlue(NamedTuple):
    node: int | None  # None for system-wide actions
    action_index: int  # within-class slot
    success: bool


@dataclass(frozen=True)
class RedAction:
    kind: str  # "scan" | "exploit" | "escalate" | "discover" | "impact" | "noop"
    target: int  # node index; subnet index for "discover"; -1 for "noop"

    def label(self, scenario: Scenario | None = None) -> str:
        if self.kind == "noop":
            return "Noop"
        if self.kind == "discover":
            name = scenario.subnets[self.target].name if scenario else str(self.target)
            return f"Discover({name})"
        name = scenario.hosts[self.target].name if scenario else f"node{self.target}"
        return f"{self.kind.capitalize()}({name})"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "target": self.target}


@dataclass
class StepOutcome:
    reward: float
    events: tuple
    episode_done: bool


@dataclass
class SimState:
    scenario: Scenario
    hosts: list
    red: RedState
    step_index: int
    last_blue: LastBlue
    last_red: RedAction | None
    rng_red: np.random.Generator
    rng_green: np.random.Generator
    rng_detect: np.random.Generator

    @property
    def horizon(self) -> int:
        return self.scenario.dynamics.horizon

    @property
    def done(self) -> bool:
        return self.step_index >= self.horizon


def reset(scenario: Scenario, seed: int) -> SimState:
    """Fresh state: clean hosts except the entry host, which the attacker owns
    at privileged level and which cannot be reclaimed."""
    hosts = [
        HostRuntime(open_ports=set(h.base_open_ports), decoys=set(), connections=[])
        for h in scenario.hosts
    ]
    entry = scenario.entry_index
    hosts[entry].compromise = CompromiseLevel.PRIVILEGED
    entry_subnet = scenario.subnet_of[entry]
    red = RedState(
        discovered=set(scenario.hosts_in_subnet(entry_subnet)),
        footholds={entry: CompromiseLevel.PRIVILEGED},
        target_subnet=entry_subnet,
    )
    streams = [
        np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        for k in range(3)
    ]
    return SimState(
        scenario=scenario,
        hosts=hosts,
        red=red,
        step_index=0,
        last_blue=LastBlue(None, 0, True),  # sentinel: Sleep no-op, success
        last_red=None,
        rng_red=streams[0],
        rng_green=streams[1],
        rng_detect=streams[2],
    )


def _ephemeral(rng: np.random.Generator) -> int:
    return int(rng.integers(EPHEMERAL_LO, EPHEMERAL_HI))


def apply_blue(st: SimState, a: BlueAction) -> bool:
    """Apply one defender action; returns the simulator success flag."""
    sc = st.scenario
    if a.is_global:
        # Sleep skips the turn; Monitor adds nothing because passive
        # monitoring is always on.
        return True
    if not 0 <= a.node < sc.n_hosts:
        raise ValueError(f"action on nonexistent node index {a.node}")
    h = st.hosts[a.node]
    slot = a.slot
    if slot == ANALYSE_SLOT:
        h.malicious_file_analysed = h.malicious_file_present
        return True
    if slot == REMOVE_SLOT:
        if h.compromise is CompromiseLevel.PRIVILEGED:
            return False
        if h.compromise is CompromiseLevel.USER_ACCESS:
            h.compromise = CompromiseLevel.NOT_COMPROMISED
            st.red.footholds.pop(a.node, None)
        h.connections = [c for c in h.connections if not (c.malicious and c.detected)]
        return True
    if slot == RESTORE_SLOT:
        spec = sc.hosts[a.node]
        h.open_ports = set(spec.base_open_ports)
        h.decoys = set()
        h.connections = []
        h.malicious_file_present = False
        h.malicious_file_analysed = False
        h.scanned_by_red = False
        if a.node == sc.entry_index:
            h.compromise = CompromiseLevel.PRIVILEGED  # attacker entry persists
        else:
            h.compromise = CompromiseLevel.NOT_COMPROMISED
            st.red.footholds.pop(a.node, None)
        return True
    if FIRST_DECOY_SLOT <= slot < NUM_CANONICAL_LOCAL_ACTIONS:
        kind = slot - FIRST_DECOY_SLOT
        port = sc.decoy_port(kind)
        if port in h.open_ports:
            return False
        h.open_ports.add(port)
        h.decoys.add((kind, port))
        return True
    # Spare per-host slots beyond the canonical 10: no-op.
    return True


def apply_green(st: SimState) -> None:
    """Benign traffic: with probability p_green one user host logs one
    harmless connection to an intra-subnet peer."""
    sc = st.scenario
    rng = st.rng_green
    if rng.random() >= sc.dynamics.p_green:
        return
    user_hosts = [i for i in range(sc.n_hosts) if sc.is_user_host(i)]
    if not user_hosts:
        return
    node = user_hosts[int(rng.integers(len(user_hosts)))]
    peers = [j for j in sc.hosts_in_subnet(sc.subnet_of[node]) if j != node]
    if not peers:
        return
    peer = peers[int(rng.integers(len(peers)))]
    ports = sorted(st.hosts[node].open_ports)
    local_port = ports[int(rng.integers(len(ports)))]
    st.hosts[node].connections.append(
        ConnectionRecord(local_port, peer, _ephemeral(rng), malicious=False, detected=True)
    )


def red_policy_meander(st: SimState) -> RedAction:
    """Attacker priority: fully scan, exploit, and escalate the target subnet,
    then hop onward over a bridge; impact the operational server once owned.
    Ties broken by lowest node index."""
    sc = st.scenario
    red = st.red
    target_hosts = sc.hosts_in_subnet(red.target_subnet)

    for i in target_hosts:
        if i in red.discovered and not st.hosts[i].scanned_by_red:
            return RedAction("scan", i)
    for i in range(sc.n_hosts):
        if st.hosts[i].scanned_by_red and st.hosts[i].compromise < CompromiseLevel.USER_ACCESS:
            return RedAction("exploit", i)
    for i in range(sc.n_hosts):
        if st.hosts[i].compromise is CompromiseLevel.USER_ACCESS:
            return RedAction("escalate", i)
    if all(st.hosts[i].compromise is CompromiseLevel.PRIVILEGED for i in target_hosts):
        onward = set()
        for u, v in sc.bridge_pairs:
            if red.footholds.get(u, CompromiseLevel.NOT_COMPROMISED) >= CompromiseLevel.USER_ACCESS:
                subnet = sc.subnet_of[v]
                if any(j not in red.discovered for j in sc.hosts_in_subnet(subnet)):
                    onward.add(subnet)
        if onward:
            return RedAction("discover", min(onward))
    impact = sc.impact_index
    if impact >= 0 and st.hosts[impact].compromise is CompromiseLevel.PRIVILEGED:
        return RedAction("impact", impact)
    return RedAction("noop", -1)


def _attack_source(st: SimState, target: int) -> int:
    """Owned host the attack traffic appears to come from: the lowest-index
    foothold adjacent to the target in the base layout."""
    sc = st.scenario
    footholds = sorted(
        i for i, lvl in st.red.footholds.items() if lvl >= CompromiseLevel.USER_ACCESS
    )
    for i in footholds:
        if i == target:
            continue
        if sc.subnet_of[i] == sc.subnet_of[target] or (i, target) in sc.bridge_pairs:
            return i
    return footholds[0] if footholds else sc.entry_index


def _scan_ports(h: HostRuntime) -> list:
    """Local ports touched by a port sweep: two distinct ports (a closed probe
    when the host only exposes one), repeated to SCAN_CONNECTIONS records."""
    ports = sorted(h.open_ports)
    p0 = ports[0]
    p1 = ports[1] if len(ports) > 1 else p0 + 1
    return [p0, p1, p0][:SCAN_CONNECTIONS]


def apply_red(st: SimState, ra: RedAction) -> list:
    """Apply the attacker action; returns penalty-relevant red events."""
    sc = st.scenario
    dyn = sc.dynamics
    rng = st.rng_red
    events: list = []
    if ra.kind == "noop":
        return events
    if ra.kind == "discover":
        st.red.discovered.update(sc.hosts_in_subnet(ra.target))
        st.red.target_subnet = ra.target
        return events
    if ra.kind == "impact":
        events.append(("impact", ra.target))
        return events

    node = ra.target
    h = st.hosts[node]
    source = _attack_source(st, node)
    if ra.kind == "scan":
        for port in _scan_ports(h):
            h.connections.append(
                ConnectionRecord(port, source, _ephemeral(rng), malicious=True, detected=True)
            )
        h.scanned_by_red = True
        return events
    if ra.kind == "exploit":
        ports = sorted(h.open_ports)
        port = ports[int(rng.integers(len(ports)))]
        if port in h.decoy_ports():
            # Touching a decoy always raises an alert and the exploit fails.
            h.connections.append(
                ConnectionRecord(port, source, _ephemeral(rng), malicious=True, detected=True)
            )
            return events
        if rng.random() < dyn.p_exploit:
            detected = bool(st.rng_detect.random() < dyn.p_detect)
            for _ in range(EXPLOIT_CONNECTIONS):
                h.connections.append(
                    ConnectionRecord(port, source, _ephemeral(rng), malicious=True, detected=detected)
                )
            h.compromise = CompromiseLevel.USER_ACCESS
            st.red.footholds[node] = CompromiseLevel.USER_ACCESS
        return events
    if ra.kind == "escalate":
        h.compromise = CompromiseLevel.PRIVILEGED
        h.malicious_file_present = True
        st.red.footholds[node] = CompromiseLevel.PRIVILEGED
        return events
    raise ValueError(f"unknown red action kind {ra.kind!r}")


def compute_penalty(st: SimState, blue_action: BlueAction, red_events: list) -> StepOutcome:
    """Itemized per-turn penalties: user hosts cost from user-level access up,
    servers only once the attacker is privileged, plus impact and restoration
    charges."""
    sc = st.scenario
    events = []
    for i, h in enumerate(st.hosts):
        if sc.is_user_host(i):
            if h.compromise >= CompromiseLevel.USER_ACCESS:
                events.append(Event("UserBreach", i, PENALTY_USER_BREACH))
        elif h.compromise is CompromiseLevel.PRIVILEGED:
            events.append(Event("ServerBreach", i, PENALTY_SERVER_BREACH))
    for kind, node in red_events:
        if kind == "impact":
            events.append(Event("Impact", node, PENALTY_IMPACT))
    if not blue_action.is_global and blue_action.slot == RESTORE_SLOT:
        events.append(Event("Restore", blue_action.node, PENALTY_RESTORE))
    reward = 0.0
    for ev in events:
        reward += ev.amount
    return StepOutcome(reward=reward, events=tuple(events), episode_done=False)


def blue_step(st: SimState, a: BlueAction):
    """Advance one turn: blue, green, red, penalties.

    Returns (state, StepOutcome, deltas) where deltas maps host index to the
    tuple of newly detected connection records this turn.
    """
    if st.done:
        raise RuntimeError("episode is done; reset before stepping")
    success = apply_blue(st, a)
    marks = [len(h.connections) for h in st.hosts]
    apply_green(st)
    ra = red_policy_meander(st)
    red_events = apply_red(st, ra)
    outcome = compute_penalty(st, a, red_events)
    st.step_index += 1
    st.last_blue = LastBlue(a.node, a.slot, success)
    st.last_red = ra
    outcome.episode_done = st.step_index >= st.horizon
    deltas = {}
    for i, h in enumerate(st.hosts):
        new = tuple(c for c in h.connections[marks[i] :] if c.detected)
        if new:
            deltas[i] = new
    return st, outcome, deltas


def state_snapshot(st: SimState) -> dict:
    """JSON-able full-state snapshot for determinism checks and debugging."""
    return {
        "step_index": st.step_index,
        "last_blue": list(st.last_blue),
        "last_red": st.last_red.to_dict() if st.last_red else None,
        "hosts": [
            {
                "open_ports": sorted(h.open_ports),
                "decoys": sorted(h.decoys),
                "connections": [list(c) for c in h.connections],
                "malicious_file_present": h.malicious_file_present,
                "malicious_file_analysed": h.malicious_file_analysed,
                "compromise": int(h.compromise),
                "scanned_by_red": h.scanned_by_red,
            }
            for h in st.hosts
        ],
        "red": {
            "discovered": sorted(st.red.discovered),
            "footholds": {str(k): int(v) for k, v in sorted(st.red.footholds.items())},
            "target_subnet": st.red.target_subnet,
        },
        "rng": [
            st.rng_red.bit_generator.state,
            st.rng_green.bit_generator.state,
            st.rng_detect.bit_generator.state,
        ],
    }


def trace_record(step: int, a: BlueAction, st: SimState, outcome: StepOutcome) -> dict:
    """One JSON-lines record of the episode trace log."""
    return {
        "step": step,
        "blue_action": a.to_dict(),
        "success": st.last_blue.success,
        "reward": outcome.reward,
        "events": [{"kind": e.kind, "node": e.node, "amount": e.amount} for e in outcome.events],
        "red_action": st.last_red.to_dict() if st.last_red else None,
    }
