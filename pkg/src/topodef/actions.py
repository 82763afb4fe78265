"""Defender action vocabulary shared by the simulator, policy, and CLI.

Frozen enumeration (the observation encoder and checkpoint format depend on
it): within the global class Sleep=0, Monitor=1; within the per-host class
Analyse=0, Remove=1, Restore=2, Decoy kinds=3..9. The joint action-index
layout is [global actions..., node 0 locals..., node 1 locals, ...].
"""

from __future__ import annotations

from dataclasses import dataclass

from .scenario import DECOY_KINDS

GLOBAL_ACTION_NAMES = ("Sleep", "Monitor")
SLEEP_SLOT, MONITOR_SLOT = 0, 1

ANALYSE_SLOT, REMOVE_SLOT, RESTORE_SLOT = 0, 1, 2
FIRST_DECOY_SLOT = 3
NUM_CANONICAL_LOCAL_ACTIONS = FIRST_DECOY_SLOT + len(DECOY_KINDS)  # 10
NUM_GLOBAL_ACTIONS = 2


def local_slot_name(slot: int) -> str:
    if slot == ANALYSE_SLOT:
        return "Analyse"
    if slot == REMOVE_SLOT:
        return "Remove"
    if slot == RESTORE_SLOT:
        return "Restore"
    if FIRST_DECOY_SLOT <= slot < NUM_CANONICAL_LOCAL_ACTIONS:
        return f"Decoy:{DECOY_KINDS[slot - FIRST_DECOY_SLOT]}"
    # Spare columns beyond the canonical 10 (11-column head configs) act as
    # per-host no-ops.
    return f"Noop{slot}"


@dataclass(frozen=True)
class BlueAction:
    """A defender action: `node` is None for system-wide actions.

    `slot` is the within-class action index (see module docstring).
    """

    node: int | None
    slot: int

    @property
    def is_global(self) -> bool:
        return self.node is None

    @property
    def decoy_kind(self) -> int | None:
        if not self.is_global and FIRST_DECOY_SLOT <= self.slot < NUM_CANONICAL_LOCAL_ACTIONS:
            return self.slot - FIRST_DECOY_SLOT
        return None

    @property
    def kind(self) -> str:
        if self.is_global:
            return GLOBAL_ACTION_NAMES[self.slot]
        return local_slot_name(self.slot)

    def label(self, hostnames=None) -> str:
        if self.is_global:
            return self.kind
        host = hostnames[self.node] if hostnames is not None else f"node{self.node}"
        return f"{self.kind}({host})"

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if not self.is_global:
            d["node"] = self.node
        return d

    # constructors
    @staticmethod
    def sleep() -> "BlueAction":
        return BlueAction(None, SLEEP_SLOT)

    @staticmethod
    def monitor() -> "BlueAction":
        return BlueAction(None, MONITOR_SLOT)

    @staticmethod
    def analyse(node: int) -> "BlueAction":
        return BlueAction(node, ANALYSE_SLOT)

    @staticmethod
    def remove(node: int) -> "BlueAction":
        return BlueAction(node, REMOVE_SLOT)

    @staticmethod
    def restore(node: int) -> "BlueAction":
        return BlueAction(node, RESTORE_SLOT)

    @staticmethod
    def decoy(node: int, kind: int) -> "BlueAction":
        return BlueAction(node, FIRST_DECOY_SLOT + kind)


def action_to_index(a: BlueAction, n_nodes: int, local_actions: int = NUM_CANONICAL_LOCAL_ACTIONS) -> int:
    """Map an action to its position in the joint logits layout."""
    if a.is_global:
        if not 0 <= a.slot < NUM_GLOBAL_ACTIONS:
            raise ValueError(f"invalid global action slot {a.slot}")
        return a.slot
    if not 0 <= a.node < n_nodes:
        raise ValueError(f"node index {a.node} out of range for {n_nodes} nodes")
    if not 0 <= a.slot < local_actions:
        raise ValueError(f"local action slot {a.slot} out of range")
    return NUM_GLOBAL_ACTIONS + a.node * local_actions + a.slot


def index_to_action(idx: int, n_nodes: int, local_actions: int = NUM_CANONICAL_LOCAL_ACTIONS) -> BlueAction:
    total = NUM_GLOBAL_ACTIONS + n_nodes * local_actions
    if not 0 <= idx < total:
        raise ValueError(f"action index {idx} out of range for {total} actions")
    if idx < NUM_GLOBAL_ACTIONS:
        return BlueAction(None, idx)
    r = idx - NUM_GLOBAL_ACTIONS
    return BlueAction(r // local_actions, r % local_actions)
