"""topodef: graph-native autonomous network defence.

A seedable attack/defence network simulator with directed-graph
observations, a graph-attention policy whose action space adapts to node
count, a REINFORCE trainer, and an evaluation harness for cross-topology
generalization and dynamic-edge robustness experiments.
"""

__version__ = "0.1.0"

from .actions import BlueAction  # noqa: F401
from .scenario import Scenario, load_bundled, load_scenario, make_variant  # noqa: F401
from .netsim import SimState, blue_step, reset  # noqa: F401
from .observe import GraphObservation, blue_table, encode_graph  # noqa: F401
from .policy import PolicyParams, PolicySpec, init_policy_params, policy_forward  # noqa: F401
from .train import TrainConfig, train  # noqa: F401
