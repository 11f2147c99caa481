"""
网络实例：增广图、会话子图与整网代价模型的组合
"""

from dataclasses import dataclass
from typing import Tuple

from core.cost import LinkCostModel, network_costs
from core.topology import AugmentedGraph, augment, build_session_dags


@dataclass(frozen=True)
class NetworkInstance:
    label: str
    augmented: AugmentedGraph
    dags: Tuple
    costs: LinkCostModel

    @property
    def num_sessions(self):
        return self.augmented.num_sessions

    @property
    def num_links(self):
        return self.augmented.num_links


def build_network_instance(topology, placement, cost_kind='exp', cost_coeff=1.0, entry_nodes=None,
                           compute_capacity=None, source_capacity=None, label=None):
    augmented = augment(topology, placement, entry_nodes=entry_nodes,
                        compute_capacity=compute_capacity, source_capacity=source_capacity)
    return NetworkInstance(
        label=label or topology.name,
        augmented=augmented,
        dags=build_session_dags(augmented),
        costs=network_costs(augmented, cost_kind, cost_coeff),
    )
