import math

import numpy as np
import pandas as pd
import pytest

from core.errors import AllocationError, RoutingError
from core.flow import (Allocation, FlowState, RoutingConfig, check_conservation, flows_to_frame, propagate,
                       random_allocation, random_routing, save_flow_state, total_cost, total_utility)


def _diamond_routing(instance, first, second):
    augmented = instance.augmented
    routing = RoutingConfig.uniform(instance.dags, augmented.num_links)
    routing.fractions[0, augmented.link_index(augmented.source, 0)] = first
    routing.fractions[0, augmented.link_index(augmented.source, 1)] = second
    return routing


class TestAllocation:
    def test_uniform(self):
        allocation = Allocation.uniform(60.0, 3)
        assert list(allocation.rates) == [20.0, 20.0, 20.0]
        assert len(allocation) == 3

    def test_sum_must_match(self):
        with pytest.raises(AllocationError):
            Allocation(np.array([1.0, 2.0]), 4.0)

    def test_negative_rejected(self):
        with pytest.raises(AllocationError):
            Allocation(np.array([-1.0, 5.0]), 4.0)

    def test_rates_read_only(self):
        allocation = Allocation(np.array([1.0, 3.0]), 4.0)
        with pytest.raises(ValueError):
            allocation.rates[0] = 2.0

    def test_random_allocation_feasible(self, rng):
        for _ in range(20):
            allocation = random_allocation(60.0, 3, rng)
            assert allocation.rates.sum() == pytest.approx(60.0, abs=1e-9)


class TestRoutingConfig:
    def test_uniform_rows(self, small_network):
        routing = RoutingConfig.uniform(small_network.dags, small_network.num_links)
        assert routing.validate()

    def test_support_outside_dag(self, triangle):
        augmented = triangle.augmented
        routing = RoutingConfig.uniform(triangle.dags, augmented.num_links)
        routing.fractions[0, augmented.link_index(0, 1)] = 0.5
        with pytest.raises(RoutingError, match='outside dag'):
            routing.validate()
        with pytest.raises(RoutingError, match='outside dag'):
            propagate(augmented, triangle.dags, Allocation.uniform(3.0, 3), routing)

    def test_row_sum(self, diamond):
        routing = _diamond_routing(diamond, 0.3, 0.3)
        with pytest.raises(RoutingError):
            routing.validate()

    def test_random_routing_valid(self, small_network, rng):
        assert random_routing(small_network.dags, small_network.num_links, rng).validate()


class TestPropagate:
    def test_diamond_uniform(self, diamond):
        augmented = diamond.augmented
        routing = RoutingConfig.uniform(diamond.dags, augmented.num_links)
        flows = propagate(augmented, diamond.dags, Allocation.uniform(1.0, 1), routing)
        assert np.allclose(flows.link_flows, 0.5)
        assert total_cost(flows, diamond.costs) == pytest.approx(4.0 * math.exp(0.05))

    def test_diamond_skewed(self, diamond):
        augmented = diamond.augmented
        flows = propagate(augmented, diamond.dags, Allocation.uniform(2.0, 1), _diamond_routing(diamond, 0.3, 0.7))
        assert flows.link_flows[augmented.link_index(augmented.source, 0)] == pytest.approx(0.6)
        assert flows.link_flows[augmented.link_index(augmented.source, 1)] == pytest.approx(1.4)
        assert flows.link_flows[augmented.link_index(1, augmented.destination(0))] == pytest.approx(1.4)
        assert flows.node_rates[0, 0] == pytest.approx(0.6)

    def test_chain(self, chain):
        routing = RoutingConfig.uniform(chain.dags, chain.num_links)
        flows = propagate(chain.augmented, chain.dags, Allocation.uniform(1.0, 1), routing)
        assert total_cost(flows, chain.costs) == pytest.approx(2.0 * math.exp(0.1))

    def test_chain3_relay(self, chain3):
        augmented = chain3.augmented
        routing = RoutingConfig.uniform(chain3.dags, augmented.num_links)
        flows = propagate(augmented, chain3.dags, Allocation(np.array([1.0, 3.0]), 4.0), routing)
        assert flows.node_rates[0, 1] == pytest.approx(1.0)
        assert flows.session_flows[1, augmented.link_index(0, 1)] == 0.0
        assert flows.link_flows[augmented.link_index(augmented.source, 0)] == pytest.approx(4.0)
        assert flows.node_rates[1, augmented.destination(1)] == pytest.approx(3.0)

    def test_link_flows_sum_sessions(self, small_network, rng):
        allocation = random_allocation(30.0, 3, rng)
        routing = random_routing(small_network.dags, small_network.num_links, rng)
        flows = propagate(small_network.augmented, small_network.dags, allocation, routing)
        assert np.allclose(flows.link_flows, flows.session_flows.sum(axis=0))

    def test_dimension_mismatch(self, diamond):
        routing = RoutingConfig.uniform(diamond.dags, diamond.num_links)
        with pytest.raises(RoutingError):
            propagate(diamond.augmented, diamond.dags, np.array([0.5, 0.5]), routing)

    def test_total_utility(self, symmetric_pair, log_oracle_pair):
        routing = RoutingConfig.uniform(symmetric_pair.dags, symmetric_pair.num_links)
        allocation = Allocation.uniform(10.0, 2)
        flows = propagate(symmetric_pair.augmented, symmetric_pair.dags, allocation, routing)
        expected = 2 * 100.0 * math.log(1.25) - 4.0 * math.exp(0.5)
        assert total_utility(allocation, log_oracle_pair, flows, symmetric_pair.costs) == pytest.approx(expected)


class TestConservation:
    def test_holds(self, small_network, rng):
        allocation = random_allocation(30.0, 3, rng)
        routing = random_routing(small_network.dags, small_network.num_links, rng)
        flows = propagate(small_network.augmented, small_network.dags, allocation, routing)
        assert check_conservation(flows, small_network.augmented, allocation).max_residual < 1e-9

    def test_detects_corruption(self, diamond):
        augmented = diamond.augmented
        allocation = Allocation.uniform(1.0, 1)
        flows = propagate(augmented, diamond.dags, allocation, RoutingConfig.uniform(diamond.dags, augmented.num_links))
        corrupted = flows.session_flows.copy()
        corrupted[0, augmented.link_index(0, augmented.destination(0))] += 0.25
        report = check_conservation(FlowState(flows.node_rates, corrupted, corrupted.sum(axis=0)), augmented, allocation)
        assert report.host == pytest.approx(0.25)
        assert report.destination == pytest.approx(0.25)
        assert report.worst_node[0] == 0


class TestFlowFrame:
    def test_rows(self, chain3, tmp_path):
        augmented = chain3.augmented
        routing = RoutingConfig.uniform(chain3.dags, augmented.num_links)
        flows = propagate(augmented, chain3.dags, Allocation(np.array([1.0, 3.0]), 4.0), routing)
        frame = flows_to_frame(flows, augmented)
        assert list(frame.columns) == ['session', 'i', 'j', 'flow']
        assert len(frame) == 3 * augmented.num_links
        path = save_flow_state(flows, augmented, tmp_path / 'flows' / 'chain3.csv')
        loaded = pd.read_csv(path, dtype={'session': str, 'i': str, 'j': str})
        totals = loaded[loaded['session'] == 'link']
        assert totals['flow'].sum() == pytest.approx(flows.link_flows.sum())
        assert ('S', '0') in set(zip(loaded['i'], loaded['j']))
