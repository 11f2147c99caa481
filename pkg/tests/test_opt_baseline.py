import math

import numpy as np
import pytest

from core.cost import CostKind, LinkCostModel
from core.errors import InfeasibleFlowError
from core.flow import Allocation
from core.opt_baseline import opt_baseline
from core.routing import RoutingSolverConfig, omd_rt_solve


class TestOptBaseline:
    def test_symmetric_diamond(self, diamond):
        result = opt_baseline(diamond.augmented, diamond.dags, Allocation.uniform(1.0, 1), diamond.costs)
        assert result.converged
        assert result.cost == pytest.approx(4.0 * math.exp(0.05), rel=1e-8)

    def test_interior_split(self, asymmetric_diamond):
        instance = asymmetric_diamond
        augmented = instance.augmented
        result = opt_baseline(augmented, instance.dags, Allocation.uniform(20.0, 1), instance.costs)
        via_first = result.link_flows[augmented.link_index(augmented.source, 0)]
        assert via_first == pytest.approx((2.0 + math.log(2.0)) / 0.15, abs=1e-3)

    def test_corner_split(self, asymmetric_diamond):
        instance = asymmetric_diamond
        augmented = instance.augmented
        result = opt_baseline(augmented, instance.dags, Allocation.uniform(6.0, 1), instance.costs)
        assert result.link_flows[augmented.link_index(augmented.source, 0)] == pytest.approx(6.0)
        assert result.cost == pytest.approx(2.0 * math.exp(0.3) + 2.0, rel=1e-8)

    def test_flows_conserved(self, small_network):
        allocation = Allocation(np.array([12.0, 10.0, 8.0]), 30.0)
        result = opt_baseline(small_network.augmented, small_network.dags, allocation, small_network.costs)
        assert np.allclose(result.session_flows.sum(axis=0), result.link_flows)
        source = small_network.augmented.source
        outgoing = small_network.augmented.tails == source
        assert np.allclose(result.session_flows[:, outgoing].sum(axis=1), allocation.rates)

    def test_lower_bounds_omd_rt(self, small_network):
        allocation = Allocation(np.array([12.0, 10.0, 8.0]), 30.0)
        optimum = opt_baseline(small_network.augmented, small_network.dags, allocation, small_network.costs)
        result = omd_rt_solve(small_network.augmented, small_network.dags, allocation, small_network.costs,
                              RoutingSolverConfig(max_iterations=300))
        assert optimum.cost <= result.cost * (1.0 + 1e-6)

    def test_mm1_feasible(self, diamond):
        costs = LinkCostModel(CostKind.MM1, diamond.costs.capacity)
        result = opt_baseline(diamond.augmented, diamond.dags, Allocation.uniform(15.0, 1), costs)
        assert np.all(result.link_flows < 10.0)
        assert result.cost == pytest.approx(4.0 * 7.5 / 2.5, rel=1e-6)

    def test_mm1_infeasible(self, diamond):
        costs = LinkCostModel(CostKind.MM1, diamond.costs.capacity)
        with pytest.raises(InfeasibleFlowError):
            opt_baseline(diamond.augmented, diamond.dags, Allocation.uniform(25.0, 1), costs)
