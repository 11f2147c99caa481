import math

import numpy as np
import pytest

from core.cost import CostKind, LinkCostModel, cost_derivative, cost_value, network_costs
from core.errors import CapacityExceededError, CECError


class TestMM1:
    def test_half_loaded(self):
        model = LinkCostModel(CostKind.MM1, 10.0)
        assert cost_value(model, 5.0) == pytest.approx(1.0)
        assert cost_derivative(model, 5.0) == pytest.approx(0.4)

    def test_near_capacity(self):
        assert cost_value(LinkCostModel(CostKind.MM1, 10.0), 9.9) == pytest.approx(99.0)

    def test_idle_derivative(self):
        assert cost_derivative(LinkCostModel(CostKind.MM1, 10.0), 0.0) == pytest.approx(0.1)

    def test_at_capacity_raises(self):
        model = LinkCostModel(CostKind.MM1, 10.0)
        with pytest.raises(CapacityExceededError, match='capacity exceeded'):
            model.value(10.0)
        with pytest.raises(CapacityExceededError):
            model.derivative(12.0)

    def test_vector_reports_link(self):
        model = LinkCostModel(CostKind.MM1, np.array([10.0, 5.0, 10.0]))
        with pytest.raises(CapacityExceededError) as info:
            model.value(np.array([1.0, 6.0, 1.0]))
        assert info.value.link == 1


class TestExponential:
    def test_idle(self):
        model = LinkCostModel(CostKind.EXP, 10.0)
        assert cost_value(model, 0.0) == pytest.approx(1.0)
        assert cost_derivative(model, 0.0) == pytest.approx(0.1)

    def test_derivative(self):
        assert cost_derivative(LinkCostModel(CostKind.EXP, 10.0), 0.5) == pytest.approx(0.1 * math.exp(0.05))

    def test_no_capacity_barrier(self):
        assert cost_value(LinkCostModel(CostKind.EXP, 10.0), 20.0) == pytest.approx(math.exp(2.0))

    def test_coefficient(self):
        model = LinkCostModel(CostKind.EXP, 10.0, coeff=2.0)
        assert cost_value(model, 5.0) == pytest.approx(math.e)
        assert cost_derivative(model, 5.0) == pytest.approx(0.2 * math.e)


class TestModel:
    @pytest.mark.parametrize('kind', [CostKind.MM1, CostKind.EXP])
    def test_convex_and_increasing(self, kind):
        model = LinkCostModel(kind, 10.0)
        flows = np.linspace(0.0, 9.0, 50)
        assert np.all(np.diff(model.value(flows)) > 0)
        assert np.all(np.diff(model.derivative(flows)) > 0)
        assert np.all(model.second_derivative(flows) > 0)

    def test_negative_flow_rejected(self):
        with pytest.raises(CECError):
            LinkCostModel(CostKind.EXP, 10.0).value(-1.0)

    def test_parse(self):
        assert CostKind.parse(' MM1 ') is CostKind.MM1
        assert CostKind.parse(CostKind.EXP) is CostKind.EXP
        with pytest.raises(CECError):
            CostKind.parse('quadratic')

    def test_restrict(self):
        model = LinkCostModel(CostKind.MM1, np.array([1.0, 2.0, 3.0]))
        assert list(model.restrict([0, 2]).capacity) == [1.0, 3.0]

    def test_network_costs_follow_link_order(self, chain3):
        costs = network_costs(chain3.augmented, 'mm1')
        assert costs.kind is CostKind.MM1
        assert list(costs.capacity) == list(chain3.augmented.capacities)
