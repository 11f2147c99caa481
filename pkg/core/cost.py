"""
链路代价模型：M/M/1 时延与指数比例代价，均提供解析一阶/二阶导数
"""

from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np

from core.errors import CapacityExceededError, CECError

ArrayLike = Union[float, np.ndarray]


class CostKind(Enum):
    MM1 = 'mm1'
    EXP = 'exp'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise CECError(f"未知的代价类型: {value}") from None


@dataclass(frozen=True)
class LinkCostModel:
    """
    链路代价模型

    capacity 与 coeff 可以是标量或按链路顺序排列的数组；
    数组形式时 value/derivative 对整组链路流量向量化计算。
    """
    kind: CostKind
    capacity: ArrayLike
    coeff: ArrayLike = 1.0

    def _check(self, flow):
        flow = np.asarray(flow, dtype=float)
        if np.any(flow < -1e-12):
            raise CECError(f"链路流量不能为负: {flow.min()}")
        if self.kind is CostKind.MM1:
            over = np.asarray(flow >= self.capacity)
            if over.any():
                link = int(np.flatnonzero(over.ravel())[0]) if over.ndim else None
                raise CapacityExceededError(f"capacity exceeded: 链路 {link} 的流量达到容量", link=link)
        return flow

    @staticmethod
    def _out(result):
        return float(result) if np.ndim(result) == 0 else result

    def value(self, flow):
        flow = self._check(flow)
        if self.kind is CostKind.MM1:
            return self._out(flow / (self.capacity - flow))
        return self._out(np.exp(self.coeff * flow / self.capacity))

    def derivative(self, flow):
        flow = self._check(flow)
        if self.kind is CostKind.MM1:
            return self._out(self.capacity / (self.capacity - flow) ** 2)
        ratio = self.coeff / self.capacity
        return self._out(ratio * np.exp(ratio * flow))

    def second_derivative(self, flow):
        flow = self._check(flow)
        if self.kind is CostKind.MM1:
            return self._out(2.0 * self.capacity / (self.capacity - flow) ** 3)
        ratio = self.coeff / self.capacity
        return self._out(ratio ** 2 * np.exp(ratio * flow))

    def restrict(self, links):
        """取部分链路的子模型"""
        capacity = self.capacity if np.ndim(self.capacity) == 0 else np.asarray(self.capacity)[links]
        coeff = self.coeff if np.ndim(self.coeff) == 0 else np.asarray(self.coeff)[links]
        return LinkCostModel(self.kind, capacity, coeff)


def cost_value(model, flow):
    return model.value(flow)


def cost_derivative(model, flow):
    return model.derivative(flow)


def network_costs(augmented, kind='exp', coeff=1.0):
    """按增广图的链路顺序构造整网代价模型"""
    return LinkCostModel(CostKind.parse(kind), np.asarray(augmented.capacities, dtype=float), coeff)
