"""
流量传播：由分配 Λ 与路由变量 φ 计算各会话节点吞吐、链路流量与总代价
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from core.errors import AllocationError, RoutingError

ALLOCATION_TOLERANCE = 1e-9
ROW_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Allocation:
    """会话输入速率向量 Λ，满足 Σλ_w = λ"""
    rates: np.ndarray
    total: float

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        if rates.ndim != 1 or rates.size == 0:
            raise AllocationError(f"分配向量必须是非空一维向量: {rates.shape}")
        if np.any(rates < 0):
            raise AllocationError(f"分配速率不能为负: {rates}")
        if abs(rates.sum() - self.total) > ALLOCATION_TOLERANCE:
            raise AllocationError(f"分配总量 {rates.sum()} 与 λ={self.total} 不一致")
        rates.flags.writeable = False
        object.__setattr__(self, 'rates', rates)

    @classmethod
    def uniform(cls, total, num_sessions):
        return cls(np.full(num_sessions, total / num_sessions), total)

    @property
    def num_sessions(self):
        return self.rates.size

    def __len__(self):
        return self.rates.size


def rates_of(allocation):
    return np.asarray(getattr(allocation, 'rates', allocation), dtype=float)


@dataclass
class RoutingConfig:
    """各会话、各节点在允许出链路上的转发比例 φ，按链路顺序存为 (W, L) 数组"""
    dags: Tuple
    fractions: np.ndarray

    @classmethod
    def uniform(cls, dags, num_links):
        fractions = np.zeros((len(dags), num_links))
        for w, dag in enumerate(dags):
            for links in dag.out_links.values():
                fractions[w, list(links)] = 1.0 / len(links)
        return cls(tuple(dags), fractions)

    @property
    def num_sessions(self):
        return len(self.dags)

    def copy(self):
        return RoutingConfig(self.dags, self.fractions.copy())

    def validate(self, tolerance=ROW_TOLERANCE):
        """检查非负、行和为1、支撑集在会话子图内"""
        fractions = self.fractions
        if fractions.shape[0] != len(self.dags):
            raise RoutingError(f"路由变量会话数 {fractions.shape[0]} 与子图数 {len(self.dags)} 不一致")
        if np.any(fractions < 0):
            raise RoutingError("路由变量存在负值")
        for w, dag in enumerate(self.dags):
            if np.any(fractions[w, ~dag.allowed] != 0):
                raise RoutingError(f"φ support outside dag: 会话 {w} 在子图外有非零路由变量")
            for node, links in dag.out_links.items():
                total = fractions[w, list(links)].sum()
                if abs(total - 1.0) > tolerance:
                    raise RoutingError(f"会话 {w} 节点 {node} 的路由变量和为 {total}")
        return True


def random_routing(dags, num_links, rng, concentration=1.0):
    """每个路由节点按 Dirichlet 分布随机取转发比例"""
    fractions = np.zeros((len(dags), num_links))
    for w, dag in enumerate(dags):
        for node in sorted(dag.out_links):
            links = list(dag.out_links[node])
            fractions[w, links] = rng.dirichlet(np.full(len(links), concentration))
    return RoutingConfig(tuple(dags), fractions)


def random_allocation(total, num_sessions, rng):
    rates = rng.dirichlet(np.ones(num_sessions)) * total
    rates[-1] = total - rates[:-1].sum()
    return Allocation(np.maximum(rates, 0.0), total)


@dataclass(frozen=True)
class FlowState:
    """node_rates (W, n) 为 t_i(w)，session_flows (W, L) 为 f_ij(w)，link_flows (L) 为 F_ij"""
    node_rates: np.ndarray
    session_flows: np.ndarray
    link_flows: np.ndarray


def session_matrix(augmented, dag, fractions):
    """按会话拓扑序重排的转发矩阵 P（行为上游节点，严格上三角）"""
    n = augmented.num_nodes
    matrix = np.zeros((n, n))
    allowed = dag.allowed
    matrix[augmented.tails[allowed], augmented.heads[allowed]] = fractions[allowed]
    order = np.asarray(dag.order, dtype=np.intp)
    return matrix[np.ix_(order, order)], order


def propagate(augmented, dags, allocation, routing):
    """
    沿各会话拓扑序前代：t_S(w)=λ_w，f_ij(w)=t_i(w)·φ_ij(w)，t_j(w)=Σ_i f_ij(w)

    拓扑序下转发矩阵严格上三角，t = b + Pᵀt 用单位下三角前代一次求得。
    """
    rates = rates_of(allocation)
    fractions = routing.fractions
    num_sessions = len(dags)
    if rates.shape != (num_sessions,):
        raise RoutingError(f"分配维度 {rates.shape} 与会话数 {num_sessions} 不一致")
    if fractions.shape != (num_sessions, augmented.num_links):
        raise RoutingError(f"路由变量维度 {fractions.shape} 与 (W, L)=({num_sessions}, {augmented.num_links}) 不一致")

    n = augmented.num_nodes
    tails = augmented.tails
    node_rates = np.zeros((num_sessions, n))
    session_flows = np.zeros((num_sessions, augmented.num_links))
    for w, dag in enumerate(dags):
        if np.any(fractions[w, ~dag.allowed] != 0):
            raise RoutingError(f"φ support outside dag: 会话 {w}")
        matrix, order = session_matrix(augmented, dag, fractions[w])
        injection = np.zeros(order.size)
        injection[order == augmented.source] = rates[w]
        throughput = solve_triangular(np.eye(order.size) - matrix.T, injection,
                                      lower=True, unit_diagonal=True, check_finite=False)
        node_rates[w, order] = throughput
        session_flows[w] = np.where(dag.allowed, node_rates[w, tails] * fractions[w], 0.0)

    link_flows = np.zeros(augmented.num_links)
    for w in range(num_sessions):
        link_flows += session_flows[w]
    return FlowState(node_rates=node_rates, session_flows=session_flows, link_flows=link_flows)


def total_cost(flows, costs):
    """整网代价 Σ D_ij(F_ij)，包括物理链路与虚拟链路"""
    return float(np.sum(costs.value(flows.link_flows)))


def total_utility(allocation, oracle, flows, costs, audit=False):
    return oracle.observe(rates_of(allocation), audit=audit) - total_cost(flows, costs)


@dataclass(frozen=True)
class ConservationReport:
    """各类守恒方程的最大绝对残差"""
    source: float
    relay: float
    host: float
    destination: float
    negativity: float
    worst_node: Tuple[int, int] = field(default=(-1, -1))

    @property
    def max_residual(self):
        return max(self.source, self.relay, self.host, self.destination, self.negativity)


def check_conservation(flows, augmented, allocation):
    """
    逐会话检查流量守恒：源节点出流等于 λ_w，中继节点出入平衡，
    部署节点出流到 D_w 等于入流，目的节点汇入等于 λ_w
    """
    rates = rates_of(allocation)
    n = augmented.num_nodes
    tails, heads = augmented.tails, augmented.heads
    residuals = {'source': 0.0, 'relay': 0.0, 'host': 0.0, 'destination': 0.0}
    worst, worst_value = (-1, -1), -1.0
    negativity = float(max(0.0, -flows.session_flows.min(initial=0.0)))

    for w in range(rates.size):
        flow = flows.session_flows[w]
        inflow = np.bincount(heads, weights=flow, minlength=n)
        outflow = np.bincount(tails, weights=flow, minlength=n)
        target = augmented.destination(w)
        hosts = set(augmented.placement.hosts(w))
        for node in range(n):
            if node == augmented.source:
                kind, value = 'source', outflow[node] - rates[w]
            elif node == target:
                kind, value = 'destination', inflow[node] - rates[w]
            elif node in hosts:
                to_target = flow[augmented.link_index(node, target)]
                kind, value = 'host', to_target - inflow[node]
            else:
                kind, value = 'relay', outflow[node] - inflow[node]
            value = abs(float(value))
            residuals[kind] = max(residuals[kind], value)
            if value > worst_value:
                worst, worst_value = (w, node), value

    return ConservationReport(negativity=negativity, worst_node=worst, **residuals)


def flows_to_frame(flows, augmented):
    """FlowState 的表格形式：会话行 `session,i,j,flow`，聚合行 session 列为 `link`"""
    records = []
    for w in range(flows.session_flows.shape[0]):
        for link in range(augmented.num_links):
            i, j = augmented.link_label(link)
            records.append({'session': str(w + 1), 'i': i, 'j': j, 'flow': flows.session_flows[w, link]})
    for link in range(augmented.num_links):
        i, j = augmented.link_label(link)
        records.append({'session': 'link', 'i': i, 'j': j, 'flow': flows.link_flows[link]})
    return pd.DataFrame.from_records(records, columns=['session', 'i', 'j', 'flow'])


def save_flow_state(flows, augmented, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flows_to_frame(flows, augmented).to_csv(path, index=False)
    return path
