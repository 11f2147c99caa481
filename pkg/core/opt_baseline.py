"""
集中式最优路由基线 OPT

在各会话子图的弧流多面体上最小化 Σ D_ij(F_ij)：条件梯度法，每步在当前链路导数下
为每个会话求最短路，成对 (pairwise) 方向上做精确线搜索，Frank-Wolfe 对偶间隙小于
tol·|D| 时停止。M/M/1 代价在 ρ·C 以上用二阶泰勒展开延拓，结束时再检查容量可行性。
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
from scipy.optimize import brentq

from core.cost import CostKind
from core.errors import InfeasibleFlowError
from core.flow import rates_of
from utils.logger import logger

EXTENSION_RATIO = 0.999
ATOM_FLOOR = 1e-15


@dataclass(frozen=True)
class OptResult:
    cost: float
    link_flows: np.ndarray
    session_flows: np.ndarray
    gap: float
    iterations: int
    converged: bool


class _ExtendedCost:
    """代价及其导数；M/M/1 在 ρC 之上二阶延拓，保证全域有限且凸"""

    def __init__(self, costs, num_links):
        self.costs = costs
        self.extended = costs.kind is CostKind.MM1
        if self.extended:
            self.knot = np.broadcast_to(EXTENSION_RATIO * np.asarray(costs.capacity, dtype=float), (num_links,))
            self.v0 = np.asarray(costs.value(self.knot))
            self.d0 = np.asarray(costs.derivative(self.knot))
            self.s0 = np.asarray(costs.second_derivative(self.knot))

    def _select(self, links):
        if links is None:
            return self.costs, self.knot, self.v0, self.d0, self.s0
        return self.costs.restrict(links), self.knot[links], self.v0[links], self.d0[links], self.s0[links]

    def value(self, flow, links=None):
        if not self.extended:
            return (self.costs if links is None else self.costs.restrict(links)).value(flow)
        model, knot, v0, d0, s0 = self._select(links)
        inside = flow < knot
        excess = flow - knot
        return np.where(inside, model.value(np.where(inside, flow, 0.0)), v0 + d0 * excess + 0.5 * s0 * excess ** 2)

    def derivative(self, flow, links=None):
        if not self.extended:
            return (self.costs if links is None else self.costs.restrict(links)).derivative(flow)
        model, knot, _, d0, s0 = self._select(links)
        inside = flow < knot
        return np.where(inside, model.derivative(np.where(inside, flow, 0.0)), d0 + s0 * (flow - knot))


def _shortest_path(augmented, dag, weights):
    """子图上按逆拓扑序动态规划求 S → D_w 最短路，返回链路下标元组与路长"""
    heads = augmented.heads
    distance = np.full(augmented.num_nodes, np.inf)
    distance[augmented.destination(dag.session)] = 0.0
    successor = {}
    for node in reversed(dag.order):
        links = dag.out_links.get(node)
        if not links:
            continue
        links = np.asarray(links)
        candidates = weights[links] + distance[heads[links]]
        best = int(np.argmin(candidates))
        distance[node] = candidates[best]
        successor[node] = int(links[best])

    path, node = [], augmented.source
    target = augmented.destination(dag.session)
    while node != target:
        link = successor[node]
        path.append(link)
        node = int(heads[link])
    return tuple(path), float(distance[augmented.source])


def _line_search(cost, flows, links, delta, upper):
    """在 [0, upper] 上最小化 Σ D(F + γΔ)，导数单调递增，用 brentq 求驻点"""
    def slope(gamma):
        return float(np.dot(cost.derivative(flows[links] + gamma * delta, links), delta))

    if slope(0.0) >= 0.0:
        return 0.0
    if slope(upper) <= 0.0:
        return upper
    return brentq(slope, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


@logger.monitor('opt_baseline')
def opt_baseline(augmented, dags, allocation, costs, tol=1e-8, max_iterations=20000):
    rates = rates_of(allocation)
    cost = _ExtendedCost(costs, augmented.num_links)
    num_links = augmented.num_links

    link_flows = np.zeros(num_links)
    session_flows = np.zeros((len(dags), num_links))
    atoms: Dict[int, Dict[Tuple[int, ...], float]] = {}
    gradient = cost.derivative(link_flows)
    for w, dag in enumerate(dags):
        if rates[w] <= 0:
            continue
        path, _ = _shortest_path(augmented, dag, gradient)
        atoms[w] = {path: 1.0}
        session_flows[w, list(path)] += rates[w]
    link_flows = session_flows.sum(axis=0)

    gap, converged, iterations = np.inf, False, 0
    for iterations in range(1, max_iterations + 1):
        gradient = cost.derivative(link_flows)
        total = float(np.sum(cost.value(link_flows)))
        gap = 0.0
        for w in atoms:
            _, length = _shortest_path(augmented, dags[w], gradient)
            gap += float(np.dot(gradient, session_flows[w])) - rates[w] * length
        if gap <= tol * max(abs(total), 1.0):
            converged = True
            break

        for w, active in atoms.items():
            gradient = cost.derivative(link_flows)
            toward, toward_length = _shortest_path(augmented, dags[w], gradient)
            away = max(active, key=lambda p: (float(gradient[list(p)].sum()), p))
            if away == toward or float(gradient[list(away)].sum()) <= toward_length:
                continue

            delta = np.zeros(num_links)
            delta[list(toward)] += rates[w]
            delta[list(away)] -= rates[w]
            links = np.flatnonzero(delta)
            step = _line_search(cost, link_flows, links, delta[links], active[away])
            if step <= 0.0:
                continue

            active[toward] = active.get(toward, 0.0) + step
            active[away] -= step
            if active[away] <= ATOM_FLOOR:
                del active[away]
            session_flows[w] += step * delta
            link_flows = link_flows + step * delta

        logger.debug(f"[ROUTING] [OPT] [it={iterations}] D={total:.12g}, gap={gap:.3e}")

    session_flows = np.maximum(session_flows, 0.0)
    link_flows = session_flows.sum(axis=0)
    if costs.kind is CostKind.MM1 and np.any(link_flows >= costs.capacity):
        link = int(np.flatnonzero(link_flows >= costs.capacity)[0])
        raise InfeasibleFlowError(f"容量约束下不存在可行流: 链路 {link} 最优流量达到容量", link=link)
    value = float(np.sum(costs.value(link_flows)))
    logger.routing(f"OPT 结束: 迭代 {iterations} 次, D*={value:.10g}, 间隙={gap:.3e}, 收敛={converged}")
    return OptResult(cost=value, link_flows=link_flows, session_flows=session_flows,
                     gap=float(gap), iterations=iterations, converged=converged)
