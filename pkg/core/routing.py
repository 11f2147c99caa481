"""
路由求解：边际代价广播、指数梯度下降 (OMD-RT)、最优性残差与欧氏投影梯度基线
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import solve_triangular

from config import config
from core.errors import CapacityExceededError, RoutingError, RoutingUnderflowError
from core.flow import RoutingConfig, propagate, session_matrix, total_cost
from core.projection import project_simplex
from utils.logger import logger


@dataclass(frozen=True)
class MarginalCosts:
    """
    link_marginals (W, L)：δφ_ij(w) = D'_ij(F_ij) + ∂D/∂r_j(w)，子图外为0
    node_marginals (W, n)：∂D/∂r_i(w)
    node_rates (W, n)：计算时的 t_i(w)
    rounds：各会话广播所需轮数（子图最长路径长度）
    """
    link_marginals: np.ndarray
    node_marginals: np.ndarray
    node_rates: np.ndarray
    tails: np.ndarray
    rounds: Tuple[int, ...]

    def gradient(self):
        """∂D/∂φ_ij(w) = t_i(w)·δφ_ij(w)"""
        return self.node_rates[:, self.tails] * self.link_marginals


def broadcast_marginals(augmented, dags, flows, routing, costs):
    """
    自 D_w 反向递推：∂D/∂r_{D_w}=0，∂D/∂r_i = Σ_j φ_ij (D'_ij + ∂D/∂r_j)

    拓扑序下转发矩阵严格上三角，(I - P) m = c 用单位上三角回代一次求得。
    """
    derivative = np.asarray(costs.derivative(flows.link_flows), dtype=float)
    tails, heads = augmented.tails, augmented.heads
    n = augmented.num_nodes
    fractions = routing.fractions
    link_marginals = np.zeros_like(fractions)
    node_marginals = np.zeros((len(dags), n))
    for w, dag in enumerate(dags):
        local = np.bincount(tails, weights=np.where(dag.allowed, fractions[w] * derivative, 0.0), minlength=n)
        matrix, order = session_matrix(augmented, dag, fractions[w])
        marginal = solve_triangular(np.eye(order.size) - matrix, local[order],
                                    lower=False, unit_diagonal=True, check_finite=False)
        node_marginals[w, order] = marginal
        link_marginals[w] = np.where(dag.allowed, derivative + node_marginals[w, heads], 0.0)
    return MarginalCosts(
        link_marginals=link_marginals,
        node_marginals=node_marginals,
        node_rates=flows.node_rates.copy(),
        tails=tails,
        rounds=tuple(dag.longest_path for dag in dags),
    )


def _active_links(dag, node_rates, tails):
    return np.flatnonzero(dag.allowed & (node_rates[tails] > 0))


def omd_rt_step(routing, marginals, step_size):
    """
    指数梯度步：φ_ij ← φ_ij·exp(-η δφ_ij) / Σ_j φ_ij·exp(-η δφ_ij)

    仅更新 t_i(w) > 0 的行；指数先减去行内最大值防止溢出。
    """
    if step_size < 0:
        raise RoutingError(f"步长不能为负: {step_size}")
    tails = marginals.tails
    n = marginals.node_rates.shape[1]
    fractions = routing.fractions.copy()
    for w, dag in enumerate(routing.dags):
        links = _active_links(dag, marginals.node_rates[w], tails)
        if links.size == 0:
            continue
        rows = tails[links]
        exponent = -step_size * marginals.link_marginals[w, links]
        shift = np.full(n, -np.inf)
        np.maximum.at(shift, rows, exponent)
        weights = fractions[w, links] * np.exp(exponent - shift[rows])
        sums = np.bincount(rows, weights=weights, minlength=n)
        touched = np.unique(rows)
        if np.any(~(sums[touched] > 0)) or not np.all(np.isfinite(sums[touched])):
            raise RoutingUnderflowError(f"underflow; reduce η_k: 会话 {w} 存在全零行 (η={step_size})")
        fractions[w, links] = weights / sums[rows]
    return RoutingConfig(routing.dags, fractions)


def pgd_step(routing, marginals, step_size):
    """欧氏投影梯度步：φ_i ← Π_simplex(φ_i - η·t_i·δφ_i)"""
    if step_size < 0:
        raise RoutingError(f"步长不能为负: {step_size}")
    fractions = routing.fractions.copy()
    gradient = marginals.gradient()
    for w, dag in enumerate(routing.dags):
        for node, links in dag.out_links.items():
            if marginals.node_rates[w, node] <= 0:
                continue
            links = list(links)
            fractions[w, links] = project_simplex(fractions[w, links] - step_size * gradient[w, links])
    return RoutingConfig(routing.dags, fractions)


@dataclass(frozen=True)
class RoutingResidual:
    """
    spreads (W, n)：被支撑链路上 t_i·δφ_ij 的极差（不适用处为0）
    multipliers (W, n)：α_i(w) = -mean(t_i·δφ_ij)
    kkt_violation：未被支撑链路违反 t_i·δφ_ij ≥ -α_i 的最大量
    """
    spreads: np.ndarray
    multipliers: np.ndarray
    max_spread: float
    kkt_violation: float
    mean_marginal: float

    def stationary(self, tolerance):
        scale = tolerance * (1.0 + self.mean_marginal)
        return self.max_spread <= scale and self.kkt_violation <= scale


def theorem3_residual(flows, marginals, routing, threshold=None):
    threshold = config.SUPPORT_THRESHOLD if threshold is None else threshold
    tails = marginals.tails
    num_sessions, n = flows.node_rates.shape
    gradient = marginals.gradient()
    spreads = np.zeros((num_sessions, n))
    multipliers = np.zeros((num_sessions, n))
    violation, supported_values = 0.0, []
    for w, dag in enumerate(routing.dags):
        active = dag.allowed & (flows.node_rates[w, tails] > 0)
        supported = active & (routing.fractions[w] > threshold)
        idx = np.flatnonzero(supported)
        if idx.size == 0:
            continue
        rows, values = tails[idx], gradient[w, idx]
        high = np.full(n, -np.inf)
        low = np.full(n, np.inf)
        np.maximum.at(high, rows, values)
        np.minimum.at(low, rows, values)
        counts = np.bincount(rows, minlength=n)
        sums = np.bincount(rows, weights=values, minlength=n)
        has = counts > 0
        spreads[w, has] = high[has] - low[has]
        multipliers[w, has] = -sums[has] / counts[has]
        supported_values.append(values)

        idle = np.flatnonzero(active & ~supported)
        if idle.size:
            gap = -multipliers[w, tails[idle]] - gradient[w, idle]
            violation = max(violation, float(np.max(gap, initial=0.0)))

    values = np.concatenate(supported_values) if supported_values else np.zeros(1)
    return RoutingResidual(
        spreads=spreads,
        multipliers=multipliers,
        max_spread=float(spreads.max(initial=0.0)),
        kkt_violation=violation,
        mean_marginal=float(np.mean(np.abs(values))),
    )


@dataclass
class RoutingSolverConfig:
    """
    路由求解配置：步长 η、最大迭代次数 K、停止阈值 τ_φ、光滑常数 L_D

    residual_tolerance：φ 变化小于 τ_φ 时还要求最优性残差足够小才算收敛
    max_halvings：单次迭代内的步长减半次数上限
    """
    step_size: float = 1.0
    max_iterations: int = 1000
    tolerance: float = 1e-8
    residual_tolerance: float = field(default_factory=lambda: config.RESIDUAL_TOLERANCE)
    step_mode: str = 'fixed'
    smoothness: Optional[float] = None
    convexity: float = 1.0
    halving: bool = True
    max_halvings: int = field(default_factory=lambda: config.MAX_STEP_HALVINGS)

    def __post_init__(self):
        if self.step_mode not in ('fixed', 'smoothness'):
            raise RoutingError(f"未知步长模式: {self.step_mode}")
        if self.step_mode == 'smoothness' and not (self.smoothness and self.smoothness > 0):
            raise RoutingError("smoothness 步长模式需要正的 L_D")
        if self.step_size < 0:
            raise RoutingError(f"步长不能为负: {self.step_size}")
        if self.max_iterations < 1:
            raise RoutingError(f"最大迭代次数至少为1: {self.max_iterations}")

    def initial_step(self):
        if self.step_mode == 'smoothness':
            return self.convexity / self.smoothness
        return self.step_size


@dataclass
class RoutingResult:
    routing: RoutingConfig
    flows: object
    cost: float
    trace: List[float]
    spreads: List[float]
    changes: List[float]
    iterations: int
    converged: bool
    step_size: float
    halvings: int = 0
    algo: str = 'omd_rt'

    def to_frame(self):
        return pd.DataFrame({
            'iter': np.arange(len(self.trace)),
            'D': self.trace,
            'residual_spread': self.spreads,
            'phi_change': self.changes,
        })


def _evaluate(augmented, dags, allocation, routing, costs):
    flows = propagate(augmented, dags, allocation, routing)
    return flows, total_cost(flows, costs)


def _descend(update, algo, augmented, dags, allocation, costs, solver_config, initial):
    solver_config = solver_config or RoutingSolverConfig()
    routing = initial.copy() if initial is not None else RoutingConfig.uniform(dags, augmented.num_links)
    flows, cost = _evaluate(augmented, dags, allocation, routing, costs)
    step = solver_config.initial_step()

    marginals = broadcast_marginals(augmented, dags, flows, routing, costs)
    residual = theorem3_residual(flows, marginals, routing)
    trace = [cost]
    spreads = [residual.max_spread]
    changes = [0.0]
    converged, halvings, iterations = False, 0, 0

    for k in range(1, solver_config.max_iterations + 1):
        accepted, attempts = False, 0
        while True:
            candidate = update(routing, marginals, step)
            try:
                cand_flows, cand_cost = _evaluate(augmented, dags, allocation, candidate, costs)
            except CapacityExceededError:
                cand_flows, cand_cost = None, np.inf
            if cand_cost <= cost or not solver_config.halving:
                accepted = cand_flows is not None
                break
            attempts += 1
            if attempts > solver_config.max_halvings or step == 0:
                break
            halvings += 1
            step *= 0.5
            logger.routing(f"代价上升, 步长减半为 {step:.3e}", iteration=k)

        if not accepted:
            logger.routing(f"{algo} 在第{k}次迭代无法继续下降, 停止")
            converged = changes[-1] < solver_config.tolerance and residual.stationary(solver_config.residual_tolerance)
            break

        change = float(np.max(np.abs(candidate.fractions - routing.fractions), initial=0.0))
        routing, flows, cost = candidate, cand_flows, cand_cost
        marginals = broadcast_marginals(augmented, dags, flows, routing, costs)
        residual = theorem3_residual(flows, marginals, routing)
        iterations = k
        trace.append(cost)
        spreads.append(residual.max_spread)
        changes.append(change)
        logger.routing(f"D={cost:.10g}, Δφ={change:.3e}", iteration=k)
        if change < solver_config.tolerance:
            if residual.stationary(solver_config.residual_tolerance):
                converged = True
                break
            # φ 几乎不动但残差未消失：被压到顶点附近的链路仍在乘性恢复
            if change == 0.0:
                logger.warning_msg(
                    f"{algo} 第{k}次迭代 φ 停滞: 极差 {residual.max_spread:.3e}, "
                    f"KKT违反 {residual.kkt_violation:.3e}, 停止且不视为收敛")
                break

    logger.routing(f"{algo} 结束: 迭代 {iterations} 次, D={cost:.10g}, 收敛={converged}")
    return RoutingResult(routing=routing, flows=flows, cost=cost, trace=trace, spreads=spreads,
                         changes=changes, iterations=iterations, converged=converged,
                         step_size=step, halvings=halvings, algo=algo)


def omd_rt_solve(augmented, dags, allocation, costs, solver_config=None, initial=None):
    """OMD-RT：传播 → 边际代价广播 → 指数梯度步，直到 φ 的最大变化小于 τ_φ 或达到 K 次"""
    return _descend(omd_rt_step, 'omd_rt', augmented, dags, allocation, costs, solver_config, initial)


def pgd_routing_baseline(augmented, dags, allocation, costs, solver_config=None, initial=None):
    """欧氏投影梯度路由基线，停止规则与 OMD-RT 相同"""
    return _descend(pgd_step, 'pgd', augmented, dags, allocation, costs, solver_config, initial)


def save_routing_trace(result, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.to_frame().to_csv(path, index=False)
    return path
