"""
负载分配求解 (GS-OMA)：两点零阶梯度估计、镜像上升、盒约束投影与最优性残差
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from core.errors import AllocationError, CECError, InfeasibleBoxError
from core.flow import Allocation, FlowState, RoutingConfig, rates_of
from core.projection import project_box_simplex
from core.routing import RoutingSolverConfig, omd_rt_solve
from core.utility import check_assumptions
from utils.logger import logger


@dataclass
class AllocSolverConfig:
    """扰动 δ（缺省 0.01λ）、步长 η（缺省 0.5/(L_est+1)）、最大外层迭代 T、停止阈值 τ_Λ 与内层路由配置"""
    disturbance: Optional[float] = None
    step_size: Optional[float] = None
    max_iterations: int = 200
    tolerance: float = 1e-6
    routing: RoutingSolverConfig = field(default_factory=lambda: RoutingSolverConfig(max_iterations=500))
    ascent_check: bool = True
    max_halvings: int = 20
    assumption_grid: int = 601

    def resolve(self, total_rate, num_sessions, lipschitz):
        delta = self.disturbance if self.disturbance is not None else 0.01 * total_rate
        if not 0 < delta < total_rate / (2 * num_sessions):
            raise AllocationError(f"扰动 δ={delta} 需满足 0 < δ < λ/(2W) = {total_rate / (2 * num_sessions)}")
        step = self.step_size if self.step_size is not None else 0.5 / (lipschitz + 1.0)
        if not step > 0:
            raise AllocationError(f"步长必须为正: {step}")
        if self.max_iterations < 1:
            raise AllocationError(f"最大迭代次数至少为1: {self.max_iterations}")
        return delta, step


@dataclass(frozen=True)
class GradientEstimate:
    """values：各会话偏导估计 g_w；observations (W, 2)：U(Λ+δe_w) 与 U(Λ-δe_w)"""
    values: np.ndarray
    observations: np.ndarray
    disturbance: float


@dataclass(frozen=True)
class AllocationResidual:
    spread: float
    multiplier: float


def two_point_gradient(rates, evaluator, delta):
    """g_w = (U(Λ+δe_w) - U(Λ-δe_w)) / (2δ)，按 w 顺序共调用评估器 2W 次"""
    rates = rates_of(rates)
    if np.any(rates - delta < -1e-12):
        raise AllocationError(f"扰动 δ={delta} 使分配 {rates} 出现负值")
    observations = np.zeros((rates.size, 2))
    for w in range(rates.size):
        for column, sign, name in ((0, 1.0, '+δ'), (1, -1.0, '-δ')):
            probe = rates.copy()
            probe[w] += sign * delta
            try:
                observations[w, column] = evaluator(probe)
            except CECError as e:
                raise AllocationError(f"会话 {w} 的 {name} 扰动评估失败: {e}") from e
    values = (observations[:, 0] - observations[:, 1]) / (2.0 * delta)
    if not np.all(np.isfinite(values)):
        raise AllocationError(f"梯度估计出现非有限值: {values}")
    return GradientEstimate(values=values, observations=observations, disturbance=delta)


def mirror_ascent_step(rates, gradient, step_size, total):
    """λ_w ← λ·λ_w·exp(η g_w) / Σ_v λ_v·exp(η g_v)，指数先减去最大值"""
    rates = rates_of(rates)
    values = np.asarray(getattr(gradient, 'values', gradient), dtype=float)
    if np.any(rates <= 0):
        raise AllocationError(f"镜像上升要求分配严格为正: {rates}")
    exponent = step_size * values
    weights = rates * np.exp(exponent - exponent.max())
    updated = total * weights / weights.sum()
    updated[-1] = total - updated[:-1].sum()
    return Allocation(np.maximum(updated, 0.0), total)


def project_box(rates, delta, total):
    """投影到 [δ, λ-δ]^W ∩ {Σλ_w = λ}：截断后把余量平均分摊到未截断分量上"""
    rates = rates_of(rates)
    if total < rates.size * delta or delta > total - delta:
        raise InfeasibleBoxError(f"infeasible box: λ={total} < W·δ={rates.size * delta}")
    try:
        projected = project_box_simplex(rates, delta, total - delta, total)
    except ValueError as e:
        raise InfeasibleBoxError(str(e)) from e
    return Allocation(projected, total)


def theorem1_residual(gradient):
    values = np.asarray(getattr(gradient, 'values', gradient), dtype=float)
    return AllocationResidual(spread=float(values.max() - values.min()), multiplier=float(values.mean()))


@dataclass
class JointState:
    """外层迭代的当前 Λ、持久化的 φ 与逐次记录"""
    allocation: Allocation
    routing: RoutingConfig
    iteration: int
    records: list
    utility: float


@dataclass
class AllocationResult:
    allocation: Allocation
    routing: RoutingConfig
    flows: FlowState
    trace: List[float]
    records: pd.DataFrame
    iterations: int
    converged: bool
    utility: float
    algo: str
    probe_solves: int = 0

    def to_frame(self):
        return self.records


class AllocatorBase:
    """外层镜像上升循环的公共部分；子类提供带扰动的效用评估与状态推进"""

    algo = 'base'

    def __init__(self, instance, oracle, solver_config=None):
        if oracle.num_sessions != instance.num_sessions:
            raise AllocationError(f"效用函数个数 {oracle.num_sessions} 与会话数 {instance.num_sessions} 不一致")
        self.instance = instance
        self.oracle = oracle
        self.config = solver_config or AllocSolverConfig()
        self.total = oracle.total_rate
        self.lipschitz = check_assumptions(oracle, self.config.assumption_grid).lipschitz_est
        self.delta, self.step_size = self.config.resolve(self.total, instance.num_sessions, self.lipschitz)
        self.nominal_step = self.step_size
        self.allocation = Allocation.uniform(self.total, instance.num_sessions)
        self.iteration = 0
        self.probe_solves = 0
        self.audit_solves = 0
        self.records = []
        self.last_change = np.inf
        self.pending_event = ''
        self.utility = self.current_utility()

    # 子类实现
    def evaluate(self, rates):
        raise NotImplementedError

    def current_utility(self):
        raise NotImplementedError

    def advance_routing(self):
        pass

    def reset_routing(self):
        pass

    def solve_routing(self, rates, initial=None, **overrides):
        routing_config = replace(self.config.routing, **overrides) if overrides else self.config.routing
        return omd_rt_solve(self.instance.augmented, self.instance.dags, rates_of(rates),
                            self.instance.costs, routing_config, initial=initial)

    def estimate_gradient(self, delta=None):
        return two_point_gradient(self.allocation.rates, self.evaluate, delta or self.delta)

    def candidate(self, gradient, step_size):
        return project_box(mirror_ascent_step(self.allocation.rates, gradient, step_size, self.total),
                           self.delta, self.total)

    def accept(self, gradient):
        return self.candidate(gradient, self.step_size)

    def step(self):
        """一次外层迭代，返回 Λ 的最大变化量"""
        self.iteration += 1
        gradient = self.estimate_gradient()
        self.records.append({
            'iter': self.iteration,
            'U': self.utility,
            'grad_spread': theorem1_residual(gradient).spread,
            'rates': self.allocation.rates.copy(),
            'event': self.pending_event,
            'instance': self.instance,
        })
        self.pending_event = ''
        updated = self.accept(gradient)
        self.advance_routing()
        change = float(np.max(np.abs(updated.rates - self.allocation.rates)))
        self.allocation = updated
        self.utility = self.current_utility()
        self.last_change = change
        self._log(f"U={self.utility:.10g}, ΔΛ={change:.3e}, g={np.round(gradient.values, 6).tolist()}")
        return change

    def switch_instance(self, instance):
        """切换网络拓扑：保留 Λ，路由重置为均匀"""
        if instance.num_sessions != self.instance.num_sessions:
            raise AllocationError("切换前后会话数不一致")
        self.instance = instance
        self.reset_routing()
        self.utility = self.current_utility()
        self.pending_event = 'topology_switch'
        self._log(f"拓扑切换为 {instance.label}, 保留分配 {np.round(self.allocation.rates, 6).tolist()}")

    def run(self, max_iterations=None):
        max_iterations = max_iterations or self.config.max_iterations
        converged = False
        for _ in range(max_iterations):
            if self.step() < self.config.tolerance:
                converged = True
                break
        return self.result(converged)

    def closing_records(self):
        """已记录的迭代加上当前状态一行"""
        return list(self.records) + [{
            'iter': self.iteration + 1, 'U': self.utility, 'grad_spread': np.nan,
            'rates': self.allocation.rates.copy(), 'event': self.pending_event, 'instance': self.instance,
        }]

    def trace_frame(self):
        records = self.closing_records()
        frame = pd.DataFrame({
            'iter': [r['iter'] for r in records],
            'U': [r['U'] for r in records],
            'grad_spread': [r['grad_spread'] for r in records],
        })
        for w in range(self.instance.num_sessions):
            frame[f"lambda_{w + 1}"] = [r['rates'][w] for r in records]
        return frame

    def final_state(self):
        """返回最终 (φ, FlowState)"""
        raise NotImplementedError

    @property
    def state(self):
        routing, _ = self.final_state()
        return JointState(allocation=self.allocation, routing=routing, iteration=self.iteration,
                          records=self.closing_records(), utility=self.utility)

    def result(self, converged):
        frame = self.trace_frame()
        routing, flows = self.final_state()
        logger.allocation(
            f"{self.algo} 结束: 迭代 {self.iteration} 次, U={self.utility:.10g}, 收敛={converged}, "
            f"Λ={np.round(self.allocation.rates, 6).tolist()}, 探测求解 {self.probe_solves} 次")
        return AllocationResult(
            allocation=self.allocation,
            routing=routing,
            flows=flows,
            trace=frame['U'].tolist(),
            records=frame,
            iterations=self.iteration,
            converged=converged,
            utility=self.utility,
            algo=self.algo,
            probe_solves=self.probe_solves,
        )

    def _log(self, message):
        logger.allocation(message, iteration=self.iteration)


class NestedLoopAllocator(AllocatorBase):
    """
    嵌套环 GS-OMA：每次扰动评估都从均匀 φ 出发完整求解 OMD-RT，
    每个外层迭代恰好 2W 次探测求解；轨迹值通过审计通道测量
    """

    algo = 'gs_oma'

    def __init__(self, instance, oracle, solver_config=None):
        self.routing_result = None
        self._measured = None
        super().__init__(instance, oracle, solver_config)

    def evaluate(self, rates):
        result = self.solve_routing(rates)
        self.probe_solves += 1
        return self.oracle.observe(rates) - result.cost

    def measure(self, rates):
        rates = rates_of(rates)
        if self._measured is not None and np.array_equal(self._measured[0], rates):
            return self._measured[1], self._measured[2]
        result = self.solve_routing(rates)
        self.audit_solves += 1
        utility = self.oracle.observe(rates, audit=True) - result.cost
        self._measured = (rates.copy(), utility, result)
        return utility, result

    def current_utility(self):
        utility, self.routing_result = self.measure(self.allocation)
        return utility

    def reset_routing(self):
        self._measured = None

    def accept(self, gradient):
        """
        步长减半直到 U(Λ^{t+1}) ≥ U(Λ^t) - 2·L_est·δ；
        无需减半即被接受时步长加倍，但不超过初始步长
        """
        slack = 2.0 * self.lipschitz * self.delta
        step_size = self.step_size
        halved = False
        for _ in range(self.config.max_halvings + 1):
            updated = self.candidate(gradient, step_size)
            if not self.config.ascent_check:
                break
            utility, _ = self.measure(updated)
            if utility >= self.utility - slack:
                break
            step_size *= 0.5
            halved = True
            self._log(f"上升条件不满足 (U'={utility:.10g} < U={self.utility:.10g} - {slack:.3e}), 步长减半为 {step_size:.3e}")
        self.step_size = step_size if halved else min(2.0 * step_size, self.nominal_step)
        return updated

    def final_state(self):
        return self.routing_result.routing, self.routing_result.flows


def gs_oma_solve(instance, oracle, solver_config=None):
    """GS-OMA：Λ^1 = (λ/W)·1，两点梯度 → 镜像上升 → 盒投影，直到 Λ 的最大变化小于 τ_Λ 或达到 T 次"""
    allocator = NestedLoopAllocator(instance, oracle, solver_config)
    logger.allocation(f"GS-OMA 开始: δ={allocator.delta:.4g}, η={allocator.step_size:.4g}, L_est={allocator.lipschitz:.4g}")
    return allocator.run()


def save_allocation_trace(result, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    result.records.to_csv(path, index=False)
    return path
