"""
单环联合求解 (OMAD)、Lyapunov 轨迹、鞍点检查与拓扑切换实验
"""

from dataclasses import dataclass
from typing import Dict

import numpy as np
import pandas as pd

from core.allocate import (AllocatorBase, AllocSolverConfig, JointState, NestedLoopAllocator,
                           gs_oma_solve)
from core.errors import AllocationError, CapacityExceededError
from core.flow import (RoutingConfig, propagate, random_allocation, random_routing, rates_of,
                       total_utility)
from core.routing import omd_rt_solve
from utils.logger import logger

__all__ = [
    'JointState', 'SingleLoopAllocator', 'omad_solve', 'compare_loops', 'LyapunovReference',
    'build_lyapunov_reference', 'lyapunov_trace', 'SaddleReport', 'saddle_check',
    'SwitchResult', 'topology_change_experiment', 'run_with_lyapunov',
]


class SingleLoopAllocator(AllocatorBase):
    """
    单环 OMAD：扰动评估在持久化 φ 的副本上只做一步 OMD-RT (K=1)；
    持久化 φ 在未扰动的 Λ^t 上每个外层迭代前进一步
    """

    algo = 'omad'

    def __init__(self, instance, oracle, solver_config=None):
        self.routing = RoutingConfig.uniform(instance.dags, instance.num_links)
        super().__init__(instance, oracle, solver_config)

    def evaluate(self, rates):
        result = self.solve_routing(rates, initial=self.routing, max_iterations=1)
        self.probe_solves += 1
        return self.oracle.observe(rates) - result.cost

    def advance_routing(self):
        self.routing = self.solve_routing(self.allocation, initial=self.routing, max_iterations=1).routing

    def reset_routing(self):
        self.routing = RoutingConfig.uniform(self.instance.dags, self.instance.num_links)

    def current_utility(self):
        flows = propagate(self.instance.augmented, self.instance.dags, self.allocation, self.routing)
        return total_utility(self.allocation, self.oracle, flows, self.instance.costs, audit=True)

    def final_state(self):
        flows = propagate(self.instance.augmented, self.instance.dags, self.allocation, self.routing)
        return self.routing, flows

    def _log(self, message):
        logger.joint(message, iteration=self.iteration)


ALLOCATORS = {
    'gs_oma': NestedLoopAllocator,
    'omad': SingleLoopAllocator,
}


def omad_solve(instance, oracle, solver_config=None):
    """OMAD：Λ^1 = (λ/W)·1，φ^1 均匀；每个外层迭代 2W 次 K=1 路由评估后做镜像上升与盒投影"""
    allocator = SingleLoopAllocator(instance, oracle, solver_config)
    logger.joint(f"OMAD 开始: δ={allocator.delta:.4g}, η={allocator.step_size:.4g}, L_est={allocator.lipschitz:.4g}")
    return allocator.run()


def compare_loops(instance, oracle, solver_config=None):
    """同一实例上分别运行嵌套环与单环，返回两者结果与最终效用的相对差"""
    nested = gs_oma_solve(instance, oracle, solver_config)
    single = omad_solve(instance, oracle, solver_config)
    gap = abs(nested.utility - single.utility) / (1.0 + abs(nested.utility))
    logger.joint(f"嵌套环 U={nested.utility:.10g}, 单环 U={single.utility:.10g}, 相对差 {gap:.3e}")
    return {'gs_oma': nested, 'omad': single, 'relative_gap': gap}


@dataclass(frozen=True)
class LyapunovReference:
    """u_star：各网络实例上的最优值 U*；envelope：每条记录处 max_φ U(Λ^t, φ)"""
    u_star: Dict[str, float]
    envelope: np.ndarray


def _envelope_value(instance, oracle, rates, routing_config):
    result = omd_rt_solve(instance.augmented, instance.dags, rates, instance.costs, routing_config)
    return oracle.observe(rates, audit=True) - result.cost


def build_lyapunov_reference(state, oracle, u_star=None, routing_config=None):
    """
    对每条记录的 Λ^t 在当时的网络实例上完整求解 OMD-RT 得到包络值；
    U* 取给定值与包络最大值中的较大者（任一包络值都是最优值的下界）
    """
    routing_config = routing_config or AllocSolverConfig().routing
    records = state.records if isinstance(state, JointState) else state
    envelope = np.array([
        _envelope_value(r['instance'], oracle, r['rates'], routing_config) for r in records
    ])
    best = dict(u_star or {})
    for r, value in zip(records, envelope):
        label = r['instance'].label
        best[label] = max(best.get(label, -np.inf), float(value))
    return LyapunovReference(u_star=best, envelope=envelope)


def lyapunov_trace(state, reference):
    """V1 = U* - max_φ U(Λ^t,·)，V2 = max_φ U(Λ^t,·) - U(Λ^t, φ^t)，V = V1 + V2"""
    records = state.records if isinstance(state, JointState) else state
    if len(records) != reference.envelope.size:
        raise AllocationError(f"记录条数 {len(records)} 与参考包络长度 {reference.envelope.size} 不一致")
    u_star = np.array([reference.u_star[r['instance'].label] for r in records])
    utility = np.array([r['U'] for r in records])
    v1 = u_star - reference.envelope
    v2 = reference.envelope - utility
    return pd.DataFrame({
        'iter': [r['iter'] for r in records],
        'U': utility,
        'V1': v1,
        'V2': v2,
        'V': v1 + v2,
        'event': [r.get('event', '') for r in records],
    })


@dataclass(frozen=True)
class SaddleReport:
    u_star: float
    allocation_excess: float
    routing_excess: float
    tolerance: float
    samples: int
    skipped: int

    @property
    def passed(self):
        return self.allocation_excess <= self.tolerance and self.routing_excess <= self.tolerance


def saddle_check(instance, oracle, allocation, routing, rng, samples=20, routing_config=None, tolerance=None):
    """
    在 (Λ*, φ*) 处抽样检查鞍点序：
    U(Λ, φ*(Λ)) ≤ U* + tol 且 U(Λ*, φ) ≤ U* + tol，tol 缺省为 1e-3·(1+|U*|)
    """
    routing_config = routing_config or AllocSolverConfig().routing
    flows = propagate(instance.augmented, instance.dags, allocation, routing)
    u_star = total_utility(allocation, oracle, flows, instance.costs, audit=True)
    tolerance = 1e-3 * (1.0 + abs(u_star)) if tolerance is None else tolerance

    allocation_excess, routing_excess, skipped = -np.inf, -np.inf, 0
    for _ in range(samples):
        candidate = random_allocation(oracle.total_rate, instance.num_sessions, rng)
        try:
            value = _envelope_value(instance, oracle, rates_of(candidate), routing_config)
        except CapacityExceededError:
            skipped += 1
            continue
        allocation_excess = max(allocation_excess, value - u_star)

    for _ in range(samples):
        candidate = random_routing(instance.dags, instance.num_links, rng)
        try:
            cand_flows = propagate(instance.augmented, instance.dags, allocation, candidate)
            value = total_utility(allocation, oracle, cand_flows, instance.costs, audit=True)
        except CapacityExceededError:
            skipped += 1
            continue
        routing_excess = max(routing_excess, value - u_star)

    report = SaddleReport(u_star=u_star, allocation_excess=float(allocation_excess),
                          routing_excess=float(routing_excess), tolerance=tolerance,
                          samples=samples, skipped=skipped)
    logger.joint(f"鞍点检查: U*={u_star:.10g}, Λ方向超出 {report.allocation_excess:.3e}, "
                 f"φ方向超出 {report.routing_excess:.3e}, 通过={report.passed}")
    return report


@dataclass
class SwitchResult:
    frame: pd.DataFrame
    reconverged: Dict[str, bool]
    final_utility: Dict[str, float]
    states: Dict[str, JointState]


def topology_change_experiment(instance_a, instance_b, oracle, switch_iter, solver_config=None,
                               algos=('gs_oma', 'omad'), max_iterations=None, u_star=None):
    """
    在第 switch_iter 次外层迭代前把网络由 A 切换为 B（重建子图、φ 重置为均匀、保留 Λ）；
    切换前不提前停止，切换后 Λ 的最大变化小于 τ_Λ 即视为重新收敛
    """
    if instance_a.num_sessions != instance_b.num_sessions:
        raise AllocationError("切换前后会话数不一致")
    if switch_iter < 1:
        raise AllocationError(f"切换迭代必须为正: {switch_iter}")
    solver_config = solver_config or AllocSolverConfig()
    max_iterations = max_iterations or 4 * switch_iter
    frames, reconverged, final_utility, states = [], {}, {}, {}

    for algo in algos:
        if algo not in ALLOCATORS:
            raise AllocationError(f"未知联合求解算法: {algo}")
        allocator = ALLOCATORS[algo](instance_a, oracle, solver_config)
        reconverged[algo] = False
        for t in range(1, max_iterations + 1):
            if t == switch_iter:
                allocator.switch_instance(instance_b)
            change = allocator.step()
            if t >= switch_iter and change < solver_config.tolerance:
                reconverged[algo] = True
                break
        state = allocator.state
        reference = build_lyapunov_reference(state, oracle, u_star, solver_config.routing)
        frame = lyapunov_trace(state, reference)
        frame.insert(1, 'algo', algo)
        frames.append(frame[['iter', 'algo', 'U', 'V1', 'V2', 'V', 'event']])
        final_utility[algo] = allocator.utility
        states[algo] = state
        logger.joint(f"{algo} 拓扑切换实验结束: 迭代 {allocator.iteration} 次, U={allocator.utility:.10g}, "
                     f"重新收敛={reconverged[algo]}")

    frame = pd.concat(frames, ignore_index=True)
    return SwitchResult(frame=frame, reconverged=reconverged, final_utility=final_utility, states=states)


def run_with_lyapunov(instance, oracle, algo, solver_config=None, u_star=None):
    """运行嵌套环或单环求解，并返回结果与 iter,algo,U,V1,V2,V,event 轨迹"""
    if algo not in ALLOCATORS:
        raise AllocationError(f"未知联合求解算法: {algo}")
    allocator = ALLOCATORS[algo](instance, oracle, solver_config)
    result = allocator.run()
    records = allocator.closing_records()
    reference = build_lyapunov_reference(records, oracle, u_star, allocator.config.routing)
    frame = lyapunov_trace(records, reference)
    frame.insert(1, 'algo', algo)
    return result, frame[['iter', 'algo', 'U', 'V1', 'V2', 'V', 'event']]
