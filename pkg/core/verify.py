"""
不变量检查：子图无环、流量守恒、流量关于 Λ 的仿射性、代价凸性、边际代价与有限差分一致、
OMD-RT 单调下降、OPT 下界以及收敛速率趋势
"""

from dataclasses import dataclass, replace
from typing import List

import numpy as np

from core.errors import CapacityExceededError
from core.experiment import build_instance, seed_streams
from core.flow import (Allocation, RoutingConfig, check_conservation, propagate, random_allocation,
                       random_routing, total_cost)
from core.opt_baseline import opt_baseline
from core.routing import broadcast_marginals, omd_rt_solve
from utils.logger import logger

CONSERVATION_TOLERANCE = 1e-9
AFFINITY_TOLERANCE = 1e-9
CONVEXITY_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-5
DESCENT_SLACK = 1e-10
OPT_SLACK = 1e-6
RATE_TREND_ALLOWANCE = 0.05
RATE_WINDOW = (10, 200)


@dataclass(frozen=True)
class CheckResult:
    name: str
    instance: str
    passed: bool
    trials: int
    worst: float
    detail: str = ''


@dataclass
class VerifyReport:
    checks: List[CheckResult]

    @property
    def passed(self):
        return all(check.passed for check in self.checks)

    @property
    def failures(self):
        return [check for check in self.checks if not check.passed]


def _scale(value):
    return 1.0 + abs(value)


def _random_state(instance, total, rng):
    allocation = random_allocation(total, instance.num_sessions, rng)
    routing = random_routing(instance.dags, instance.num_links, rng)
    return allocation, routing


def check_acyclic(instance):
    bad = [dag.session for dag in instance.dags if not dag.is_acyclic(instance.augmented)]
    return CheckResult('dag_acyclic', instance.label, not bad, len(instance.dags), float(len(bad)),
                       f"含环会话: {bad}" if bad else '')


def check_conservation_property(instance, total, rng, trials):
    worst = 0.0
    for _ in range(trials):
        allocation, routing = _random_state(instance, total, rng)
        flows = propagate(instance.augmented, instance.dags, allocation, routing)
        worst = max(worst, check_conservation(flows, instance.augmented, allocation).max_residual)
    return CheckResult('conservation', instance.label, worst <= CONSERVATION_TOLERANCE * _scale(total),
                       trials, worst)


def check_affinity(instance, total, rng, trials):
    """固定 φ 时 f(θΛ1 + (1-θ)Λ2) = θ·f(Λ1) + (1-θ)·f(Λ2)"""
    worst = 0.0
    for _ in range(trials):
        first, routing = _random_state(instance, total, rng)
        second = random_allocation(total, instance.num_sessions, rng)
        theta = float(rng.uniform())
        mixed = theta * first.rates + (1.0 - theta) * second.rates
        mixed[-1] = total - mixed[:-1].sum()
        mixed = Allocation(np.maximum(mixed, 0.0), total)
        flows = [propagate(instance.augmented, instance.dags, a, routing) for a in (first, second, mixed)]
        expected = theta * flows[0].session_flows + (1.0 - theta) * flows[1].session_flows
        worst = max(worst, float(np.max(np.abs(flows[2].session_flows - expected))))
    return CheckResult('affinity', instance.label, worst <= AFFINITY_TOLERANCE * _scale(total), trials, worst)


def check_convexity(instance, total, rng, trials):
    """D(θF1 + (1-θ)F2) ≤ θD(F1) + (1-θ)D(F2)"""
    worst, skipped = -np.inf, 0
    costs = instance.costs
    for _ in range(trials):
        try:
            first = propagate(instance.augmented, instance.dags, *_random_state(instance, total, rng)).link_flows
            second = propagate(instance.augmented, instance.dags, *_random_state(instance, total, rng)).link_flows
            theta = float(rng.uniform())
            left = float(np.sum(costs.value(theta * first + (1.0 - theta) * second)))
            right = theta * float(np.sum(costs.value(first))) + (1.0 - theta) * float(np.sum(costs.value(second)))
        except CapacityExceededError:
            skipped += 1
            continue
        worst = max(worst, (left - right) / _scale(right))
    worst = max(worst, 0.0)
    return CheckResult('convexity', instance.label, worst <= CONVEXITY_TOLERANCE, trials - skipped, worst,
                       f"容量越界跳过 {skipped} 次" if skipped else '')


def check_gradient(instance, total, rng, trials, step=1e-5):
    """广播得到的 ∂D/∂φ 沿随机可行方向与中心差分一致"""
    worst, skipped = 0.0, 0
    augmented, dags, costs = instance.augmented, instance.dags, instance.costs
    for _ in range(trials):
        allocation = random_allocation(total, instance.num_sessions, rng)
        base = random_routing(dags, instance.num_links, rng, concentration=5.0)
        target = random_routing(dags, instance.num_links, rng, concentration=5.0)
        direction = target.fractions - base.fractions
        try:
            flows = propagate(augmented, dags, allocation, base)
            marginals = broadcast_marginals(augmented, dags, flows, base, costs)
            analytic = float(np.sum(marginals.gradient() * direction))
            plus = RoutingConfig(dags, base.fractions + step * direction)
            minus = RoutingConfig(dags, np.maximum(base.fractions - step * direction, 0.0))
            numeric = (total_cost(propagate(augmented, dags, allocation, plus), costs)
                       - total_cost(propagate(augmented, dags, allocation, minus), costs)) / (2.0 * step)
        except CapacityExceededError:
            skipped += 1
            continue
        worst = max(worst, abs(analytic - numeric) / max(abs(numeric), abs(analytic), 1e-8))
    return CheckResult('gradient', instance.label, worst <= GRADIENT_TOLERANCE, trials - skipped, worst,
                       f"容量越界跳过 {skipped} 次" if skipped else '')


def check_descent_and_opt(instance, total, routing_config, opt_config):
    allocation = Allocation.uniform(total, instance.num_sessions)
    result = omd_rt_solve(instance.augmented, instance.dags, allocation, instance.costs, routing_config)
    increases = np.diff(np.asarray(result.trace))
    worst_increase = float(increases.max(initial=0.0))
    descent = CheckResult('monotone_descent', instance.label, worst_increase <= DESCENT_SLACK,
                          len(result.trace), worst_increase)

    optimum = opt_baseline(instance.augmented, instance.dags, allocation, instance.costs,
                           tol=opt_config['tolerance'], max_iterations=opt_config['max_iterations'])
    excess = optimum.cost - result.cost
    lower_bound = CheckResult('opt_lower_bound', instance.label, excess <= OPT_SLACK * _scale(result.cost), 1, float(excess),
                              f"D*={optimum.cost:.10g}, D(OMD-RT)={result.cost:.10g}")
    return [descent, lower_bound]


def rate_trend(errors, name, instance, start=1, floor=0.0, allowance=RATE_TREND_ALLOWANCE):
    """
    ε_t·t 没有上升趋势：最小二乘斜率乘以窗口长度不超过 allowance·max(ε_t·t)

    小于 floor 的误差视为0（收敛后的数值噪声）。
    """
    errors = np.asarray(errors, dtype=float)
    errors = np.where(errors > floor, errors, 0.0)
    steps = np.arange(start, start + errors.size, dtype=float)
    products = steps * errors
    if errors.size < 2 or not np.any(products > 0):
        return CheckResult(name, instance, True, int(errors.size), 0.0)
    slope = float(np.polyfit(steps, products, 1)[0])
    rise = slope * (steps[-1] - steps[0])
    limit = allowance * float(products.max())
    return CheckResult(name, instance, rise <= limit, int(errors.size), rise,
                       f"斜率 {slope:.3e}, 允许上升 {limit:.3e}")


def check_routing_rate(instance, total, routing_config, opt_config, window=RATE_WINDOW):
    """K·ε_K 在 K ∈ window 上有界且无上升趋势，ε_K 为前 K 次迭代的最好代价与 D* 之差"""
    first, last = window
    allocation = Allocation.uniform(total, instance.num_sessions)
    result = omd_rt_solve(instance.augmented, instance.dags, allocation, instance.costs,
                          replace(routing_config, max_iterations=last, tolerance=0.0))
    optimum = opt_baseline(instance.augmented, instance.dags, allocation, instance.costs,
                           tol=opt_config['tolerance'], max_iterations=opt_config['max_iterations'])
    best = np.minimum.accumulate(np.asarray(result.trace))
    if best.size <= last:
        best = np.concatenate([best, np.full(last + 1 - best.size, best[-1])])
    errors = best[first:last + 1] - optimum.cost
    return rate_trend(errors, 'routing_rate', instance.label, start=first, floor=OPT_SLACK * _scale(optimum.cost))


def verify(experiment, trials=None):
    """对配置中的每个种子构造实例并运行全部不变量检查"""
    trials = trials or int(experiment.verify['trials'])
    checks = []
    for seed in sorted(experiment.seeds):
        instance = build_instance(experiment, seed)
        rng = np.random.default_rng(seed_streams(experiment.base_seed, seed)['sampling'])
        total = experiment.total_rate
        checks.append(check_acyclic(instance))
        checks.append(check_conservation_property(instance, total, rng, trials))
        checks.append(check_affinity(instance, total, rng, trials))
        checks.append(check_convexity(instance, total, rng, trials))
        checks.append(check_gradient(instance, total, rng, trials))
        checks.extend(check_descent_and_opt(instance, total, experiment.routing_config(), experiment.opt))
        checks.append(check_routing_rate(instance, total, experiment.routing_config(), experiment.opt))

    report = VerifyReport(checks)
    for check in checks:
        message = f"{check.name} [{check.instance}]: 样本 {check.trials}, 最差 {check.worst:.3e} {check.detail}"
        if check.passed:
            logger.system(f"通过 {message}")
        else:
            logger.error_msg(f"未通过 {message}")
    return report
