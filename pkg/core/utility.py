"""
黑盒效用函数

优化器只能通过 UtilityOracle 查询函数值，族参数对外不可见；
查询计数在线程锁保护下精确累加。
"""

import threading
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from core.errors import CECError, UtilityDomainError

DOMAIN_SLACK = 1e-9


class UtilityKind(Enum):
    LINEAR = 'linear'
    SQRT = 'sqrt'
    QUADRATIC = 'quad'
    LOG = 'log'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise CECError(f"未知的效用函数族: {value}") from None


@dataclass(frozen=True)
class UtilityFamily:
    kind: UtilityKind
    a: float
    b: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise CECError(f"效用参数 a 必须为正: {self.a}")
        if self.kind is not UtilityKind.LINEAR and not self.b > 0:
            raise CECError(f"效用参数 b 必须为正: {self.b}")

    def __call__(self, rate):
        if self.kind is UtilityKind.LINEAR:
            return self.a * rate
        if self.kind is UtilityKind.LOG:
            return self.a * np.log(self.b * rate + 1.0)
        if self.kind is UtilityKind.QUADRATIC:
            return -self.a * rate ** 2 + self.b * rate
        return self.a * (np.sqrt(rate + self.b) - np.sqrt(self.b))

    def monotone_limit(self):
        """保证单调递增的最大输入；二次族为 b/(2a)"""
        if self.kind is UtilityKind.QUADRATIC:
            return self.b / (2.0 * self.a)
        return np.inf


class UtilityOracle:
    """W 个会话效用函数的查询接口"""

    def __init__(self, families: Sequence[UtilityFamily], total_rate: float,
                 bound: Optional[float] = None, validate: bool = True):
        if not families:
            raise CECError("至少需要一个会话效用函数")
        if not total_rate > 0:
            raise CECError(f"总输入速率必须为正: {total_rate}")
        if validate:
            for w, family in enumerate(families):
                if total_rate > family.monotone_limit():
                    raise CECError(
                        f"会话 {w} 的二次效用在 [0, {total_rate}] 上不单调: 需要 λ ≤ b/(2a) = {family.monotone_limit()}")
        self.__families = tuple(families)
        self.total_rate = float(total_rate)
        self.bound = bound
        self._lock = threading.Lock()
        self._query_count = 0
        self._audit_count = 0

    @property
    def num_sessions(self):
        return len(self.__families)

    @property
    def query_count(self):
        return self._query_count

    @property
    def audit_count(self):
        return self._audit_count

    def reset_counters(self):
        with self._lock:
            self._query_count = 0
            self._audit_count = 0

    def _count(self, audit):
        with self._lock:
            if audit:
                self._audit_count += 1
            else:
                self._query_count += 1

    def _value(self, w, rate):
        if not 0 <= w < self.num_sessions:
            raise UtilityDomainError(f"会话编号越界: {w}")
        if not -DOMAIN_SLACK <= rate <= self.total_rate + DOMAIN_SLACK:
            raise UtilityDomainError(f"会话 {w} 的输入速率 {rate} 超出 [0, {self.total_rate}]")
        return float(self.__families[w](min(max(rate, 0.0), self.total_rate)))

    def evaluate(self, w, rate, audit=False):
        """查询单个会话效用 u_w(λ_w)，计一次查询"""
        value = self._value(w, float(rate))
        self._count(audit)
        return value

    def observe(self, rates, audit=False):
        """观测总效用 Σ_w u_w(λ_w)，作为一次联合查询计数"""
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (self.num_sessions,):
            raise UtilityDomainError(f"分配向量维度 {rates.shape} 与会话数 {self.num_sessions} 不一致")
        total = sum(self._value(w, rate) for w, rate in enumerate(rates))
        self._count(audit)
        return total


def eval_utility(oracle, w, rate):
    return oracle.evaluate(w, rate)


@dataclass(frozen=True)
class AssumptionReport:
    monotone: bool
    lipschitz_est: float
    bound_est: float
    concave: bool
    per_session_lipschitz: tuple
    bound_ok: bool = True


def check_assumptions(oracle, grid):
    """在 [0, λ] 的均匀网格上采样各会话效用，估计单调性、Lipschitz 常数与上界"""
    if grid < 3:
        raise CECError(f"网格点数至少为3: {grid}")
    rates = np.linspace(0.0, oracle.total_rate, grid)
    step = rates[1] - rates[0]
    monotone, concave = True, True
    lipschitz, bound = [], -np.inf
    for w in range(oracle.num_sessions):
        values = np.array([oracle.evaluate(w, rate, audit=True) for rate in rates])
        diffs = np.diff(values)
        monotone &= bool(np.all(diffs >= -1e-12))
        concave &= bool(np.all(np.diff(values, n=2) <= 1e-10))
        lipschitz.append(float(np.max(np.abs(diffs)) / step))
        bound = max(bound, float(values.max()))
    return AssumptionReport(
        monotone=monotone,
        lipschitz_est=max(lipschitz),
        bound_est=bound,
        concave=concave,
        per_session_lipschitz=tuple(lipschitz),
        bound_ok=oracle.bound is None or bound <= oracle.bound,
    )


def build_oracle(kind, a_values, b_values, total_rate, bound=None, validate=True):
    """按配置构造效用查询接口"""
    kind = UtilityKind.parse(kind)
    if len(a_values) != len(b_values):
        raise CECError("a_w 与 b_w 的长度不一致")
    families = [UtilityFamily(kind, float(a), float(b)) for a, b in zip(a_values, b_values)]
    return UtilityOracle(families, total_rate, bound=bound, validate=validate)
