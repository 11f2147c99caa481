"""
异常定义
"""


class CECError(Exception):
    """协同边缘推理优化库的基础异常"""


class TopologyError(CECError):
    """拓扑构造或校验失败"""


class ConnectivityError(TopologyError):
    """重采样次数用尽仍无法得到连通图"""


class UnreachableDestinationError(TopologyError):
    """虚拟源无法在允许链路集合内到达会话目的节点"""


class CapacityExceededError(CECError):
    """M/M/1 链路流量达到或超过容量"""

    def __init__(self, message, link=None):
        super().__init__(message)
        self.link = link


class InfeasibleFlowError(CapacityExceededError):
    """容量约束下不存在可行流"""


class UtilityDomainError(CECError):
    """效用函数输入超出定义域"""


class RoutingError(CECError):
    """路由变量不合法（支撑集越界、维度不匹配等）"""


class RoutingUnderflowError(RoutingError):
    """指数更新后某行全部下溢为零"""


class AllocationError(CECError):
    """负载分配求解失败"""


class InfeasibleBoxError(AllocationError):
    """盒约束 [δ, λ-δ]^W 与总量约束不相容"""


class ConfigError(CECError):
    """实验配置解析或校验失败"""

    def __init__(self, message, field=None, line=None):
        self.field = field
        self.line = line
        prefix = []
        if line is not None:
            prefix.append(f"第{line}行")
        if field:
            prefix.append(f"字段 '{field}'")
        super().__init__(f"{' '.join(prefix)}: {message}" if prefix else message)


class TraceFormatError(CECError):
    """轨迹CSV格式错误"""
