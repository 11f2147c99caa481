"""
内置命名拓扑的边表

每条边为无向边，构造 Topology 时展开为两条有向链路。
节点数、边数与平均容量：
    Abilene       11 节点  14 边  C̄=15
    BalancedTree  14 节点  23 边  C̄=10
    Fog           15 节点  30 边  C̄=10
    GEANT         22 节点  33 边  C̄=10
"""

from enum import Enum


class NamedTopology(Enum):
    ABILENE = 'Abilene'
    BALANCED_TREE = 'BalancedTree'
    FOG = 'Fog'
    GEANT = 'GEANT'

    @classmethod
    def parse(cls, name):
        """按名称解析（不区分大小写）"""
        if isinstance(name, cls):
            return name
        for member in cls:
            if member.value.lower() == str(name).strip().lower():
                return member
        raise KeyError(name)


# Abilene 骨干网：
# 0 NewYork, 1 Chicago, 2 WashingtonDC, 3 Seattle, 4 Sunnyvale, 5 LosAngeles,
# 6 Denver, 7 KansasCity, 8 Houston, 9 Atlanta, 10 Indianapolis
_ABILENE = (
    (0, 1), (0, 2), (1, 10), (2, 9), (9, 10), (9, 8), (10, 7),
    (7, 8), (7, 6), (8, 5), (6, 4), (6, 3), (3, 4), (4, 5),
)


def _balanced_tree_edges():
    # 14 节点二叉树 (父节点 (i-1)//2)，加同层兄弟链路与跨子树链路
    edges = [((i - 1) // 2, i) for i in range(1, 14)]
    edges += [(1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12)]
    edges += [(4, 5), (8, 9), (10, 11), (12, 13)]
    return tuple(edges)


def _fog_edges():
    # 三层雾计算结构：核心三角 0-2，汇聚层 3-8 (双上联 + 环)，接入层 9-14
    edges = [(0, 1), (1, 2), (0, 2)]
    for k in range(3, 9):
        edges.append(((k - 3) % 3, k))
        edges.append(((k - 2) % 3, k))
    for k in range(3, 9):
        edges.append((k, 3 + (k - 2) % 6))
    for m in range(6):
        edges.append((3 + m, 9 + m))
    edges += [(9, 10), (11, 12), (13, 14)]
    return tuple(edges)


def _geant_edges():
    # 22 节点环加 11 条跨越弦
    edges = [(i, (i + 1) % 22) for i in range(22)]
    edges += [(i, (i + 7) % 22) for i in range(0, 22, 2)]
    return tuple(edges)


NAMED_TOPOLOGIES = {
    NamedTopology.ABILENE: {'num_nodes': 11, 'edges': _ABILENE, 'mean_capacity': 15.0},
    NamedTopology.BALANCED_TREE: {'num_nodes': 14, 'edges': _balanced_tree_edges(), 'mean_capacity': 10.0},
    NamedTopology.FOG: {'num_nodes': 15, 'edges': _fog_edges(), 'mean_capacity': 10.0},
    NamedTopology.GEANT: {'num_nodes': 22, 'edges': _geant_edges(), 'mean_capacity': 10.0},
}
