"""
测试公共夹具：手工构造的小型网络实例
"""

import os

os.environ.setdefault('LOG_TO_FILE', 'False')
os.environ.setdefault('LOG_LEVEL', 'WARNING')

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from core.instance import build_network_instance  # noqa: E402
from core.topology import ModelPlacement, Topology  # noqa: E402
from core.utility import build_oracle  # noqa: E402


def make_instance(num_nodes, links, capacities, versions, num_versions, entry_nodes,
                  compute=10.0, source=10.0, cost_kind='exp', label=None):
    topology = Topology(num_nodes=num_nodes, links=tuple(links), capacities=tuple(capacities),
                        name=label or 'fixture', mean_capacity=10.0)
    placement = ModelPlacement(tuple(versions), num_versions)
    return build_network_instance(topology, placement, cost_kind=cost_kind, entry_nodes=entry_nodes,
                                  compute_capacity=compute, source_capacity=source, label=label)


@pytest.fixture
def diamond():
    """S→{0,1}→D1：两节点都部署版本0，全部容量为10"""
    return make_instance(2, [], [], (0, 0), 1, (0, 1), label='diamond')


@pytest.fixture
def asymmetric_diamond():
    """经节点0的路径容量20，经节点1的路径容量10"""
    return make_instance(2, [], [], (0, 0), 1, (0, 1),
                         compute={0: 20.0, 1: 10.0}, source={0: 20.0, 1: 10.0}, label='asym-diamond')


@pytest.fixture
def chain():
    """S→0→D1"""
    return make_instance(1, [], [], (0,), 1, (0,), label='chain')


@pytest.fixture
def chain3():
    """会话0的唯一路径 S→0→1→D1 共三条链路；节点0部署版本1"""
    return make_instance(2, [(0, 1)], [10.0], (1, 0), 2, (0,), label='chain3')


@pytest.fixture
def triangle():
    """三节点全双向连接，部署 (1, 2, 0)，W=3"""
    links = [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]
    return make_instance(3, links, [10.0] * 6, (1, 2, 0), 3, (0,), label='triangle')


@pytest.fixture
def symmetric_pair():
    """两个会话各由一个节点承载：S→0→D1，S→1→D2，全部容量为10"""
    return make_instance(2, [], [], (0, 1), 2, (0, 1), label='symmetric-pair')


@pytest.fixture
def small_network():
    """六节点环加三条弦，相邻节点版本都不同，W=3"""
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 2), (3, 5), (1, 5)]
    links, capacities = [], []
    for k, (i, j) in enumerate(edges):
        links += [(i, j), (j, i)]
        capacities += [6.0 + 2.0 * k, 14.0 - k]
    return make_instance(6, links, capacities, (0, 1, 2, 0, 1, 2), 3, None,
                         compute=[12.0, 8.0, 10.0, 9.0, 11.0, 7.0], source=20.0, label='small-network')


@pytest.fixture
def narrow_pair():
    """与 symmetric_pair 同构，但计算容量减半"""
    return make_instance(2, [], [], (0, 1), 2, (0, 1), compute=5.0, label='narrow-pair')


@pytest.fixture
def log_oracle_pair():
    return build_oracle('log', [100.0, 100.0], [0.05, 0.05], 10.0)


@pytest.fixture
def log_oracle_three():
    return build_oracle('log', [80.0, 100.0, 120.0], [0.05, 0.05, 0.05], 30.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)