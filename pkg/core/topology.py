"""
拓扑构造：物理拓扑生成、容量采样、增广图与会话有向无环路由子图
"""

from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import networkx as nx
import numpy as np

from config import config
from core.errors import (ConnectivityError, TopologyError,
                         UnreachableDestinationError)
from core.named_topologies import NAMED_TOPOLOGIES, NamedTopology
from utils.logger import logger

SOURCE_LABEL = 'S'


def destination_label(w):
    """会话 w (从0开始) 的虚拟目的节点名称"""
    return f"D{w + 1}"


@dataclass(frozen=True)
class Topology:
    """物理拓扑：节点 0..N-1 与带容量的有向链路"""
    num_nodes: int
    links: Tuple[Tuple[int, int], ...]
    capacities: Tuple[float, ...]
    name: str = 'custom'
    seed: Optional[int] = None
    attempts: int = 1
    mean_capacity: Optional[float] = None

    def __post_init__(self):
        if self.num_nodes < 1:
            raise TopologyError(f"节点数必须为正: {self.num_nodes}")
        if len(self.links) != len(self.capacities):
            raise TopologyError("链路数与容量数不一致")
        seen = set()
        for (i, j), capacity in zip(self.links, self.capacities):
            if i == j:
                raise TopologyError(f"存在自环: ({i}, {j})")
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise TopologyError(f"链路端点越界: ({i}, {j})")
            if (i, j) in seen:
                raise TopologyError(f"重复链路: ({i}, {j})")
            if not capacity > 0:
                raise TopologyError(f"链路 ({i}, {j}) 容量必须为正: {capacity}")
            seen.add((i, j))

    @property
    def num_links(self):
        return len(self.links)

    @property
    def num_edges(self):
        """无向边数（互为反向的一对链路计一条）"""
        return len({frozenset(link) for link in self.links})

    def capacity(self, i, j):
        return self.capacities[self.links.index((i, j))]

    def to_digraph(self):
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.num_nodes))
        for (i, j), capacity in zip(self.links, self.capacities):
            graph.add_edge(i, j, capacity=capacity)
        return graph

    def is_strongly_connected(self):
        return nx.is_strongly_connected(self.to_digraph())


def _links_from_edges(edges):
    links = []
    for i, j in sorted((min(e), max(e)) for e in edges):
        links.append((i, j))
        links.append((j, i))
    return tuple(links)


def generate_connected_er(n, p, seed, max_attempts=None, mean_capacity=None):
    """
    生成强连通的 Erdős–Rényi 拓扑；不连通时重采样，记录尝试次数

    每条无向边以概率 p 出现，并展开为两条有向链路，容量先置为平均容量，
    需要随机容量时再调用 sample_capacities。
    """
    if n < 2:
        raise TopologyError(f"ER 图节点数至少为2: {n}")
    if not 0 < p <= 1:
        raise TopologyError(f"ER 图连边概率必须在 (0, 1] 内: {p}")
    max_attempts = max_attempts or config.CONNECTIVITY_MAX_ATTEMPTS
    mean_capacity = mean_capacity or config.DEFAULT_MEAN_CAPACITY

    rng = np.random.default_rng(seed)
    for attempt in range(1, max_attempts + 1):
        graph = nx.gnp_random_graph(n, p, seed=int(rng.integers(2 ** 31 - 1)))
        if nx.is_connected(graph):
            links = _links_from_edges(graph.edges())
            logger.topology(f"ER({n}, {p}) 第{attempt}次采样得到连通图, 无向边 {graph.number_of_edges()} 条")
            return Topology(
                num_nodes=n,
                links=links,
                capacities=tuple(float(mean_capacity) for _ in links),
                name=f"er-n{n}",
                seed=seed,
                attempts=attempt,
                mean_capacity=float(mean_capacity),
            )
    raise ConnectivityError(f"connectivity unreachable: ER({n}, {p}) 在 {max_attempts} 次采样内未得到连通图")


def load_named_topology(name):
    """加载内置命名拓扑，容量统一置为该拓扑的平均容量"""
    try:
        key = NamedTopology.parse(name)
    except KeyError:
        raise TopologyError(f"未知拓扑名称: {name}") from None
    spec = NAMED_TOPOLOGIES[key]
    links = _links_from_edges(spec['edges'])
    return Topology(
        num_nodes=spec['num_nodes'],
        links=links,
        capacities=tuple(spec['mean_capacity'] for _ in links),
        name=key.value,
        mean_capacity=spec['mean_capacity'],
    )


def draw_capacities(count, mean, seed):
    """在 [0, 2C̄] 上均匀采样并以 ε = 0.05·C̄ 为下限"""
    if not mean > 0:
        raise TopologyError(f"平均容量必须为正: {mean}")
    rng = np.random.default_rng(seed)
    floor = config.CAPACITY_FLOOR_RATIO * mean
    return np.maximum(rng.uniform(0.0, 2.0 * mean, size=count), floor)


def sample_capacities(topology, mean, seed):
    capacities = draw_capacities(topology.num_links, mean, seed)
    return replace(topology, capacities=tuple(float(c) for c in capacities), mean_capacity=float(mean))


def save_topology(topology, path):
    """保存为 `i j C_ij` 文本格式，容量保留17位有效数字"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_topology(topology), encoding='utf-8')
    return path


def format_topology(topology):
    """拓扑的文本表示（与 save_topology 的文件内容一致）"""
    lines = [f"# name: {topology.name}", f"# nodes: {topology.num_nodes}", f"# edges: {topology.num_edges}"]
    if topology.seed is not None:
        lines.append(f"# seed: {topology.seed}")
    if topology.mean_capacity is not None:
        lines.append(f"# mean_capacity: {topology.mean_capacity:.17g}")
    for (i, j), capacity in zip(topology.links, topology.capacities):
        lines.append(f"{i} {j} {capacity:.17g}")
    return '\n'.join(lines) + '\n'


def load_topology(path):
    path = Path(path)
    header = {}
    links, capacities = [], []
    for number, raw in enumerate(path.read_text(encoding='utf-8').splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith('#'):
            key, _, value = line[1:].partition(':')
            if value:
                header[key.strip()] = value.strip()
            continue
        parts = line.split()
        if len(parts) != 3:
            raise TopologyError(f"{path}:{number} 格式错误, 应为 'i j C_ij': {raw}")
        try:
            links.append((int(parts[0]), int(parts[1])))
            capacities.append(float(parts[2]))
        except ValueError:
            raise TopologyError(f"{path}:{number} 无法解析: {raw}") from None

    if 'nodes' in header:
        num_nodes = int(header['nodes'])
    else:
        num_nodes = 1 + max((max(link) for link in links), default=0)
    return Topology(
        num_nodes=num_nodes,
        links=tuple(links),
        capacities=tuple(capacities),
        name=header.get('name', path.stem),
        seed=int(header['seed']) if 'seed' in header else None,
        mean_capacity=float(header['mean_capacity']) if 'mean_capacity' in header else None,
    )


@dataclass(frozen=True)
class ModelPlacement:
    """节点到模型版本（会话）的映射，版本编号 0..W-1"""
    versions: Tuple[int, ...]
    num_versions: int

    def __post_init__(self):
        if self.num_versions < 1:
            raise TopologyError("模型版本数至少为1")
        for node, version in enumerate(self.versions):
            if not 0 <= version < self.num_versions:
                raise TopologyError(f"节点 {node} 的模型版本越界: {version}")
        missing = set(range(self.num_versions)) - set(self.versions)
        if missing:
            raise TopologyError(f"以下模型版本没有部署节点: {sorted(missing)}")

    def hosts(self, w):
        """部署版本 w 的节点集合 D(w)"""
        return tuple(i for i, version in enumerate(self.versions) if version == w)

    def version_of(self, node):
        return self.versions[node]


def random_placement(num_nodes, num_versions, seed):
    """随机部署模型版本，保证每个版本至少部署在一个节点上"""
    if num_nodes < num_versions:
        raise TopologyError(f"节点数 {num_nodes} 少于模型版本数 {num_versions}")
    rng = np.random.default_rng(seed)
    versions = rng.integers(0, num_versions, size=num_nodes)
    order = rng.permutation(num_nodes)
    versions[order[:num_versions]] = np.arange(num_versions)
    return ModelPlacement(tuple(int(v) for v in versions), num_versions)


def _readonly(array):
    array = np.asarray(array)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class AugmentedGraph:
    """
    增广图：物理节点 0..N-1，虚拟源 S (下标 N)，虚拟目的节点 D_w (下标 N+1+w)

    链路顺序：物理链路（与 Topology 相同）、(S, i)（入口节点升序）、(i, D_w)（节点升序）。
    """
    topology: Topology
    placement: ModelPlacement
    entry_nodes: Tuple[int, ...]
    links: Tuple[Tuple[int, int], ...]
    capacities: np.ndarray = field(compare=False)
    graph: nx.DiGraph = field(compare=False, repr=False)

    @property
    def num_sessions(self):
        return self.placement.num_versions

    @property
    def num_physical(self):
        return self.topology.num_nodes

    @property
    def num_nodes(self):
        return self.num_physical + 1 + self.num_sessions

    @property
    def num_links(self):
        return len(self.links)

    @property
    def source(self):
        return self.num_physical

    def destination(self, w):
        return self.num_physical + 1 + w

    @cached_property
    def tails(self):
        return _readonly(np.array([i for i, _ in self.links], dtype=np.intp))

    @cached_property
    def heads(self):
        return _readonly(np.array([j for _, j in self.links], dtype=np.intp))

    def node_label(self, index):
        if index < self.num_physical:
            return index
        if index == self.source:
            return SOURCE_LABEL
        return destination_label(index - self.num_physical - 1)

    def link_label(self, link):
        i, j = self.links[link]
        return self.node_label(i), self.node_label(j)

    def link_index(self, i, j):
        return self.links.index((i, j))

    def is_physical_link(self, link):
        i, j = self.links[link]
        return i < self.num_physical and j < self.num_physical


def augment(topology, placement, entry_nodes=None, compute_capacity=None, source_capacity=None):
    """
    构造增广图

    compute_capacity / source_capacity 可为标量或 {节点: 容量} 映射，
    缺省时取拓扑平均容量。入口节点缺省为部署版本 0 的全部节点。
    """
    if len(placement.versions) != topology.num_nodes:
        raise TopologyError(f"模型部署覆盖 {len(placement.versions)} 个节点, 拓扑有 {topology.num_nodes} 个")
    if entry_nodes is None:
        entry_nodes = placement.hosts(0)
    entry_nodes = tuple(sorted(set(int(i) for i in entry_nodes)))
    if not entry_nodes:
        raise TopologyError("入口节点集合为空")
    for node in entry_nodes:
        if not 0 <= node < topology.num_nodes:
            raise TopologyError(f"入口节点不在拓扑中: {node}")

    default = topology.mean_capacity or config.DEFAULT_MEAN_CAPACITY
    n = topology.num_nodes
    source = n

    def lookup(values, node):
        if values is None:
            return float(default)
        if isinstance(values, Mapping):
            return float(values[node])
        if np.ndim(values) == 0:
            return float(values)
        return float(values[node])

    links = list(topology.links)
    capacities = list(topology.capacities)
    for node in entry_nodes:
        links.append((source, node))
        capacities.append(lookup(source_capacity, node))
    for node in range(n):
        links.append((node, n + 1 + placement.version_of(node)))
        capacities.append(lookup(compute_capacity, node))

    for capacity, link in zip(capacities, links):
        if not capacity > 0:
            raise TopologyError(f"虚拟链路 {link} 容量必须为正: {capacity}")

    graph = nx.DiGraph()
    graph.add_nodes_from(range(n + 1 + placement.num_versions))
    for index, ((i, j), capacity) in enumerate(zip(links, capacities)):
        graph.add_edge(i, j, capacity=capacity, index=index)

    return AugmentedGraph(
        topology=topology,
        placement=placement,
        entry_nodes=entry_nodes,
        links=tuple(links),
        capacities=_readonly(np.array(capacities, dtype=float)),
        graph=graph,
    )


@dataclass(frozen=True)
class SessionDag:
    """会话 w 的允许链路集合与拓扑序（按到 D_w 的跳数递减）"""
    session: int
    allowed: np.ndarray = field(compare=False)
    order: Tuple[int, ...]
    hops: Tuple[float, ...]
    out_links: Dict[int, Tuple[int, ...]] = field(compare=False)
    longest_path: int

    @property
    def routed_nodes(self):
        return tuple(node for node in self.order if node in self.out_links)

    def to_digraph(self, augmented):
        graph = nx.DiGraph()
        graph.add_nodes_from(self.order)
        for link in np.flatnonzero(self.allowed):
            graph.add_edge(*augmented.links[link])
        return graph

    def is_acyclic(self, augmented):
        return nx.is_directed_acyclic_graph(self.to_digraph(augmented))


def build_session_dag(augmented, w):
    """
    按跳数递减规则构造会话 w 的路由子图

    跳数在去掉同版本物理链路（中继禁止）后的增广图上做反向BFS得到，
    只保留 hop(j) < hop(i) 的链路。
    """
    if not 0 <= w < augmented.num_sessions:
        raise TopologyError(f"会话编号越界: {w}")
    placement = augmented.placement
    n_phys = augmented.num_physical

    eligible = np.ones(augmented.num_links, dtype=bool)
    filtered = nx.DiGraph()
    filtered.add_nodes_from(range(augmented.num_nodes))
    for index, (i, j) in enumerate(augmented.links):
        if i < n_phys and j < n_phys and placement.version_of(i) == placement.version_of(j):
            eligible[index] = False
            continue
        filtered.add_edge(i, j)

    target = augmented.destination(w)
    distance = nx.single_source_shortest_path_length(filtered.reverse(copy=False), target)
    hops = np.full(augmented.num_nodes, np.inf)
    for node, hop in distance.items():
        hops[node] = hop

    if not np.isfinite(hops[augmented.source]):
        raise UnreachableDestinationError(
            f"unreachable destination: 虚拟源无法到达 {destination_label(w)}")

    allowed = np.zeros(augmented.num_links, dtype=bool)
    out_links = {}
    for index, (i, j) in enumerate(augmented.links):
        if eligible[index] and np.isfinite(hops[i]) and hops[j] < hops[i]:
            allowed[index] = True
            out_links.setdefault(i, []).append(index)

    order = tuple(sorted((node for node in range(augmented.num_nodes) if np.isfinite(hops[node])),
                         key=lambda node: (-hops[node], node)))
    allowed.flags.writeable = False

    return SessionDag(
        session=w,
        allowed=allowed,
        order=order,
        hops=tuple(float(h) for h in hops),
        out_links={node: tuple(links) for node, links in out_links.items()},
        longest_path=int(hops[np.isfinite(hops)].max()),
    )


def build_session_dags(augmented):
    dags = tuple(build_session_dag(augmented, w) for w in range(augmented.num_sessions))
    logger.topology(
        f"会话子图构建完成: 节点 {augmented.num_nodes}, 链路 {augmented.num_links}, "
        f"允许链路数 {[int(d.allowed.sum()) for d in dags]}")
    return dags
