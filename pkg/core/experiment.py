"""
实验运行器：YAML 配置解析与校验、实例构造、(实例, 种子, 算法) 单元的进程池执行与结果汇总
"""

import copy
import multiprocessing as mp
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import yaml

from config import config
from core.allocate import AllocSolverConfig, gs_oma_solve
from core.cost import CostKind
from core.errors import CECError, ConfigError
from core.flow import Allocation, flows_to_frame
from core.instance import build_network_instance
from core.joint import omad_solve, run_with_lyapunov, topology_change_experiment
from core.opt_baseline import opt_baseline
from core.result_saver import ResultSaver
from core.routing import RoutingSolverConfig, omd_rt_solve, pgd_routing_baseline
from core.svg_report import emit_svg
from core.topology import (draw_capacities, generate_connected_er, load_named_topology, load_topology,
                           random_placement, sample_capacities)
from core.utility import UtilityKind, build_oracle
from utils.logger import logger

ROUTING_ALGOS = ('omd_rt', 'pgd', 'opt')
ALLOCATION_ALGOS = ('gs_oma', 'omad')
ALGORITHMS = ROUTING_ALGOS + ALLOCATION_ALGOS
SWITCH_ALGO = 'switch'
TOPOLOGY_KINDS = ('er', 'named', 'file')
SEED_STREAMS = ('topology', 'placement', 'capacity', 'compute', 'sampling')


def _line_index(node, path=()):
    """YAML 节点树中每个键路径所在的行号（从1开始）"""
    index = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key = path + (str(key_node.value),)
            index[key] = key_node.start_mark.line + 1
            index.update(_line_index(value_node, key))
    return index


def _deep_merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if value is None and isinstance(merged.get(key), dict):
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _read_yaml(path):
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"无法读取配置文件 {path}: {e}") from e
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, 'problem_mark', None)
        raise ConfigError(f"YAML 语法错误: {getattr(e, 'problem', e)}",
                          line=mark.line + 1 if mark else None) from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"配置文件顶层必须是映射: {path}", line=1)
    return data, _line_index(node)


def seed_streams(base_seed, seed):
    """由 (base_seed, seed) 派生互相独立的子种子"""
    children = np.random.SeedSequence([int(base_seed), int(seed)]).spawn(len(SEED_STREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(SEED_STREAMS, children)}


@dataclass
class ExperimentConfig:
    """一次实验的全部参数，字段与 defaults.yaml 一一对应"""
    name: str
    base_seed: int
    seeds: List[int]
    output: Optional[str]
    topology: Dict[str, Any]
    total_rate: float
    num_sessions: int
    capacity: Dict[str, Any]
    cost: Dict[str, Any]
    utility: Dict[str, Any]
    algorithms: List[str]
    routing: Dict[str, Any]
    allocation: Dict[str, Any]
    opt: Dict[str, Any]
    sweep: Dict[str, Any]
    switch: Dict[str, Any]
    verify: Dict[str, Any]
    svg: bool = False
    source_dir: Optional[str] = field(default=None, compare=False)
    lines: Dict[tuple, int] = field(default_factory=dict, compare=False, repr=False)

    @classmethod
    def defaults(cls):
        data, _ = _read_yaml(config.DEFAULTS_FILE)
        return data

    @classmethod
    def from_dict(cls, data, lines=None, source_dir=None):
        """合并默认值后构造并校验；未知字段视为错误"""
        defaults = cls.defaults()
        lines = lines or {}
        for key in (data or {}):
            if key not in defaults and key not in ('source_dir',):
                raise ConfigError("未知字段", field=key, line=lines.get((key,)))
        merged = _deep_merge(defaults, {k: v for k, v in (data or {}).items() if k != 'source_dir'})
        instance = cls(source_dir=source_dir or (data or {}).get('source_dir'), lines=lines, **merged)
        instance.validate()
        return instance

    @classmethod
    def from_file(cls, path, overrides=None):
        path = Path(path)
        data, lines = _read_yaml(path)
        data = _deep_merge(data, overrides)
        return cls.from_dict(data, lines=lines, source_dir=str(path.parent.resolve()))

    def to_dict(self):
        data = asdict(self)
        data.pop('lines')
        return data

    def _fail(self, message, *path):
        raise ConfigError(message, field='.'.join(path), line=self.lines.get(tuple(path)))

    def _positive(self, value, *path, integer=False):
        kind = int if integer else (int, float)
        if isinstance(value, bool) or not isinstance(value, kind) or not value > 0:
            self._fail(f"必须为正{'整数' if integer else '数'}: {value!r}", *path)

    def validate(self):
        if not isinstance(self.name, str) or not self.name:
            self._fail("实验名称不能为空", 'name')
        if not isinstance(self.base_seed, int):
            self._fail(f"必须为整数: {self.base_seed!r}", 'base_seed')
        if not isinstance(self.seeds, list) or not self.seeds:
            self._fail("种子列表不能为空", 'seeds')
        if not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in self.seeds):
            self._fail(f"种子必须为非负整数: {self.seeds}", 'seeds')
        self._positive(self.total_rate, 'total_rate')
        self._positive(self.num_sessions, 'num_sessions', integer=True)

        if not isinstance(self.algorithms, list) or not self.algorithms:
            self._fail("算法列表不能为空", 'algorithms')
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            self._fail(f"未知算法 {unknown}, 可选 {list(ALGORITHMS)}", 'algorithms')

        self._validate_topology(self.topology, 'topology')
        self._positive(self.capacity.get('mean'), 'capacity', 'mean')
        self._positive(self.capacity.get('compute'), 'capacity', 'compute')
        if self.capacity.get('source') is not None:
            self._positive(self.capacity['source'], 'capacity', 'source')

        try:
            CostKind.parse(self.cost.get('kind'))
        except CECError:
            self._fail(f"未知代价类型: {self.cost.get('kind')!r}", 'cost', 'kind')
        self._positive(self.cost.get('coeff'), 'cost', 'coeff')

        try:
            UtilityKind.parse(self.utility.get('family'))
        except CECError:
            self._fail(f"未知效用函数族: {self.utility.get('family')!r}", 'utility', 'family')
        try:
            a_values, b_values = self.utility_parameters()
        except (TypeError, ValueError) as e:
            self._fail(f"效用参数必须是数值: {e}", 'utility')
        if len(a_values) != self.num_sessions or len(b_values) != self.num_sessions:
            self._fail(f"效用参数个数应为 W={self.num_sessions}: a={a_values}, b={b_values}", 'utility')

        if self.routing.get('step_mode') not in ('fixed', 'smoothness'):
            self._fail(f"未知步长模式: {self.routing.get('step_mode')!r}", 'routing', 'step_mode')
        self._positive(self.routing.get('max_iterations'), 'routing', 'max_iterations', integer=True)
        self._positive(self.routing.get('tolerance'), 'routing', 'tolerance')
        self._positive(self.routing.get('residual_tolerance'), 'routing', 'residual_tolerance')
        self._positive(self.allocation.get('max_iterations'), 'allocation', 'max_iterations', integer=True)
        self._positive(self.allocation.get('inner_iterations'), 'allocation', 'inner_iterations', integer=True)
        self._positive(self.allocation.get('tolerance'), 'allocation', 'tolerance')
        disturbance = self.allocation.get('disturbance')
        if disturbance is not None:
            limit = self.total_rate / (2 * self.num_sessions)
            if isinstance(disturbance, bool) or not isinstance(disturbance, (int, float)) \
                    or not 0 < disturbance < limit:
                self._fail(f"扰动需满足 0 < δ < λ/(2W) = {limit}: {disturbance!r}", 'allocation', 'disturbance')
        self._positive(self.opt.get('tolerance'), 'opt', 'tolerance')
        self._positive(self.opt.get('max_iterations'), 'opt', 'max_iterations', integer=True)

        sizes = self.sweep.get('n') or []
        if not isinstance(sizes, list) or not all(isinstance(n, int) and n >= 2 for n in sizes):
            self._fail(f"扫描节点数必须是不小于2的整数列表: {sizes}", 'sweep', 'n')
        if sizes and self.topology.get('kind') != 'er':
            self._fail("网络规模扫描只支持 ER 拓扑", 'sweep', 'n')

        if self.switch.get('iteration') is not None:
            self._positive(self.switch['iteration'], 'switch', 'iteration', integer=True)
            if not isinstance(self.switch.get('topology'), dict):
                self._fail("拓扑切换需要给出切换后的拓扑", 'switch', 'topology')
            self._validate_topology(_deep_merge(self.topology, self.switch['topology']), 'switch', 'topology')
        self._positive(self.verify.get('trials'), 'verify', 'trials', integer=True)
        return True

    def _validate_topology(self, spec, *path):
        kind = spec.get('kind')
        if kind not in TOPOLOGY_KINDS:
            self._fail(f"未知拓扑类型 {kind!r}, 可选 {list(TOPOLOGY_KINDS)}", *path, 'kind')
        if kind == 'er':
            n, p = spec.get('n'), spec.get('p')
            if isinstance(n, bool) or not isinstance(n, int) or n < max(2, self.num_sessions):
                self._fail(f"ER 节点数必须是不小于 max(2, W) 的整数: {n!r}", *path, 'n')
            if isinstance(p, bool) or not isinstance(p, (int, float)) or not 0 < p <= 1:
                self._fail(f"ER 连边概率必须在 (0, 1] 内: {p!r}", *path, 'p')
        elif kind == 'named' and not spec.get('name'):
            self._fail("命名拓扑需要给出 name", *path, 'name')
        elif kind == 'file' and not spec.get('path'):
            self._fail("文件拓扑需要给出 path", *path, 'path')

    def utility_parameters(self):
        family = UtilityKind.parse(self.utility.get('family')).value
        preset = (self.utility.get('presets') or {}).get(family, {})
        a_values = self.utility.get('a') if self.utility.get('a') is not None else preset.get('a', [])
        b_values = self.utility.get('b') if self.utility.get('b') is not None else preset.get('b', [])
        if np.ndim(a_values) == 0:
            a_values = [a_values] * self.num_sessions
        if np.ndim(b_values) == 0:
            b_values = [b_values] * self.num_sessions
        return [float(a) for a in a_values], [float(b) for b in b_values]

    def build_oracle(self):
        a_values, b_values = self.utility_parameters()
        return build_oracle(self.utility['family'], a_values, b_values, self.total_rate)

    def routing_config(self, max_iterations=None):
        return RoutingSolverConfig(
            step_size=float(self.routing['step_size']),
            max_iterations=int(max_iterations or self.routing['max_iterations']),
            tolerance=float(self.routing['tolerance']),
            residual_tolerance=float(self.routing['residual_tolerance']),
            step_mode=self.routing['step_mode'],
            smoothness=self.routing.get('smoothness'),
            halving=bool(self.routing.get('halving', True)),
        )

    def allocation_config(self):
        return AllocSolverConfig(
            disturbance=self.allocation.get('disturbance'),
            step_size=self.allocation.get('step_size'),
            max_iterations=int(self.allocation['max_iterations']),
            tolerance=float(self.allocation['tolerance']),
            routing=self.routing_config(self.allocation['inner_iterations']),
            ascent_check=bool(self.allocation.get('ascent_check', True)),
        )

    def instances(self):
        """(实例键, 拓扑参数) 列表；有规模扫描时每个 n 一个实例"""
        sizes = self.sweep.get('n') or []
        if sizes:
            return [(f"n{n}", _deep_merge(self.topology, {'n': n})) for n in sizes]
        return [(self.name, dict(self.topology))]

    def resolve_path(self, path):
        path = Path(path)
        if not path.is_absolute() and self.source_dir:
            path = Path(self.source_dir) / path
        return path


def build_topology(experiment, spec, streams):
    kind = spec['kind']
    mean = float(experiment.capacity['mean'])
    if kind == 'er':
        seed = spec.get('seed') if spec.get('seed') is not None else streams['topology']
        topology = generate_connected_er(int(spec['n']), float(spec['p']), seed, mean_capacity=mean)
        return sample_capacities(topology, mean, streams['capacity'])
    if kind == 'named':
        topology = load_named_topology(spec['name'])
        return sample_capacities(topology, topology.mean_capacity, streams['capacity'])
    return load_topology(experiment.resolve_path(spec['path']))


def build_instance(experiment, seed, spec=None, label=None):
    """按种子构造网络实例：拓扑、容量、模型部署与代价模型"""
    streams = seed_streams(experiment.base_seed, seed)
    topology = build_topology(experiment, spec or experiment.topology, streams)
    placement = random_placement(topology.num_nodes, experiment.num_sessions, streams['placement'])
    compute = draw_capacities(topology.num_nodes, float(experiment.capacity['compute']), streams['compute'])
    source = experiment.capacity.get('source') or experiment.total_rate
    return build_network_instance(
        topology, placement,
        cost_kind=experiment.cost['kind'],
        cost_coeff=float(experiment.cost['coeff']),
        compute_capacity=compute,
        source_capacity=float(source),
        label=label or f"{topology.name}-s{seed}",
    )


def cell_key(instance, seed, algo):
    return f"{instance}_s{seed}_{algo}"


def _opt_frame(result):
    return pd.DataFrame({'iter': [result.iterations], 'D': [result.cost], 'gap': [result.gap]})


def _run_algorithm(experiment, instance, algo, key):
    """返回 (汇总行补充字段, {相对路径: DataFrame})"""
    augmented, dags, costs = instance.augmented, instance.dags, instance.costs
    frames = {}
    if algo in ('omd_rt', 'pgd'):
        solver = omd_rt_solve if algo == 'omd_rt' else pgd_routing_baseline
        allocation = Allocation.uniform(experiment.total_rate, experiment.num_sessions)
        result = solver(augmented, dags, allocation, costs, experiment.routing_config())
        frames[f"traces/{key}.csv"] = result.to_frame()
        frames[f"flows/{key}.csv"] = flows_to_frame(result.flows, augmented)
        status = 'converged' if result.converged else 'max_iterations'
        return {'final_value': result.cost, 'iters': result.iterations, 'status': status}, frames

    if algo == 'opt':
        allocation = Allocation.uniform(experiment.total_rate, experiment.num_sessions)
        result = opt_baseline(augmented, dags, allocation, costs,
                              tol=float(experiment.opt['tolerance']),
                              max_iterations=int(experiment.opt['max_iterations']))
        frames[f"traces/{key}.csv"] = _opt_frame(result)
        frames[f"flows/{key}.csv"] = flows_to_frame(result, augmented)
        status = 'converged' if result.converged else 'max_iterations'
        return {'final_value': result.cost, 'iters': result.iterations, 'status': status}, frames

    oracle = experiment.build_oracle()
    solver_config = experiment.allocation_config()
    if experiment.allocation.get('lyapunov'):
        result, lyapunov = run_with_lyapunov(instance, oracle, algo, solver_config)
        frames[f"traces/{key}_lyapunov.csv"] = lyapunov
    else:
        solver = gs_oma_solve if algo == 'gs_oma' else omad_solve
        result = solver(instance, oracle, solver_config)
    frames[f"traces/{key}.csv"] = result.records
    frames[f"flows/{key}.csv"] = flows_to_frame(result.flows, augmented)
    status = 'converged' if result.converged else 'max_iterations'
    return {'final_value': result.utility, 'iters': result.iterations, 'status': status}, frames


def _run_switch(experiment, seed, key):
    spec_b = _deep_merge(experiment.topology, experiment.switch['topology'])
    instance_a = build_instance(experiment, seed, label=f"{experiment.name}-A")
    instance_b = build_instance(experiment, seed, spec=spec_b, label=f"{experiment.name}-B")
    oracle = experiment.build_oracle()
    result = topology_change_experiment(
        instance_a, instance_b, oracle, int(experiment.switch['iteration']),
        solver_config=experiment.allocation_config(),
        max_iterations=experiment.switch.get('max_iterations'),
    )
    rows = []
    for algo, utility in result.final_utility.items():
        iters = int(result.frame.loc[result.frame['algo'] == algo, 'iter'].max()) - 1
        status = 'reconverged' if result.reconverged[algo] else 'not_reconverged'
        rows.append({'algo': f"{SWITCH_ALGO}_{algo}", 'final_value': utility, 'iters': iters, 'status': status})
    return rows, {f"traces/{key}.csv": result.frame}


def run_cell(spec):
    """
    进程池工作函数：运行一个 (实例, 种子, 算法) 单元

    参数: {'config': dict, 'instance': str, 'topology': dict, 'seed': int, 'algo': str}
    返回: {'success': bool, 'rows': [...], 'frames': {...}, 'wall_ms': float, 'error': str}
    """
    instance_key, seed, algo = spec['instance'], spec['seed'], spec['algo']
    key = cell_key(instance_key, seed, algo)
    start = time.perf_counter()
    base = {'instance': instance_key, 'seed': seed}
    try:
        experiment = ExperimentConfig.from_dict(spec['config'])
        logger.run_started(f"算法 {algo}, 种子 {seed}", key)
        if algo == SWITCH_ALGO:
            rows, frames = _run_switch(experiment, seed, key)
        else:
            instance = build_instance(experiment, seed, spec=spec['topology'])
            row, frames = _run_algorithm(experiment, instance, algo, key)
            rows = [dict(row, algo=algo)]
        wall_ms = (time.perf_counter() - start) * 1000.0
        logger.performance('run_cell', wall_ms / 1000.0, cell=key)
        logger.run_completed(f"{rows[0]['status']}, final={rows[0]['final_value']:.10g}, {wall_ms:.0f} ms", key)
        logger.structured('info', f"[RUN] 单元完成 status={rows[0]['status']}", cell=key)
        return {'cell': key, 'success': True, 'rows': [dict(base, **r) for r in rows],
                'frames': frames, 'wall_ms': wall_ms}
    except Exception as e:
        wall_ms = (time.perf_counter() - start) * 1000.0
        logger.run_failed("单元运行失败", key, error=e)
        logger.debug(f"[RUN] {key} 失败详情", exc_info=True)
        row = dict(base, algo=algo, final_value=np.nan, iters=0, status='failed')
        return {'cell': key, 'success': False, 'rows': [row], 'frames': {}, 'wall_ms': wall_ms, 'error': str(e)}


def build_cells(experiment):
    """按 (实例, 种子, 算法) 排序的单元列表；配置了拓扑切换时每个种子追加一个切换单元"""
    data = experiment.to_dict()
    cells = []
    for instance_key, topology in experiment.instances():
        for seed in sorted(experiment.seeds):
            for algo in sorted(experiment.algorithms):
                cells.append({'config': data, 'instance': instance_key, 'topology': topology,
                              'seed': seed, 'algo': algo})
    if experiment.switch.get('iteration') is not None:
        for seed in sorted(experiment.seeds):
            cells.append({'config': data, 'instance': experiment.name, 'topology': experiment.topology,
                          'seed': seed, 'algo': SWITCH_ALGO})
    return cells


def execute_cells(cells, workers=None):
    """单进程时就地执行，否则使用 spawn 进程池；返回顺序与输入一致"""
    workers = workers or config.get_worker_count(len(cells))
    if workers <= 1 or len(cells) <= 1:
        return [run_cell(cell) for cell in cells]
    logger.system(f"使用 {workers} 个进程运行 {len(cells)} 个实验单元")
    context = mp.get_context('spawn')
    with context.Pool(processes=workers) as pool:
        return pool.map(run_cell, cells)


def sweep_table(summary):
    """各实例、各算法成功单元的平均最终值"""
    ok = summary[summary['status'] != 'failed']
    table = ok.groupby(['instance', 'algo'], sort=True)['final_value'].mean().reset_index()
    return table.rename(columns={'final_value': 'mean_final_value'})


@dataclass
class RunReport:
    output_folder: Path
    summary: pd.DataFrame
    failures: List[str]
    files: List[Path]

    @property
    def success(self):
        return not self.failures


def run(experiment, output=None, workers=None, svg=None):
    """运行配置中的全部单元，写出轨迹、流量、汇总、耗时与（可选）SVG"""
    output = output or experiment.output or Path(config.OUTPUT_FOLDER) / experiment.name
    cells = build_cells(experiment)
    logger.system(f"实验 {experiment.name}: {len(cells)} 个单元, 输出到 {output}")
    results = execute_cells(cells, workers)

    saver = ResultSaver(output)
    summary_rows, timing_rows, failures = [], [], []
    for result in results:
        for relative in sorted(result['frames']):
            saver.save_frame(relative, result['frames'][relative])
        summary_rows.extend(result['rows'])
        timing_rows.extend({'instance': r['instance'], 'seed': r['seed'], 'algo': r['algo'],
                            'wall_ms': result['wall_ms']} for r in result['rows'])
        if not result['success']:
            failures.append(f"{result['cell']}: {result['error']}")
    saver.save_summary(summary_rows)
    saver.save_timings(timing_rows)

    summary = pd.DataFrame(summary_rows)
    if experiment.sweep.get('n'):
        saver.save_sweep(sweep_table(summary))

    if (svg if svg is not None else experiment.svg):
        for path in [p for p in saver.get_saved_files() if p.parent.name == 'traces']:
            saver.saved_files.append(emit_svg(path))

    for failure in failures:
        logger.error_msg(f"单元失败 {failure}")
    logger.system(f"实验 {experiment.name} 完成: 成功 {len(results) - len(failures)}, 失败 {len(failures)}")
    return RunReport(output_folder=Path(saver.output_folder), summary=summary,
                     failures=failures, files=saver.get_saved_files())
