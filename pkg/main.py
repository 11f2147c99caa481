#!/usr/bin/env python3
"""
边缘协同 DNN 推理流量仿真与在线优化 主程序

子命令:
    run <config> [--out DIR] [--seeds 1,2,3] [--algos omd_rt,opt] [--svg]
    topology dump <name> [--out FILE]
    verify <config> [--trials N]

退出码: 0 全部成功；1 有单元运行失败或不变量未通过；2 配置错误
"""

import argparse
import os
import sys
from datetime import datetime

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import config  # noqa: E402
from core.errors import CECError, ConfigError  # noqa: E402
from utils.logger import logger  # noqa: E402

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def _parse_list(text, cast=str):
    items = [item.strip() for item in text.split(',') if item.strip()]
    try:
        return [cast(item) for item in items]
    except ValueError:
        raise argparse.ArgumentTypeError(f"无法解析列表: {text}") from None


def _seed_list(text):
    return _parse_list(text, int)


def _algo_list(text):
    return _parse_list(text, str)


def build_parser():
    parser = argparse.ArgumentParser(prog='cec', description='边缘协同DNN推理: 负载分配与路由联合优化仿真')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='按配置运行实验并输出CSV/SVG')
    run_parser.add_argument('config', help='实验配置文件 (YAML)')
    run_parser.add_argument('--out', help='输出目录，缺省为配置中的 output 或 OUTPUT_FOLDER/<name>')
    run_parser.add_argument('--seeds', type=_seed_list, help='覆盖种子列表，如 1,2,3')
    run_parser.add_argument('--algos', type=_algo_list, help='覆盖算法列表，如 omd_rt,opt')
    run_parser.add_argument('--svg', action='store_true', help='为每个轨迹CSV生成SVG折线图')
    run_parser.add_argument('--workers', type=int, help='并行进程数，缺省取 CEC_THREADS')

    topology_parser = subparsers.add_parser('topology', help='拓扑工具')
    topology_sub = topology_parser.add_subparsers(dest='action', required=True)
    dump_parser = topology_sub.add_parser('dump', help='输出内置命名拓扑')
    dump_parser.add_argument('name', help='Abilene / BalancedTree / Fog / GEANT')
    dump_parser.add_argument('--out', help='写入文件而不是标准输出')

    verify_parser = subparsers.add_parser('verify', help='只运行不变量检查')
    verify_parser.add_argument('config', help='实验配置文件 (YAML)')
    verify_parser.add_argument('--trials', type=int, help='每项随机检查的抽样次数')
    return parser


def _load_experiment(path, seeds=None, algos=None):
    from core.experiment import ExperimentConfig
    overrides = {}
    if seeds:
        overrides['seeds'] = seeds
    if algos:
        overrides['algorithms'] = algos
    return ExperimentConfig.from_file(path, overrides)


def command_run(args):
    from core.experiment import run
    experiment = _load_experiment(args.config, args.seeds, args.algos)
    report = run(experiment, output=args.out, workers=args.workers, svg=args.svg or None)
    logger.system(f"输出目录: {report.output_folder}, 文件 {len(report.files)} 个")
    if not report.success:
        for failure in report.failures:
            print(f"失败: {failure}", file=sys.stderr)
        return EXIT_FAILED
    return EXIT_OK


def command_topology(args):
    from core.topology import format_topology, load_named_topology, save_topology
    topology = load_named_topology(args.name)
    if args.out:
        path = save_topology(topology, args.out)
        logger.system(f"拓扑 {topology.name} 已写入 {path}")
    else:
        sys.stdout.write(format_topology(topology))
    return EXIT_OK


def command_verify(args):
    from core.verify import verify
    experiment = _load_experiment(args.config)
    report = verify(experiment, trials=args.trials)
    for check in report.failures:
        print(f"未通过: {check.name} [{check.instance}] 最差 {check.worst:.3e} {check.detail}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAILED


COMMANDS = {
    'run': command_run,
    'topology': command_topology,
    'verify': command_verify,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logger.system(f"启动时间: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}, 命令: {args.command}, "
                  f"并行上限: {config.CEC_THREADS}")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error_msg("配置错误", e)
        print(f"配置错误: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CECError as e:
        logger.error_msg("运行失败", e)
        print(f"运行失败: {e}", file=sys.stderr)
        return EXIT_FAILED
    except KeyboardInterrupt:
        logger.system("接收到中断信号，正在退出...")
        return EXIT_FAILED


if __name__ == '__main__':
    sys.exit(main())
