"""
应用配置文件
"""

import os
import sys
from pathlib import Path

# 尝试加载 .env 文件
try:
    from dotenv import load_dotenv
    env_path = Path(__file__).parent / '.env'
    if env_path.exists():
        load_dotenv(env_path)
        print(f"[CONFIG] 已加载环境配置文件: {env_path}", file=sys.stderr)
except ImportError:
    print("[CONFIG] python-dotenv 未安装，跳过 .env 文件加载", file=sys.stderr)
except Exception as e:
    print(f"[CONFIG] 加载 .env 文件失败: {e}", file=sys.stderr)

# 基础配置
BASE_DIR = Path(__file__).parent.absolute()


# 应用配置
class Config:
    # ==================== 输出配置 ====================
    # 实验结果输出目录（CSV轨迹、汇总表、SVG图）
    # 调用程序: main.py, core/experiment.py
    OUTPUT_FOLDER = os.environ.get('OUTPUT_FOLDER') or os.path.join(BASE_DIR, 'outputs')

    # 实验默认参数文件
    # 调用程序: core/experiment.py
    DEFAULTS_FILE = os.environ.get('DEFAULTS_FILE') or os.path.join(BASE_DIR, 'defaults.yaml')

    # ==================== 日志配置 ====================
    # 日志文件路径
    # 调用程序: utils/logger.py
    LOG_FILE = os.environ.get('LOG_FILE') or os.path.join(BASE_DIR, 'logs', 'cec.log')

    # 日志级别: DEBUG, INFO, WARNING, ERROR, CRITICAL
    # 调用程序: main.py, utils/logger.py
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO').upper()

    # 是否写入日志文件（测试环境可关闭）
    # 调用程序: utils/logger.py
    LOG_TO_FILE = os.environ.get('LOG_TO_FILE', 'True').lower() == 'true'

    # 是否启用结构化日志
    # 调用程序: utils/logger.py
    ENABLE_STRUCTURED_LOGGING = os.environ.get('ENABLE_STRUCTURED_LOGGING', 'False').lower() == 'true'

    # 是否启用性能监控日志
    # 调用程序: utils/logger.py, core/experiment.py
    ENABLE_PERFORMANCE_MONITORING = os.environ.get('ENABLE_PERFORMANCE_MONITORING', 'False').lower() == 'true'

    # 性能监控日志文件路径
    # 调用程序: utils/logger.py
    PERFORMANCE_LOG_FILE = os.environ.get('PERFORMANCE_LOG_FILE') or os.path.join(BASE_DIR, 'logs', 'performance.log')

    # 日志轮转配置 - 单个日志文件最大大小(MB)
    # 调用程序: utils/logger.py
    LOG_MAX_SIZE = int(os.environ.get('LOG_MAX_SIZE', 10))

    # 日志轮转配置 - 保留的备份文件数量
    # 调用程序: utils/logger.py
    LOG_BACKUP_COUNT = int(os.environ.get('LOG_BACKUP_COUNT', 5))

    # ==================== 并行配置 ====================
    # 实验单元并行进程数上限
    # 调用程序: main.py, core/experiment.py
    CEC_THREADS = int(os.environ.get('CEC_THREADS') or os.cpu_count() or 1)

    # ==================== 拓扑配置 ====================
    # 连通ER图重采样次数上限
    # 调用程序: core/topology.py
    CONNECTIVITY_MAX_ATTEMPTS = int(os.environ.get('CONNECTIVITY_MAX_ATTEMPTS', 1000))

    # 容量下限相对平均容量的比例
    # 调用程序: core/topology.py
    CAPACITY_FLOOR_RATIO = float(os.environ.get('CAPACITY_FLOOR_RATIO', 0.05))

    # 无平均容量信息时的默认平均容量
    # 调用程序: core/topology.py, core/instance.py
    DEFAULT_MEAN_CAPACITY = float(os.environ.get('DEFAULT_MEAN_CAPACITY', 10.0))

    # ==================== 数值配置 ====================
    # 最优性残差的支撑阈值 (φ_ij 大于该值视为被使用的链路)
    # 调用程序: core/routing.py
    SUPPORT_THRESHOLD = float(os.environ.get('SUPPORT_THRESHOLD', 1e-6))

    # 路由收敛判定的相对残差阈值 (极差与KKT违反量均不超过 阈值·(1+平均边际))
    # 调用程序: core/routing.py
    RESIDUAL_TOLERANCE = float(os.environ.get('RESIDUAL_TOLERANCE', 1e-3))

    # 步长减半次数上限
    # 调用程序: core/routing.py, core/allocate.py
    MAX_STEP_HALVINGS = int(os.environ.get('MAX_STEP_HALVINGS', 60))

    # SVG 图尺寸(英寸)
    # 调用程序: core/svg_report.py
    SVG_WIDTH = float(os.environ.get('SVG_WIDTH', 6.4))
    SVG_HEIGHT = float(os.environ.get('SVG_HEIGHT', 4.0))

    @staticmethod
    def get_worker_count(cells):
        """并行进程数：不超过 CEC_THREADS 与任务单元数"""
        return max(1, min(Config.CEC_THREADS, cells))

    @staticmethod
    def ensure_output_folder(path=None):
        """确保输出目录存在并返回其路径"""
        folder = Path(path or Config.OUTPUT_FOLDER)
        folder.mkdir(parents=True, exist_ok=True)
        return folder


config = Config()
