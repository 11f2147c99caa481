"""
应用日志工具
"""

import functools
import json
import logging
import os
import time
from datetime import datetime
from logging.handlers import RotatingFileHandler

from config import config

# 创建logger
logger = logging.getLogger('cec_optimizer')
logger.setLevel(getattr(logging, config.LOG_LEVEL, logging.INFO))
logger.propagate = False

# 创建格式器
formatter = logging.Formatter(
    '%(asctime)s [%(levelname)s] %(message)s',
    datefmt='%Y-%m-%d %H:%M:%S'
)


# 结构化日志格式器
class StructuredFormatter(logging.Formatter):
    """结构化日志格式器，输出JSON行"""
    def format(self, record):
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno
        }

        if hasattr(record, 'performance_data'):
            log_entry['performance'] = record.performance_data

        # 实验单元标识 (instance/seed/algo)
        if hasattr(record, 'cell'):
            log_entry['cell'] = record.cell

        if hasattr(record, 'iteration'):
            log_entry['iteration'] = record.iteration

        return json.dumps(log_entry, ensure_ascii=False)


def _build_handlers():
    """按配置创建处理器；重复导入时不重复添加"""
    if logger.handlers:
        return

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, config.LOG_LEVEL, logging.INFO))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if not config.LOG_TO_FILE:
        return

    os.makedirs(os.path.dirname(config.LOG_FILE), exist_ok=True)

    # 文件处理器 - 支持日志轮转
    file_handler = RotatingFileHandler(
        config.LOG_FILE,
        maxBytes=config.LOG_MAX_SIZE * 1024 * 1024,
        backupCount=config.LOG_BACKUP_COUNT,
        encoding='utf-8'
    )
    file_handler.setLevel(getattr(logging, config.LOG_LEVEL, logging.INFO))
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)

    if config.ENABLE_STRUCTURED_LOGGING:
        structured_file_handler = RotatingFileHandler(
            config.LOG_FILE.replace('.log', '_structured.json'),
            maxBytes=config.LOG_MAX_SIZE * 1024 * 1024,
            backupCount=config.LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        structured_file_handler.setFormatter(StructuredFormatter())
        structured_file_handler.setLevel(logging.INFO)
        logger.addHandler(structured_file_handler)

    if config.ENABLE_PERFORMANCE_MONITORING:
        performance_file_handler = RotatingFileHandler(
            config.PERFORMANCE_LOG_FILE,
            maxBytes=config.LOG_MAX_SIZE * 1024 * 1024,
            backupCount=config.LOG_BACKUP_COUNT,
            encoding='utf-8'
        )
        performance_file_handler.setFormatter(formatter)
        performance_file_handler.setLevel(logging.INFO)
        performance_file_handler.addFilter(lambda record: hasattr(record, 'performance_data'))
        logger.addHandler(performance_file_handler)


_build_handlers()


def system_message(message):
    """记录系统消息"""
    logger.info(f"[SYSTEM] {message}")


def error_message(message, exception=None):
    """记录错误消息"""
    if exception:
        logger.error(f"[ERROR] {message} - Exception: {exception}")
    else:
        logger.error(f"[ERROR] {message}")


def warning_message(message):
    """记录警告消息"""
    logger.warning(f"[WARNING] {message}")


def topology_message(message):
    """记录拓扑构建信息"""
    logger.info(f"[TOPOLOGY] {message}")


def routing_status(message, iteration=None):
    """记录路由求解状态；带迭代号时按DEBUG级别输出"""
    if iteration is None:
        logger.info(f"[ROUTING] {message}")
    else:
        logger.debug(f"[ROUTING] [k={iteration}] {message}")


def allocation_status(message, iteration=None):
    """记录负载分配求解状态"""
    if iteration is None:
        logger.info(f"[ALLOC] {message}")
    else:
        logger.debug(f"[ALLOC] [t={iteration}] {message}")


def joint_status(message, iteration=None):
    """记录单环联合求解状态"""
    if iteration is None:
        logger.info(f"[JOINT] {message}")
    else:
        logger.debug(f"[JOINT] [t={iteration}] {message}")


def run_started(message, cell):
    """记录实验单元开始"""
    logger.info(f"[RUN] STARTED [{cell}]: {message}")


def run_completed(message, cell):
    """记录实验单元完成"""
    logger.info(f"[RUN] COMPLETED [{cell}]: {message}")


def run_failed(message, cell, error=None):
    """记录实验单元失败"""
    if error:
        logger.error(f"[RUN] FAILED [{cell}]: {message} - Error: {error}")
    else:
        logger.error(f"[RUN] FAILED [{cell}]: {message}")


def performance_monitor(operation: str, duration: float, cell: str = None, **kwargs):
    """记录性能监控信息"""
    if not config.ENABLE_PERFORMANCE_MONITORING:
        return

    performance_data = {
        'operation': operation,
        'duration_ms': round(duration * 1000, 2),
        'timestamp': datetime.now().isoformat()
    }
    if kwargs:
        performance_data.update(kwargs)

    log_record = logging.LogRecord(
        name=logger.name,
        level=logging.INFO,
        pathname='',
        lineno=0,
        msg=f"[PERFORMANCE] {operation} took {duration:.3f}s",
        args=(),
        exc_info=None
    )
    log_record.performance_data = performance_data
    if cell:
        log_record.cell = cell

    logger.handle(log_record)


def structured_log(level: str, message: str, **kwargs):
    """记录结构化日志"""
    if not config.ENABLE_STRUCTURED_LOGGING:
        return

    level_map = {
        'debug': logging.DEBUG,
        'info': logging.INFO,
        'warning': logging.WARNING,
        'error': logging.ERROR,
        'critical': logging.CRITICAL
    }

    log_record = logging.LogRecord(
        name=logger.name,
        level=level_map.get(level.lower(), logging.INFO),
        pathname='',
        lineno=0,
        msg=message,
        args=(),
        exc_info=None
    )
    for key, value in kwargs.items():
        setattr(log_record, key, value)

    logger.handle(log_record)


def performance_monitor_decorator(operation_name: str = None):
    """性能监控装饰器"""
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            operation = operation_name or f"{func.__module__}.{func.__name__}"
            try:
                result = func(*args, **kwargs)
                performance_monitor(operation, time.perf_counter() - start_time)
                return result
            except Exception as e:
                performance_monitor(operation, time.perf_counter() - start_time, error=str(e))
                raise
        return wrapper
    return decorator


# 为logger添加这些方法
logger.system = system_message
logger.error_msg = error_message
logger.warning_msg = warning_message
logger.topology = topology_message
logger.routing = routing_status
logger.allocation = allocation_status
logger.joint = joint_status
logger.run_started = run_started
logger.run_completed = run_completed
logger.run_failed = run_failed
logger.performance = performance_monitor
logger.structured = structured_log
logger.monitor = performance_monitor_decorator

__all__ = ['logger', 'performance_monitor', 'structured_log', 'performance_monitor_decorator']
