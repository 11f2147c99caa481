"""
实验结果保存模块
负责把各实验单元的轨迹、流量与汇总表写为CSV文件
"""

from pathlib import Path
from typing import Any, Dict, List

import pandas as pd

from config import config
from utils.logger import logger

SUMMARY_COLUMNS = ['instance', 'seed', 'algo', 'final_value', 'iters', 'status']
TIMING_COLUMNS = ['instance', 'seed', 'algo', 'wall_ms']
SWEEP_COLUMNS = ['instance', 'algo', 'mean_final_value']


class ResultSaver:
    """实验结果保存器"""

    def __init__(self, output_folder=None):
        """初始化保存器并确保输出目录存在"""
        self.output_folder = config.ensure_output_folder(output_folder)
        self.saved_files: List[Path] = []

    def _write(self, frame: pd.DataFrame, relative) -> Path:
        path = self.output_folder / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator='\n')
        self.saved_files.append(path)
        logger.debug(f"已保存: {path}")
        return path

    def save_frame(self, relative, frame: pd.DataFrame) -> Path:
        """保存单元产生的轨迹或流量表，relative 为相对输出目录的路径"""
        return self._write(frame, relative)

    def save_summary(self, rows: List[Dict[str, Any]]) -> Path:
        """
        保存汇总表 summary.csv

        Args:
            rows: 每个 (instance, seed, algo) 一行

        Returns:
            Path: 汇总表路径
        """
        frame = pd.DataFrame(rows, columns=SUMMARY_COLUMNS)
        return self._write(frame.sort_values(['instance', 'seed', 'algo'], kind='mergesort'), 'summary.csv')

    def save_timings(self, rows: List[Dict[str, Any]]) -> Path:
        """墙钟时间单独成表，其余CSV才能逐字节复现"""
        frame = pd.DataFrame(rows, columns=TIMING_COLUMNS)
        return self._write(frame.sort_values(['instance', 'seed', 'algo'], kind='mergesort'), 'timings.csv')

    def save_sweep(self, frame: pd.DataFrame) -> Path:
        return self._write(frame[SWEEP_COLUMNS], 'sweep.csv')

    def get_saved_files(self) -> List[Path]:
        return list(self.saved_files)
