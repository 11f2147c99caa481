"""
轨迹CSV转SVG折线图
"""

from pathlib import Path

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from config import config  # noqa: E402
from core.errors import TraceFormatError  # noqa: E402

# SVG 内部 id 与日期不随运行变化
matplotlib.rcParams['svg.hashsalt'] = 'cec-trace'
SERIES_COLUMN = 'algo'
NON_VALUE_COLUMNS = {SERIES_COLUMN, 'event'}


def _read_trace(trace_csv):
    try:
        frame = pd.read_csv(trace_csv)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise TraceFormatError(f"无法读取轨迹文件 {trace_csv}: {e}") from e
    if frame.empty or len(frame.columns) < 2:
        raise TraceFormatError(f"轨迹文件至少需要一行数据和两列: {trace_csv}")
    return frame


def _value_columns(frame):
    x_column = 'iter' if 'iter' in frame.columns else frame.columns[0]
    candidates = [c for c in frame.columns if c != x_column and c not in NON_VALUE_COLUMNS]
    numeric = [c for c in candidates if pd.api.types.is_numeric_dtype(frame[c])]
    if not pd.api.types.is_numeric_dtype(frame[x_column]) or not numeric:
        raise TraceFormatError(f"轨迹文件缺少数值列: {list(frame.columns)}")
    return x_column, numeric[0]


def emit_svg(trace_csv, svg_path=None, kind='line'):
    """每个算法一条折线，共用坐标轴；只有一行数据的序列画成单个标记"""
    if kind != 'line':
        raise TraceFormatError(f"不支持的图类型: {kind}")
    trace_csv = Path(trace_csv)
    svg_path = Path(svg_path) if svg_path else trace_csv.with_suffix('.svg')
    frame = _read_trace(trace_csv)
    x_column, y_column = _value_columns(frame)

    if SERIES_COLUMN in frame.columns:
        groups = [(str(name), group) for name, group in frame.groupby(SERIES_COLUMN, sort=True)]
    else:
        groups = [(y_column, frame)]

    fig, ax = plt.subplots(figsize=(config.SVG_WIDTH, config.SVG_HEIGHT))
    try:
        for name, group in groups:
            marker = 'o' if len(group) == 1 else None
            ax.plot(group[x_column].to_numpy(), group[y_column].to_numpy(), marker=marker, label=name)
        ax.set_xlabel(x_column)
        ax.set_ylabel(y_column)
        if len(groups) > 1:
            ax.legend()
        svg_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(svg_path, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    return svg_path
