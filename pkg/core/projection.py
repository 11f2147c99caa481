"""
欧氏投影：单纯形与 盒约束∩单纯形
"""

import numpy as np


def project_simplex(v, z=1.0):
    """投影到 {x ≥ 0, Σx = z}（排序法）"""
    v = np.asarray(v, dtype=float)
    if v.size == 1:
        return np.array([z], dtype=float)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - z
    ind = np.arange(1, v.size + 1)
    cond = u - cssv / ind > 0
    rho = ind[cond][-1]
    theta = cssv[cond][-1] / float(rho)
    return np.maximum(v - theta, 0.0)


def project_box_simplex(v, lower, upper, total):
    """
    投影到 {lower ≤ x ≤ upper, Σx = total}

    解为 x = clip(v - θ, lower, upper)，Σclip(v - θ) 关于 θ 分段线性单调不增，
    在排序后的断点间线性插值求得 θ。
    """
    v = np.asarray(v, dtype=float)
    if not lower * v.size - 1e-12 <= total <= upper * v.size + 1e-12:
        raise ValueError(f"盒约束 [{lower}, {upper}]^{v.size} 与总量 {total} 不相容")

    def mass(theta):
        return np.clip(v - theta, lower, upper).sum()

    breakpoints = np.unique(np.concatenate([v - upper, v - lower]))
    values = np.array([mass(theta) for theta in breakpoints])
    # values 随 θ 单调不增
    if total >= values[0]:
        theta = breakpoints[0]
    elif total <= values[-1]:
        theta = breakpoints[-1]
    else:
        k = int(np.flatnonzero(values >= total)[-1])
        lo, hi = breakpoints[k], breakpoints[k + 1]
        m_lo, m_hi = values[k], values[k + 1]
        theta = lo if m_lo == m_hi else lo + (m_lo - total) * (hi - lo) / (m_lo - m_hi)
    return np.clip(v - theta, lower, upper)
