"""
目標函數與步階響應指標

J = Σ_k [w1·t_k·|e_k| + w2·u_k²]·Ts（左矩形法，有限時間）

此為 ITAE（時間加權絕對誤差積分）與 ISCO（控制輸出平方積分）的加權和，
也是 GA 調整 PI 增益時的適應度。發散的軌跡以懲罰值計分，越早發散懲罰越大。
"""

import math
from dataclasses import dataclass, asdict
from typing import Dict, Optional, Tuple

import numpy as np

from .config import ObjectiveWeights
from .simulation import Trace

# 發散懲罰的基準值
DIVERGENCE_PENALTY = 1e12


def divergence_penalty(trace: Trace) -> float:
    """發散懲罰：1e12 · (1 + horizon − t_diverged)"""
    return DIVERGENCE_PENALTY * (1.0 + trace.horizon - trace.t_diverged)


def objective_terms(trace: Trace) -> Tuple[float, float]:
    """
    計算 ITAE 與 ISCO 兩項（未加權）

    Returns:
        Tuple[float, float]: (Σ t·|e|·Ts, Σ u²·Ts)

    Raises:
        ValueError: 軌跡為空時
    """
    if len(trace) == 0:
        raise ValueError("軌跡為空，無法計算目標函數")
    t = np.asarray(trace.t, dtype=float)
    e = np.asarray(trace.e, dtype=float)
    u = np.asarray(trace.u, dtype=float)
    itae = float(np.sum(t * np.abs(e)) * trace.Ts)
    isco = float(np.sum(u * u) * trace.Ts)
    return itae, isco


def objective(trace: Trace, w: ObjectiveWeights) -> float:
    """
    加權 ITAE + ISCO 成本

    Args:
        trace (Trace): 以 Ts 均勻取樣的閉迴路軌跡
        w (ObjectiveWeights): 權重

    Returns:
        float: J >= 0；發散的軌跡回傳有限的懲罰值，
            其餘軌跡的成本以 DIVERGENCE_PENALTY 為上限

    Raises:
        ValueError: 軌跡為空時
    """
    if trace.diverged:
        return divergence_penalty(trace)
    itae, isco = objective_terms(trace)
    # 未發散的成本不得超過任何發散懲罰
    return min(w.w1 * itae + w.w2 * isco, DIVERGENCE_PENALTY)


@dataclass
class StepMetrics:
    """步階響應指標"""
    overshoot_pct: float
    rise_time: Optional[float]
    settling_time: Optional[float]
    steady_state_error: float
    final_mean_y: float
    itae: float
    isco: float

    def to_dict(self) -> Dict[str, Optional[float]]:
        return asdict(self)


def final_window_mean(values, fraction: float = 0.2) -> float:
    """最後 fraction 比例樣本的平均值"""
    values = np.asarray(values, dtype=float)
    count = max(1, int(math.ceil(len(values) * fraction)))
    return float(np.mean(values[-count:]))


def step_metrics(trace: Trace, band: float = 0.02) -> StepMetrics:
    """
    計算步階響應指標

    Args:
        trace (Trace): 閉迴路軌跡
        band (float): 安定時間的誤差帶（相對設定值），預設 2%

    Returns:
        StepMetrics: 超越量 %、10–90% 上升時間、安定時間、穩態誤差等

    功能說明：
    - 超越量以設定值為基準；設定值為 0 時記為 0
    - 上升時間或安定時間不存在時為 None
    - 穩態誤差取最後 20% 樣本的平均誤差
    """
    if len(trace) == 0:
        raise ValueError("軌跡為空，無法計算步階響應指標")
    t = np.asarray(trace.t, dtype=float)
    y = np.asarray(trace.y, dtype=float)
    r = trace.r[0]
    itae, isco = objective_terms(trace)

    if r == 0:
        return StepMetrics(0.0, None, None, final_window_mean(trace.e), final_window_mean(y), itae, isco)

    normalized = y / r
    overshoot = max(0.0, float(np.max(normalized)) - 1.0) * 100.0

    rise_time = None
    above_10 = np.nonzero(normalized >= 0.1)[0]
    above_90 = np.nonzero(normalized >= 0.9)[0]
    if above_10.size and above_90.size:
        rise_time = float(t[above_90[0]] - t[above_10[0]])

    settling_time = None
    outside = np.nonzero(np.abs(normalized - 1.0) > band)[0]
    if outside.size == 0:
        settling_time = float(t[0])
    elif outside[-1] + 1 < len(t):
        settling_time = float(t[outside[-1] + 1])

    return StepMetrics(
        overshoot_pct=overshoot,
        rise_time=rise_time,
        settling_time=settling_time,
        steady_state_error=final_window_mean(trace.e),
        final_mean_y=final_window_mean(y),
        itae=itae,
        isco=isco,
    )
