"""
離散時間並聯式 PI 控制器

每個控制週期執行一次 u = kp·e + ki·∫e dt，積分採後向歐拉法。
不含微分項、輸出飽和與抗積分飽和；致動器大小由目標函數中的 ISCO 項約束。
"""

from dataclasses import dataclass
from typing import Tuple

from .config import PiGains


@dataclass(frozen=True)
class PiState:
    """
    PI 控制器狀態

    Attributes:
        gains (PiGains): 控制器增益
        integral_accum (float): 累積的 ∫e dt
        last_input (float): 最近一次實際收到的量測值
    """
    gains: PiGains
    integral_accum: float = 0.0
    last_input: float = 0.0


def pi_step(state: PiState, e: float, Ts: float) -> Tuple[float, PiState]:
    """
    執行一次 PI 運算

    Args:
        state (PiState): 目前狀態
        e (float): 本週期誤差
        Ts (float): 控制週期（秒）

    Returns:
        Tuple[float, PiState]: 控制輸出 u 與新狀態
    """
    integral = state.integral_accum + e * Ts
    u = state.gains.kp * e + state.gains.ki * integral
    return u, PiState(gains=state.gains, integral_accum=integral, last_input=state.last_input)


def with_measurement(state: PiState, y_meas: float) -> PiState:
    """記錄新收到的量測值（沒有新封包時沿用 last_input）"""
    return PiState(gains=state.gains, integral_accum=state.integral_accum, last_input=y_meas)
