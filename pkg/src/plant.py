"""
FOPTD 受控體模組

以 tick 解析度積分一階加延遲時間 (First Order Plus Time Delay) 受控體：
- 一階落後以古典四階 Runge–Kutta 積分，步內輸入保持不變
- 延遲時間以 tick 解析度的環形緩衝區精確實現（不使用 Padé 近似）
- 提供解析步階響應作為測試基準
"""

import math
from dataclasses import dataclass, field
from typing import List

from .config import PlantParams, ConfigError, _is_multiple


class PlantError(ValueError):
    """受控體輸入錯誤（呼叫端的程式錯誤）"""


@dataclass
class PlantState:
    """
    受控體內部狀態

    Attributes:
        params (PlantParams): 受控體參數
        x (float): 一階落後的輸出（即受控體輸出 y）
        delay_line (List[float]): 長度 round(L / tick) 的輸入環形緩衝區
        head (int): 緩衝區中最舊樣本的位置
        t (float): 目前時間（秒）
        steps (int): 已積分的步數
    """
    params: PlantParams
    x: float = 0.0
    delay_line: List[float] = field(default_factory=list)
    head: int = 0
    t: float = 0.0
    steps: int = 0

    @property
    def y(self) -> float:
        return self.x


def delay_ticks(params: PlantParams, tick: float) -> int:
    """
    延遲時間對應的 tick 數

    Raises:
        ConfigError: L 不是 tick 的整數倍時
    """
    if not _is_multiple(params.L, tick):
        raise ConfigError("plant.L", f"延遲時間 {params.L} 必須是 tick={tick} 的整數倍")
    return int(round(params.L / tick))


def new_plant_state(params: PlantParams, tick: float) -> PlantState:
    """建立靜止狀態（x = 0、延遲線全為 0）的受控體"""
    return PlantState(params=params, delay_line=[0.0] * delay_ticks(params, tick))


def plant_step(state: PlantState, u: float, dt: float) -> PlantState:
    """
    推進受控體一個 tick

    Args:
        state (PlantState): 受控體狀態（原地更新）
        u (float): 本步的控制輸入
        dt (float): 步長，應等於 tick

    Returns:
        PlantState: 更新後的同一個狀態物件

    Raises:
        PlantError: u 不是有限值時

    功能說明：
    - 將 u 推入延遲線，取出 L 秒前的輸入 u_delayed
    - 以 RK4 積分 dx/dt = (K·u_delayed − x) / T，步內 u_delayed 保持不變
    """
    if not math.isfinite(u):
        raise PlantError(f"受控體輸入必須為有限值，收到 {u!r}（t={state.t}）")

    line = state.delay_line
    if line:
        u_delayed = line[state.head]
        line[state.head] = u
        state.head = (state.head + 1) % len(line)
    else:
        u_delayed = u

    K = state.params.K
    T = state.params.T
    x = state.x
    drive = K * u_delayed

    k1 = (drive - x) / T
    k2 = (drive - (x + 0.5 * dt * k1)) / T
    k3 = (drive - (x + 0.5 * dt * k2)) / T
    k4 = (drive - (x + dt * k3)) / T
    state.x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    state.steps += 1
    state.t = state.steps * dt
    return state


def foptd_step_analytic(params: PlantParams, t: float) -> float:
    """
    單位步階輸入下的解析響應

    t <= L 時為 0，否則為 K·(1 − e^{−(t−L)/T})。
    """
    if t <= params.L:
        return 0.0
    return params.K * (1.0 - math.exp(-(t - params.L) / params.T))
