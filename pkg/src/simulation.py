"""
混合系統模擬引擎

以固定 tick 推進連續時間受控體，每個控制週期取樣與致動一次，
並讓封包經過兩個獨立的網路通道：
- sensor→controller (τ^SC)
- controller→actuator (τ^CA)

每個控制時刻 k（tick n = k·tick_divisor）的處理順序：
1. 收集到期的通道封包（每個 tick 都會收集）
2. 致動器經亂序過濾取最新控制量，沒有新封包則保持
3. 感測器取樣 y_k 並送入 sensor→controller 通道
4. 控制器經亂序過濾取最新量測（沒有則沿用上一筆），執行 PI 運算後送出 u_k
5. 記錄軌跡列 (t_k, r, y_k, u_k, r − y_k)
6. 受控體以致動器的輸入積分 tick_divisor 步（最後一列之後不再積分）

因此在時刻 k 送出的封包最早在 k+1 才能被接收端使用。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .channel import (
    CHANNEL_IDS,
    CTRL_TO_ACT,
    SENSOR_TO_CTRL,
    ChannelEvent,
    ChannelState,
    Packet,
    channel_push,
    channel_tick,
    new_channel,
    ooo_filter,
)
from .config import ChannelConfig, PiGains, PlantParams, SimConfig
from .controller import PiState, pi_step, with_measurement
from .plant import new_plant_state, plant_step
from .rng import ACTUATOR_STREAM, SENSOR_STREAM, channel_stream

logger = logging.getLogger(__name__)


@dataclass
class Trace:
    """
    閉迴路軌跡，每個控制週期一列

    Attributes:
        Ts (float): 取樣週期
        horizon (float): 預定的模擬時間
        t, r, y, u, e (List[float]): 各欄位（e = r − y）
        diverged (bool): 是否因發散而提早結束
        t_diverged (Optional[float]): 偵測到發散的時間
    """
    Ts: float
    horizon: float
    t: List[float] = field(default_factory=list)
    r: List[float] = field(default_factory=list)
    y: List[float] = field(default_factory=list)
    u: List[float] = field(default_factory=list)
    e: List[float] = field(default_factory=list)
    diverged: bool = False
    t_diverged: Optional[float] = None

    def __len__(self) -> int:
        return len(self.t)

    def rows(self) -> Iterator[Tuple[float, float, float, float, float]]:
        return zip(self.t, self.r, self.y, self.u, self.e)

    def record(self, t: float, r: float, y: float, u: float, limit: float = math.inf) -> bool:
        """
        新增一列；若 y 或 u 非有限值或超過 limit，標記發散並回傳 False

        發散的數值不會寫入軌跡。
        """
        if not (math.isfinite(y) and math.isfinite(u)) or abs(y) > limit or abs(u) > limit:
            self.diverged = True
            self.t_diverged = t
            logger.warning(f"閉迴路在 t={t} 發散（y={y!r}, u={u!r}），軌跡截斷")
            return False
        self.t.append(t)
        self.r.append(r)
        self.y.append(y)
        self.u.append(u)
        self.e.append(r - y)
        return True


@dataclass
class EventLog:
    """每個封包在兩個通道中的事件紀錄，依 (seq, 通道) 排序"""
    rows: List[ChannelEvent] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[ChannelEvent]:
        return iter(self.rows)

    def for_channel(self, channel_id: str) -> List[ChannelEvent]:
        return [row for row in self.rows if row.channel_id == channel_id]

    @classmethod
    def from_channels(cls, *channels: ChannelState) -> "EventLog":
        order = {cid: i for i, cid in enumerate(CHANNEL_IDS)}
        rows = [event for ch in channels for event in ch.events.values()]
        rows.sort(key=lambda ev: (ev.seq, order[ev.channel_id]))
        return cls(rows=rows)


class PlantSide:
    """
    受控體端：受控體、兩個通道的損傷模擬與致動器零階保持

    離線模擬與即時主節點共用此類別，確保兩者的封包路徑完全一致。
    """

    def __init__(self, plant: PlantParams, chan_cfg: ChannelConfig, sim: SimConfig):
        self.sim = sim
        self.chan_cfg = chan_cfg
        self.tick = sim.tick
        self.plant = new_plant_state(plant, self.tick)
        self.sc = new_channel(SENSOR_TO_CTRL, self.tick, channel_stream(sim.seed, chan_cfg.rng_stream, SENSOR_STREAM))
        self.ca = new_channel(CTRL_TO_ACT, self.tick, channel_stream(sim.seed, chan_cfg.rng_stream, ACTUATOR_STREAM))
        self.sc_arrivals: List[Packet] = []
        self.ca_arrivals: List[Packet] = []
        self.u_applied = 0.0

    @property
    def y(self) -> float:
        return self.plant.x

    def collect(self, n: int) -> None:
        """收集 tick n 到期的封包"""
        now = n * self.tick
        released, _ = channel_tick(self.sc, now)
        self.sc_arrivals.extend(released)
        released, _ = channel_tick(self.ca, now)
        self.ca_arrivals.extend(released)

    def actuate(self) -> float:
        """致動器取最新的控制封包；沒有新封包時保持上一個值"""
        pkt = ooo_filter(self.ca, self.chan_cfg, self.ca_arrivals)
        self.ca_arrivals = []
        if pkt is not None:
            self.u_applied = pkt.value
        return self.u_applied

    def send_measurement(self, k: int, y: float) -> None:
        t_k = k * self.sim.Ts
        channel_push(self.sc, self.chan_cfg, Packet(seq=k, stamp=t_k, value=y), t_k)

    def take_sensor_arrivals(self) -> List[Packet]:
        arrivals, self.sc_arrivals = self.sc_arrivals, []
        return arrivals

    def send_control(self, k: int, u: float) -> None:
        t_k = k * self.sim.Ts
        channel_push(self.ca, self.chan_cfg, Packet(seq=k, stamp=t_k, value=u), t_k)

    def advance(self) -> None:
        """以目前致動量積分一個 tick"""
        plant_step(self.plant, self.u_applied, self.tick)

    def event_log(self) -> EventLog:
        return EventLog.from_channels(self.sc, self.ca)


class ControllerSide:
    """控制器端：sensor→controller 的亂序過濾與 PI 運算"""

    def __init__(self, gains: PiGains, chan_cfg: ChannelConfig, sim: SimConfig, channel: ChannelState):
        self.chan_cfg = chan_cfg
        self.sim = sim
        self.channel = channel
        self.state = PiState(gains=gains)

    def step(self, arrivals: List[Packet]) -> Tuple[float, float]:
        """
        執行一個控制週期

        Returns:
            Tuple[float, float]: 控制輸出 u 與控制器看到的誤差 e
        """
        pkt = ooo_filter(self.channel, self.chan_cfg, arrivals)
        if pkt is not None:
            self.state = with_measurement(self.state, pkt.value)
        e = self.sim.setpoint - self.state.last_input
        u, self.state = pi_step(self.state, e, self.sim.Ts)
        return u, e


def run_closed_loop(plant: PlantParams, gains: PiGains, chan_cfg: ChannelConfig,
                    sim: SimConfig) -> Tuple[Trace, EventLog]:
    """
    執行經網路閉合的 PI 迴路

    Args:
        plant (PlantParams): 受控體參數（L 必須是 tick 的整數倍）
        gains (PiGains): 控制器增益
        chan_cfg (ChannelConfig): 兩個通道共用的損傷配置
        sim (SimConfig): 模擬配置（seed 決定兩個通道的亂數串流）

    Returns:
        Tuple[Trace, EventLog]: 軌跡與封包事件紀錄；發散時軌跡在發散點截斷

    Raises:
        ConfigError: L 不是 tick 的整數倍時
    """
    plant_side = PlantSide(plant, chan_cfg, sim)
    controller = ControllerSide(gains, chan_cfg, sim, plant_side.sc)
    trace = Trace(Ts=sim.Ts, horizon=sim.horizon)

    div = sim.tick_divisor
    last = sim.n_periods * div
    for n in range(last + 1):
        plant_side.collect(n)
        if n % div == 0:
            k = n // div
            plant_side.actuate()
            y = plant_side.y
            plant_side.send_measurement(k, y)
            u, _ = controller.step(plant_side.take_sensor_arrivals())
            plant_side.send_control(k, u)
            if not trace.record(k * sim.Ts, sim.setpoint, y, u, sim.divergence_limit):
                break
        if n < last:
            plant_side.advance()

    events = plant_side.event_log()
    logger.debug(f"閉迴路模擬完成：{len(trace)} 列、{len(events)} 筆封包事件、seed={sim.seed}")
    return trace, events


def run_direct_loop(plant: PlantParams, gains: PiGains, sim: SimConfig) -> Trace:
    """
    不經網路的參考迴路

    保留與通道相同的最小傳輸延遲：控制器使用上一週期的量測 y_{k−1}，
    致動器套用上一週期的控制量 u_{k−1}（初始皆為 0）。
    無損傷時與 run_closed_loop 逐位元相同。
    """
    tick = sim.tick
    state = new_plant_state(plant, tick)
    pi = PiState(gains=gains)
    trace = Trace(Ts=sim.Ts, horizon=sim.horizon)

    y_prev = 0.0
    u_prev = 0.0
    u_applied = 0.0
    div = sim.tick_divisor
    last = sim.n_periods * div
    for n in range(last + 1):
        if n % div == 0:
            k = n // div
            u_applied = u_prev
            y = state.x
            pi = with_measurement(pi, y_prev)
            u, pi = pi_step(pi, sim.setpoint - pi.last_input, sim.Ts)
            y_prev, u_prev = y, u
            if not trace.record(k * sim.Ts, sim.setpoint, y, u, sim.divergence_limit):
                break
        if n < last:
            plant_step(state, u_applied, tick)
    return trace
