"""
網路通道模組

以離散時間重新實作三個網路損傷區塊，依序為：
1. 封包遺失：每個封包以 drop_prob 的機率被丟棄
2. 隨機延遲：依延遲模型抽樣，向上量化到 tick，封包暫存到釋放時間
3. 亂序移除：接收端只輸出時間戳記比上一個已輸出封包更新的最新封包

延遲以 tick（控制週期的 1/tick_divisor）為解析度，延遲上限可大於控制週期，
因此同一個 tick 可能釋放多個封包，亂序就是這樣產生的。
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from .config import ChannelConfig, DelayModel

logger = logging.getLogger(__name__)

SENSOR_TO_CTRL = "sensor_to_ctrl"
CTRL_TO_ACT = "ctrl_to_act"
CHANNEL_IDS = (SENSOR_TO_CTRL, CTRL_TO_ACT)


class ChannelError(ValueError):
    """通道使用錯誤（呼叫端的程式錯誤）"""


@dataclass(frozen=True)
class Packet:
    """
    網路封包

    Attributes:
        seq (int): 發送端遞增的序號
        stamp (float): 發送時間戳記（秒）
        value (float): 量測值或控制量
    """
    seq: int
    stamp: float
    value: float


@dataclass
class ChannelEvent:
    """單一封包在通道中的事件紀錄（對應事件日誌的一列）"""
    seq: int
    channel_id: str
    t_send: float
    delay: Optional[float] = None
    dropped: bool = False
    discarded_ooo: bool = False


@dataclass
class ChannelState:
    """
    通道狀態

    Attributes:
        channel_id (str): sensor_to_ctrl 或 ctrl_to_act
        tick (float): 時間解析度（秒）
        rng (np.random.Generator): 本通道專屬的亂數串流
        in_flight (list): (釋放 tick, seq, 封包) 的最小堆積
        ooo_buffer (List[Packet]): 接收端本週期到達封包的暫存區（ooo_filter 結束時清空）
        last_passed_stamp (float): 已輸出封包的最大時間戳記，只增不減
        events (Dict[int, ChannelEvent]): 依 seq 索引的事件紀錄
        discarded (int): 亂序過濾丟棄的封包數
    """
    channel_id: str
    tick: float
    rng: Optional[np.random.Generator] = None
    in_flight: List[Tuple[int, int, Packet]] = field(default_factory=list)
    ooo_buffer: List[Packet] = field(default_factory=list)
    last_passed_stamp: float = -math.inf
    events: Dict[int, ChannelEvent] = field(default_factory=dict)
    discarded: int = 0


def new_channel(channel_id: str, tick: float, rng: Optional[np.random.Generator] = None) -> ChannelState:
    """
    初始化通道（清空延遲佇列、亂序緩衝區與計數器）

    只做接收端亂序過濾的通道（例如即時控制器節點）可以不給 rng。
    """
    if channel_id not in CHANNEL_IDS:
        raise ChannelError(f"未知的通道: {channel_id}")
    return ChannelState(channel_id=channel_id, tick=tick, rng=rng)


def _to_tick(seconds: float, tick: float) -> int:
    return int(round(seconds / tick))


def draw_delay_ticks(model: DelayModel, rng: np.random.Generator, tick: float) -> int:
    """
    依延遲模型抽樣一個延遲，向上量化到 tick

    Returns:
        int: 延遲的 tick 數，介於 [0, floor(d_max / tick)]
    """
    d_max = model.d_max
    if model.kind == "constant":
        d = model.params.get("value", 0.0)
    elif model.kind == "uniform":
        low, high = model.bounds()
        d = float(rng.uniform(low, high))
    else:
        if d_max <= 0:
            d = 0.0
        else:
            # 反函數抽樣，直接落在 [0, d_max]
            mean = model.mean()
            u = float(rng.random())
            d = -mean * math.log1p(-u * -math.expm1(-d_max / mean))

    cap = int(math.floor(d_max / tick + 1e-9))
    n = int(math.ceil(d / tick - 1e-9))
    return min(max(n, 0), cap)


def channel_push(state: ChannelState, cfg: ChannelConfig, pkt: Packet, now: float) -> ChannelState:
    """
    將封包送入通道

    Args:
        state (ChannelState): 通道狀態（原地更新）
        cfg (ChannelConfig): 通道配置
        pkt (Packet): 發送的封包，stamp 應等於 now
        now (float): 目前時間（秒），為控制週期的整數倍

    Returns:
        ChannelState: 更新後的同一個狀態物件

    Raises:
        ChannelError: 序號重複時

    功能說明：
    - 以 drop_prob 的機率丟棄封包並記錄 dropped=True
    - 否則抽樣延遲 d（量化到 tick），以 release = now + d 放入延遲佇列
    """
    if pkt.seq in state.events:
        raise ChannelError(f"{state.channel_id} 的序號重複: {pkt.seq}")
    if state.rng is None:
        raise ChannelError(f"{state.channel_id} 沒有亂數串流，無法送出封包")

    event = ChannelEvent(seq=pkt.seq, channel_id=state.channel_id, t_send=now)
    state.events[pkt.seq] = event

    if float(state.rng.random()) < cfg.drop_prob:
        event.dropped = True
        logger.debug(f"{state.channel_id} 封包遺失 seq={pkt.seq} t={now}")
        return state

    n_delay = draw_delay_ticks(cfg.delay, state.rng, state.tick)
    event.delay = n_delay * state.tick
    release = _to_tick(now, state.tick) + n_delay
    heapq.heappush(state.in_flight, (release, pkt.seq, pkt))
    return state


def channel_tick(state: ChannelState, now: float) -> Tuple[List[Packet], ChannelState]:
    """
    釋放所有到期的封包

    Args:
        state (ChannelState): 通道狀態（原地更新）
        now (float): 目前時間（秒），每個 tick 呼叫一次且遞增

    Returns:
        Tuple[List[Packet], ChannelState]: 依釋放順序排列的封包與狀態
    """
    now_tick = _to_tick(now, state.tick)
    released = []
    while state.in_flight and state.in_flight[0][0] <= now_tick:
        _, _, pkt = heapq.heappop(state.in_flight)
        released.append(pkt)
    return released, state


def _discard(state: ChannelState, pkt: Packet) -> None:
    state.discarded += 1
    event = state.events.get(pkt.seq)
    if event is not None:
        event.discarded_ooo = True
    logger.debug(f"{state.channel_id} 丟棄過期封包 seq={pkt.seq} stamp={pkt.stamp}")


def ooo_filter(state: ChannelState, cfg: ChannelConfig, arrivals: Iterable[Packet] = ()) -> Optional[Packet]:
    """
    接收端亂序過濾（每個控制週期呼叫一次）

    Args:
        state (ChannelState): 通道狀態（原地更新）
        cfg (ChannelConfig): 通道配置（使用 ooo_buffer_cap）
        arrivals (Iterable[Packet]): 本週期到達的封包

    Returns:
        Optional[Packet]: 時間戳記最大且大於 last_passed_stamp 的封包；沒有則為 None

    功能說明：
    - 緩衝區只暫存本週期到達的封包，呼叫結束時一定清空；
      跨週期的歷史只由 last_passed_stamp 保存，因此 ooo_buffer_cap 限制的是單一週期的到達數
    - 將到達封包存入緩衝區，超過容量時逐出最舊的封包
    - 輸出時間戳記最新的封包並更新 last_passed_stamp
    - 其餘封包（較舊或已過期）一律丟棄並記錄 discarded_ooo=True
    """
    buffer = state.ooo_buffer
    for pkt in arrivals:
        buffer.append(pkt)
        if len(buffer) > cfg.ooo_buffer_cap:
            oldest = min(buffer, key=lambda p: p.stamp)
            buffer.remove(oldest)
            _discard(state, oldest)

    if not buffer:
        return None

    newest = max(buffer, key=lambda p: p.stamp)
    chosen = newest if newest.stamp > state.last_passed_stamp else None
    for pkt in buffer:
        if pkt is not chosen:
            _discard(state, pkt)
    buffer.clear()

    if chosen is not None:
        state.last_passed_stamp = chosen.stamp
    return chosen


@dataclass
class ChannelStats:
    """通道統計摘要"""
    sent: int
    dropped: int
    discarded_ooo: int
    drop_rate: float
    mean_delay: Optional[float]
    max_delay: Optional[float]


def channel_stats(events: Iterable[ChannelEvent]) -> ChannelStats:
    """計算一組事件紀錄的遺失率與延遲統計"""
    events = list(events)
    sent = len(events)
    dropped = sum(1 for e in events if e.dropped)
    delays = [e.delay for e in events if e.delay is not None]
    return ChannelStats(
        sent=sent,
        dropped=dropped,
        discarded_ooo=sum(1 for e in events if e.discarded_ooo),
        drop_rate=dropped / sent if sent else 0.0,
        mean_delay=float(np.mean(delays)) if delays else None,
        max_delay=max(delays) if delays else None,
    )
