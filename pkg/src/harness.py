"""
即時測試節點

以兩個程序透過 UDP 執行調整後的迴路：
- 受控體節點（主節點）：推進受控體、模擬兩個方向的網路損傷、每週期送出 TICK
- 控制器節點（從節點）：收到 TICK 才執行該週期的 PI 運算，並回覆 CONTROL

網路損傷只在軟體中模擬（於主節點內），實體 UDP 路徑視為近乎理想；
真實的遺失以保持上一個值處理並記錄為 miss。
"""

import logging
import socket
import time
from dataclasses import dataclass
from typing import Optional, Set, Tuple

from .channel import SENSOR_TO_CTRL, Packet, new_channel
from .config import NodeConfig
from .simulation import ControllerSide, EventLog, PlantSide, Trace
from .wire import Kind, WireError, WirePacket, decode_wire, encode_wire, tick_packet

logger = logging.getLogger(__name__)

RECV_SIZE = 2048
DONE_REPEATS = 3


class HandshakeError(TimeoutError):
    """同步逾時：對方節點在 sync_timeout 內沒有回應"""


@dataclass
class RtStats:
    """
    即時執行統計

    Attributes:
        periods (int): 完成的週期數
        misses (int): 逾時而保持上一個控制量的週期數
        late (int): 逾時之後才到達的 CONTROL（每個週期最多計一次）
        malformed (int): 格式錯誤的資料包
        discarded_ooo (int): 本節點亂序過濾丟棄的封包數
    """
    periods: int = 0
    misses: int = 0
    late: int = 0
    malformed: int = 0
    discarded_ooo: int = 0


class _UdpNode:
    """UDP 節點的共用部分：綁定、送出與帶期限的接收"""

    def __init__(self, cfg: NodeConfig):
        self.cfg = cfg
        self.peer = cfg.peer_address
        self.stats = RtStats()
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            self.sock.bind(cfg.bind_address)
        except OSError:
            self.sock.close()
            raise

    def close(self) -> None:
        self.sock.close()

    def send(self, pkt: WirePacket) -> None:
        try:
            self.sock.sendto(encode_wire(pkt), self.peer)
        except OSError as e:
            logger.warning(f"送出 {pkt.kind.name} seq={pkt.seq} 失敗: {e}")

    def receive(self, timeout: float) -> Optional[WirePacket]:
        """
        接收一個資料包

        Returns:
            Optional[WirePacket]: 逾時回傳 None；格式錯誤的資料包記錄後略過
        """
        deadline = time.monotonic() + timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            self.sock.settimeout(remaining)
            try:
                data, _ = self.sock.recvfrom(RECV_SIZE)
            except socket.timeout:
                return None
            except ConnectionRefusedError:
                continue
            try:
                return decode_wire(data)
            except WireError as e:
                self.stats.malformed += 1
                logger.warning(f"忽略格式錯誤的資料包（{e.reason}）: {e}")


class PlantNode(_UdpNode):
    """受控體（主節點）"""

    def __init__(self, cfg: NodeConfig):
        super().__init__(cfg)
        self.missed: Set[int] = set()

    def run(self) -> Tuple[Trace, EventLog]:
        """
        執行整個模擬時間

        Returns:
            Tuple[Trace, EventLog]: 本地記錄的軌跡與兩個通道的封包事件

        Raises:
            HandshakeError: 第一個週期在 sync_timeout 內沒有收到 CONTROL 時

        功能說明：
        - 每週期：致動、送出到期的 SENSOR、推入新量測、送出 TICK
        - 等待 CONTROL k（最多 sync_timeout），收到後送入 controller→actuator 通道
        - 逾時則保持上一個控制量並記錄 miss
        - 結束時送出 DONE
        """
        cfg = self.cfg
        sim = cfg.sim
        plant_side = PlantSide(cfg.plant, cfg.channel, sim)
        trace = Trace(Ts=sim.Ts, horizon=sim.horizon)
        div = sim.tick_divisor
        last = sim.n_periods * div
        u_last = 0.0
        start = time.monotonic()

        logger.info(f"受控體節點啟動：{cfg.bind} → {cfg.peer}，共 {sim.n_periods + 1} 個週期")
        try:
            for n in range(last + 1):
                plant_side.collect(n)
                if n % div == 0:
                    k = n // div
                    if cfg.pacing:
                        delay = start + k * sim.Ts - time.monotonic()
                        if delay > 0:
                            time.sleep(delay)

                    plant_side.actuate()
                    y = plant_side.y
                    for pkt in plant_side.take_sensor_arrivals():
                        self.send(WirePacket(kind=Kind.SENSOR, seq=pkt.seq, stamp=pkt.stamp, value=pkt.value))
                    plant_side.send_measurement(k, y)

                    u = self._exchange(k)
                    if u is None:
                        if k == 0:
                            raise HandshakeError(f"{cfg.sync_timeout} 秒內沒有收到控制器回應")
                        self.stats.misses += 1
                        self.missed.add(k)
                        logger.warning(f"週期 {k} 沒有收到 CONTROL，保持上一個控制量")
                        u = u_last
                    else:
                        plant_side.send_control(k, u)
                        u_last = u
                    self.stats.periods += 1

                    if not trace.record(k * sim.Ts, sim.setpoint, y, u, sim.divergence_limit):
                        break
                if n < last:
                    plant_side.advance()
        finally:
            for _ in range(DONE_REPEATS):
                self.send(WirePacket(kind=Kind.DONE, seq=self.stats.periods))
            self.stats.discarded_ooo = plant_side.ca.discarded
            self.close()

        logger.info(f"受控體節點完成：{self.stats.periods} 個週期、miss {self.stats.misses} 次、"
                    f"遲到 {self.stats.late} 次、格式錯誤 {self.stats.malformed} 次")
        return trace, plant_side.event_log()

    def _exchange(self, k: int) -> Optional[float]:
        """送出 TICK k 並等待 CONTROL k；等待期間定期重送 TICK"""
        cfg = self.cfg
        resend = min(0.05, cfg.sync_timeout / 10.0)
        deadline = time.monotonic() + cfg.sync_timeout
        tick = tick_packet(k)
        while True:
            self.send(tick)
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                return None
            pkt = self.receive(min(resend, remaining))
            while pkt is not None:
                if pkt.kind == Kind.CONTROL and pkt.seq == k:
                    return pkt.value
                if pkt.kind == Kind.CONTROL and pkt.seq in self.missed:
                    # 只計逾時且從未收到的週期；重送 TICK 引起的重複回覆不計
                    self.missed.discard(pkt.seq)
                    self.stats.late += 1
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                pkt = self.receive(min(resend, remaining))


class ControllerNode(_UdpNode):
    """控制器（從節點）"""

    def run(self) -> Trace:
        """
        依 TICK 逐週期執行 PI 運算直到收到 DONE

        Returns:
            Trace: 控制器看到的軌跡（y 欄為實際使用的量測值）

        Raises:
            HandshakeError: sync_timeout 內一個 TICK 都沒有收到時
        """
        cfg = self.cfg
        sim = cfg.sim
        channel = new_channel(SENSOR_TO_CTRL, sim.tick)
        controller = ControllerSide(cfg.gains, cfg.channel, sim, channel)
        trace = Trace(Ts=sim.Ts, horizon=sim.horizon)
        inbox = []
        last_tick = -1
        last_control: Optional[WirePacket] = None

        logger.info(f"控制器節點啟動：{cfg.bind} ← {cfg.peer}")
        try:
            while True:
                pkt = self.receive(cfg.sync_timeout)
                if pkt is None:
                    if last_tick < 0:
                        raise HandshakeError(f"{cfg.sync_timeout} 秒內沒有收到 TICK")
                    logger.warning(f"週期 {last_tick} 之後 {cfg.sync_timeout} 秒沒有 TICK，中止")
                    break

                if pkt.kind == Kind.SENSOR:
                    inbox.append(Packet(seq=pkt.seq, stamp=pkt.stamp, value=pkt.value))
                elif pkt.kind == Kind.TICK:
                    if pkt.seq < last_tick:
                        logger.debug(f"忽略過期的 TICK {pkt.seq}")
                        continue
                    if pkt.seq == last_tick:
                        # 重送的 TICK：再回覆一次同一個 CONTROL
                        if last_control is not None:
                            self.send(last_control)
                        continue
                    k = pkt.seq
                    last_tick = k
                    u, _ = controller.step(inbox)
                    inbox = []
                    last_control = WirePacket(kind=Kind.CONTROL, seq=k, stamp=k * sim.Ts, value=u)
                    self.send(last_control)
                    self.stats.periods += 1
                    if not trace.diverged:
                        trace.record(k * sim.Ts, sim.setpoint, controller.state.last_input, u, sim.divergence_limit)
                elif pkt.kind == Kind.DONE:
                    break
        finally:
            self.stats.discarded_ooo = channel.discarded
            self.close()

        logger.info(f"控制器節點完成：{self.stats.periods} 個週期，亂序丟棄 {channel.discarded} 個封包")
        return trace


def run_plant_node(cfg: NodeConfig) -> Tuple[Trace, EventLog]:
    """執行受控體（主節點）"""
    return PlantNode(cfg).run()


def run_controller_node(cfg: NodeConfig) -> Trace:
    """執行控制器（從節點）"""
    return ControllerNode(cfg).run()
