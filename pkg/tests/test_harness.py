"""
即時節點測試（本機 UDP）

以執行緒在 localhost 上啟動控制器節點，主執行緒執行受控體節點；
關閉牆鐘節拍 (pacing=False) 讓整段模擬以最快速度完成。

執行方式：pytest tests/test_harness.py
"""

import math
import socket
import threading

import pytest

from src.channel import CTRL_TO_ACT, SENSOR_TO_CTRL, channel_stats
from src.config import ChannelConfig, NodeConfig, PiGains, PlantParams, SimConfig
from src.controller import PiState, pi_step
from src.harness import ControllerNode, HandshakeError, PlantNode, run_plant_node
from src.simulation import run_closed_loop
from src.wire import Kind, WirePacket, decode_wire, encode_wire, tick_packet

GAINS = PiGains(kp=0.2, ki=0.1)
PLANT = PlantParams()


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def node_pair(sim: SimConfig, channel: ChannelConfig, timeout: float = 2.0):
    a, b = free_port(), free_port()
    while b == a:
        b = free_port()
    common = dict(plant=PLANT, gains=GAINS, sim=sim, channel=channel, sync_timeout=timeout, pacing=False)
    plant_cfg = NodeConfig(bind=f"127.0.0.1:{a}", peer=f"127.0.0.1:{b}", role="plant_master", **common)
    ctrl_cfg = NodeConfig(bind=f"127.0.0.1:{b}", peer=f"127.0.0.1:{a}", role="controller_slave", **common)
    return plant_cfg, ctrl_cfg


class Background(threading.Thread):
    """在背景執行節點並保存結果或例外"""

    def __init__(self, fn):
        super().__init__(daemon=True)
        self.fn = fn
        self.result = None
        self.error = None

    def run(self):
        try:
            self.result = self.fn()
        except Exception as e:
            self.error = e


def run_pair(sim: SimConfig, channel: ChannelConfig):
    plant_cfg, ctrl_cfg = node_pair(sim, channel)
    controller = ControllerNode(ctrl_cfg)
    background = Background(controller.run)
    background.start()
    plant = PlantNode(plant_cfg)
    trace, events = plant.run()
    background.join(timeout=10.0)
    assert background.error is None
    return trace, events, plant.stats, background.result


def test_loopback_without_impairment_matches_offline():
    sim = SimConfig(horizon=5.0, seed=3)
    trace, _, stats, ctrl_trace = run_pair(sim, ChannelConfig.ideal())
    offline, _ = run_closed_loop(PLANT, GAINS, ChannelConfig.ideal(), sim)
    assert stats.misses == 0
    assert trace == offline
    assert ctrl_trace.u == trace.u


def test_loopback_with_nominal_impairments():
    sim = SimConfig(horizon=30.0, seed=8)
    channel = ChannelConfig()
    trace, events, stats, _ = run_pair(sim, channel)
    assert len(trace) == sim.n_periods + 1
    assert stats.misses == 0

    p = channel.drop_prob
    for channel_id in (SENSOR_TO_CTRL, CTRL_TO_ACT):
        rate = channel_stats(events.for_channel(channel_id)).drop_rate
        n = sim.n_periods + 1
        assert abs(rate - p) <= 3.0 * math.sqrt(p * (1.0 - p) / n)

    offline, offline_events = run_closed_loop(PLANT, GAINS, channel, sim)
    assert trace == offline
    assert [(e.seq, e.dropped, e.delay) for e in events] == [(e.seq, e.dropped, e.delay) for e in offline_events]


def test_controller_absent():
    plant_cfg, _ = node_pair(SimConfig(horizon=1.0), ChannelConfig.ideal(), timeout=0.3)
    with pytest.raises(HandshakeError):
        run_plant_node(plant_cfg)


def test_two_masters_never_handshake():
    plant_cfg, other = node_pair(SimConfig(horizon=1.0), ChannelConfig.ideal(), timeout=0.3)
    second = NodeConfig(bind=other.bind, peer=other.peer, role="plant_master", plant=PLANT, gains=GAINS,
                        sim=other.sim, channel=other.channel, sync_timeout=0.3, pacing=False)
    background = Background(PlantNode(second).run)
    background.start()
    with pytest.raises(HandshakeError):
        PlantNode(plant_cfg).run()
    background.join(timeout=5.0)
    assert isinstance(background.error, HandshakeError)


def test_controller_without_tick():
    _, ctrl_cfg = node_pair(SimConfig(horizon=1.0), ChannelConfig.ideal(), timeout=0.3)
    with pytest.raises(HandshakeError):
        ControllerNode(ctrl_cfg).run()


def test_controller_protocol_script():
    """以手動送出的資料包驅動控制器：亂序、過期 TICK、沒有量測與格式錯誤的資料包"""
    plant_cfg, ctrl_cfg = node_pair(SimConfig(horizon=1.0), ChannelConfig.ideal())
    master = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    master.bind(plant_cfg.bind_address)
    master.settimeout(2.0)
    peer = ctrl_cfg.bind_address

    controller = ControllerNode(ctrl_cfg)
    background = Background(controller.run)
    background.start()

    def send(kind, seq, stamp=0.0, value=0.0):
        master.sendto(encode_wire(WirePacket(kind=kind, seq=seq, stamp=stamp, value=value)), peer)

    def exchange(k):
        master.sendto(encode_wire(tick_packet(k)), peer)
        reply = decode_wire(master.recvfrom(64)[0])
        assert reply.kind == Kind.CONTROL and reply.seq == k
        assert reply.stamp == pytest.approx(k * 0.1)
        return reply.value

    try:
        outputs = [exchange(0)]
        send(Kind.SENSOR, 0, 0.0, 0.5)
        outputs.append(exchange(1))
        send(Kind.SENSOR, 2, 0.2, 0.8)
        send(Kind.SENSOR, 1, 0.1, 0.6)
        outputs.append(exchange(2))
        send(Kind.SENSOR, 1, 0.1, 100.0)
        outputs.append(exchange(3))
        master.sendto(encode_wire(tick_packet(1)), peer)
        master.sendto(b"garbage", peer)
        outputs.append(exchange(4))
        for _ in range(3):
            send(Kind.DONE, 5)
    finally:
        background.join(timeout=5.0)
        master.close()

    assert background.error is None
    state = PiState(gains=GAINS)
    expected = []
    for y_meas in (0.0, 0.5, 0.8, 0.8, 0.8):
        u, state = pi_step(state, 1.0 - y_meas, 0.1)
        expected.append(u)
    assert outputs == expected
    assert background.result.y == [0.0, 0.5, 0.8, 0.8, 0.8]
    assert controller.stats.malformed == 1
    assert controller.stats.discarded_ooo == 2


def scripted_controller(sock: socket.socket, peer, skip: int) -> None:
    """每個 TICK 回覆兩次 CONTROL；週期 skip 不回覆，等下一個 TICK 才補送"""
    late_sent = False
    while True:
        pkt = decode_wire(sock.recvfrom(64)[0])
        if pkt.kind == Kind.DONE:
            return
        if pkt.kind != Kind.TICK or pkt.seq == skip:
            continue
        if pkt.seq > skip and not late_sent:
            sock.sendto(encode_wire(WirePacket(kind=Kind.CONTROL, seq=skip, stamp=skip * 0.1)), peer)
            late_sent = True
        reply = encode_wire(WirePacket(kind=Kind.CONTROL, seq=pkt.seq, stamp=pkt.seq * 0.1))
        sock.sendto(reply, peer)
        sock.sendto(reply, peer)


def test_late_counts_only_missed_periods():
    plant_cfg, ctrl_cfg = node_pair(SimConfig(horizon=0.5), ChannelConfig.ideal(), timeout=0.3)
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.bind(ctrl_cfg.bind_address)
    sock.settimeout(5.0)
    background = Background(lambda: scripted_controller(sock, plant_cfg.bind_address, skip=2))
    background.start()

    plant = PlantNode(plant_cfg)
    try:
        trace, _ = plant.run()
    finally:
        background.join(timeout=5.0)
        sock.close()

    assert background.error is None
    assert len(trace) == 6
    assert plant.stats.periods == 6
    assert plant.stats.misses == 1
    assert plant.stats.late == 1
