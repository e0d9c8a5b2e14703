"""
模擬引擎測試

驗證取樣紀律、決定性、無損傷時與直接迴路逐位元相同，以及發散處理與亂序過濾在完整迴路中的表現。

執行方式：pytest tests/test_simulation.py
"""

import numpy as np
import pytest

from src.channel import CTRL_TO_ACT, SENSOR_TO_CTRL, Packet, channel_push, new_channel
from src.config import ChannelConfig, DelayModel, PiGains, PlantParams, SimConfig
from src.controller import PiState, pi_step
from src.rng import ACTUATOR_STREAM, SENSOR_STREAM, channel_stream
from src.simulation import run_closed_loop, run_direct_loop

PLANT = PlantParams()
NOMINAL = ChannelConfig()


def short_sim(**kwargs) -> SimConfig:
    values = {"horizon": 5.0}
    values.update(kwargs)
    return SimConfig(**values)


def test_row_count_and_spacing():
    sim = short_sim()
    trace, _ = run_closed_loop(PLANT, PiGains(kp=0.2, ki=0.1), NOMINAL, sim)
    assert len(trace) == sim.n_periods + 1 == 51
    assert trace.t == [k * sim.Ts for k in range(51)]
    for r, y, e in zip(trace.r, trace.y, trace.e):
        assert e == r - y


@pytest.mark.parametrize("channel_id, index", [(SENSOR_TO_CTRL, SENSOR_STREAM), (CTRL_TO_ACT, ACTUATOR_STREAM)])
def test_channels_draw_from_their_own_stream(channel_id, index):
    """每個通道的遺失與延遲只取決於自己的串流，可以單獨重播"""
    cfg = ChannelConfig(rng_stream=4)
    sim = short_sim(seed=21)
    _, events = run_closed_loop(PLANT, PiGains(kp=0.2, ki=0.1), cfg, sim)

    replay = new_channel(channel_id, sim.tick, channel_stream(sim.seed, cfg.rng_stream, index))
    for k in range(sim.n_periods + 1):
        channel_push(replay, cfg, Packet(seq=k, stamp=k * sim.Ts, value=0.0), k * sim.Ts)
    expected = [(ev.dropped, ev.delay) for ev in replay.events.values()]
    assert [(ev.dropped, ev.delay) for ev in events.for_channel(channel_id)] == expected


def test_event_seq_gap_free():
    sim = short_sim()
    _, events = run_closed_loop(PLANT, PiGains(kp=0.2, ki=0.1), NOMINAL, sim)
    for channel_id in (SENSOR_TO_CTRL, CTRL_TO_ACT):
        rows = events.for_channel(channel_id)
        assert [ev.seq for ev in rows] == list(range(sim.n_periods + 1))
        for ev in rows:
            assert not (ev.dropped and ev.delay is not None)


def test_deterministic():
    sim = short_sim(seed=42)
    a = run_closed_loop(PLANT, PiGains(kp=0.3, ki=0.2), NOMINAL, sim)
    b = run_closed_loop(PLANT, PiGains(kp=0.3, ki=0.2), NOMINAL, sim)
    assert a[0] == b[0]
    assert a[1] == b[1]


def test_seed_changes_realization():
    a, _ = run_closed_loop(PLANT, PiGains(kp=0.3, ki=0.2), NOMINAL, short_sim(seed=1))
    b, _ = run_closed_loop(PLANT, PiGains(kp=0.3, ki=0.2), NOMINAL, short_sim(seed=2))
    assert a.y != b.y


def test_zero_gains():
    trace, _ = run_closed_loop(PLANT, PiGains(), NOMINAL, short_sim())
    assert all(u == 0.0 for u in trace.u)
    assert all(y == 0.0 for y in trace.y)
    assert all(e == 1.0 for e in trace.e)


@pytest.mark.parametrize("kp, ki", [tuple(g) for g in np.random.default_rng(2024).uniform(0.0, 2.0, size=(5, 2))])
def test_zero_impairment_matches_direct_loop(kp, ki):
    sim = SimConfig(horizon=30.0, seed=123)
    gains = PiGains(kp=float(kp), ki=float(ki))
    networked, _ = run_closed_loop(PLANT, gains, ChannelConfig.ideal(), sim)
    direct = run_direct_loop(PLANT, gains, sim)
    assert networked == direct


def test_direct_loop_zero_gains():
    trace = run_direct_loop(PLANT, PiGains(), short_sim())
    assert all(y == 0.0 for y in trace.y)


def test_direct_loop_integral_action():
    trace = run_direct_loop(PLANT, PiGains(kp=0.1, ki=0.05), SimConfig(horizon=200.0))
    assert abs(trace.e[-1]) < 1e-3


def test_direct_loop_controller_sees_previous_sample():
    """控制器在 k 使用 y_{k-1}：以離線 PI 重放驗證"""
    gains = PiGains(kp=0.4, ki=0.3)
    sim = short_sim()
    trace = run_direct_loop(PLANT, gains, sim)
    state = PiState(gains=gains)
    y_prev = 0.0
    for y, u in zip(trace.y, trace.u):
        expected, state = pi_step(state, sim.setpoint - y_prev, sim.Ts)
        assert u == expected
        y_prev = y


def test_divergence_truncates_trace():
    sim = SimConfig(horizon=200.0)
    trace, _ = run_closed_loop(PLANT, PiGains(kp=2.0, ki=2.0), ChannelConfig.ideal(), sim)
    assert trace.diverged
    assert trace.t_diverged is not None and trace.t_diverged <= 200.0
    assert len(trace) < sim.n_periods + 1
    assert all(np.isfinite(trace.y)) and all(np.isfinite(trace.u))


def consumed_stamps(events, sim: SimConfig):
    """依使用時刻排列接收端實際採用的封包時間戳記"""
    div = sim.tick_divisor
    last_tick = sim.n_periods * div
    consumed = []
    for ev in events:
        if ev.dropped or ev.discarded_ooo:
            continue
        sent = int(round(ev.t_send / sim.tick))
        release = sent + int(round(ev.delay / sim.tick))
        if release <= last_tick:
            # 最早在下一個控制時刻才會被使用
            instant = max(-(-release // div), sent // div + 1)
            if instant <= sim.n_periods:
                consumed.append((instant, ev.t_send))
    consumed.sort()
    return consumed


def test_order_filter_keeps_stamps_increasing():
    """d_max = 3·Ts：接收端採用的時間戳記嚴格遞增，且確實發生亂序"""
    cfg = ChannelConfig(drop_prob=0.1, delay=DelayModel(kind="uniform", d_max=0.3))
    gains = PiGains(kp=0.2, ki=0.1)
    any_discard = False
    for seed in range(100):
        sim = SimConfig(horizon=10.0, seed=seed)
        _, events = run_closed_loop(PLANT, gains, cfg, sim)
        for channel_id in (SENSOR_TO_CTRL, CTRL_TO_ACT):
            rows = events.for_channel(channel_id)
            any_discard |= any(ev.discarded_ooo for ev in rows)
            consumed = consumed_stamps(rows, sim)
            instants = [k for k, _ in consumed]
            stamps = [s for _, s in consumed]
            assert len(set(instants)) == len(instants)
            assert all(a < b for a, b in zip(stamps, stamps[1:]))
    assert any_discard


def test_nominal_tracking():
    gains = PiGains(kp=0.2, ki=0.1)
    trace, _ = run_closed_loop(PLANT, gains, NOMINAL, SimConfig(horizon=30.0, seed=5))
    assert not trace.diverged
    tail = trace.y[-len(trace.y) // 5:]
    assert float(np.mean(tail)) == pytest.approx(1.0, abs=0.05)
