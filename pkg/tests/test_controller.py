"""
PI 控制器測試

執行方式：pytest tests/test_controller.py
"""

import pytest

from src.config import ConfigError, PiGains
from src.controller import PiState, pi_step, with_measurement


def run_errors(gains: PiGains, errors, Ts: float = 0.1):
    state = PiState(gains=gains)
    outputs = []
    for e in errors:
        u, state = pi_step(state, e, Ts)
        outputs.append(u)
    return outputs, state


def test_pure_proportional():
    outputs, state = run_errors(PiGains(kp=1.0, ki=0.0), [0.5])
    assert outputs == [0.5]
    assert state.integral_accum == pytest.approx(0.05)


def test_pure_integrator():
    outputs, _ = run_errors(PiGains(kp=0.0, ki=1.0), [1.0] * 5)
    for k, u in enumerate(outputs, start=1):
        assert u == pytest.approx(k * 0.1, abs=1e-12)


def test_hand_evaluated_sequence():
    outputs, _ = run_errors(PiGains(kp=2.0, ki=0.5), [1.0, 1.0, 1.0])
    assert outputs == pytest.approx([2.05, 2.10, 2.15], abs=1e-12)


def test_constant_error_closed_form():
    kp, ki, e0, Ts = 0.7, 0.3, 0.25, 0.1
    outputs, _ = run_errors(PiGains(kp=kp, ki=ki), [e0] * 20, Ts)
    for k, u in enumerate(outputs, start=1):
        assert u == pytest.approx(kp * e0 + ki * e0 * k * Ts, abs=1e-12)


def test_homogeneity():
    errors = [1.0, -0.5, 0.25, 2.0, 0.0]
    gains = PiGains(kp=1.3, ki=0.4)
    base, _ = run_errors(gains, errors)
    scaled, _ = run_errors(gains, [3.0 * e for e in errors])
    assert scaled == pytest.approx([3.0 * u for u in base], rel=1e-12, abs=1e-15)


def test_zero_gains_give_zero_output():
    outputs, _ = run_errors(PiGains(), [1.0, -2.0, 5.0])
    assert outputs == [0.0, 0.0, 0.0]


def test_state_is_immutable():
    state = PiState(gains=PiGains(kp=1.0, ki=1.0))
    _, new_state = pi_step(state, 1.0, 0.1)
    assert state.integral_accum == 0.0
    assert new_state is not state


def test_with_measurement_keeps_integral():
    state = PiState(gains=PiGains(kp=1.0, ki=1.0), integral_accum=0.3)
    updated = with_measurement(state, 0.8)
    assert updated.last_input == 0.8
    assert updated.integral_accum == 0.3


def test_non_finite_gains_rejected():
    with pytest.raises(ConfigError) as exc:
        PiGains(kp=float("nan"), ki=0.0)
    assert exc.value.field == "controller.kp"
