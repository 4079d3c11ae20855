"""Controllers that can be run closed-loop on the building environment."""

from __future__ import annotations

import numpy as np

from ..building_sim import EnvState
from ..ppo import PolicyValueNets

RULE_SETPOINT = 294.65  # 21.5 degC


def rule_based_step(state: EnvState, setpoint: float = RULE_SETPOINT) -> int:
    """Bang-bang: heat pump on strictly below the setpoint."""
    return 1 if state.zone_temp < setpoint else 0


def pi_step(state: EnvState, integral: float, target: float, kp: float, ki: float, dt_hours: float = 1.0,
            integral_limit: float = 5.0) -> tuple[int, float]:
    """One PI decision; returns (action, updated integral of the error in K*h).

    The integral is clamped to +-``integral_limit`` (anti-windup) and the
    continuous output is thresholded at 0.5.
    """
    error = target - state.zone_temp
    integral = float(np.clip(integral + error * dt_hours, -integral_limit, integral_limit))
    u = kp * error + ki * integral
    return (1 if u > 0.5 else 0), integral


class Controller:
    name = "controller"

    def reset(self) -> None:
        pass

    def act(self, state: EnvState) -> int:
        raise NotImplementedError


class RuleBased(Controller):
    name = "rule_based"

    def __init__(self, setpoint: float = RULE_SETPOINT):
        self.setpoint = setpoint

    def act(self, state):
        return rule_based_step(state, self.setpoint)


class PiController(Controller):
    name = "pi"

    def __init__(self, target: float, kp: float = 1.0, ki: float = 0.1, dt_hours: float = 1.0,
                 integral_limit: float = 5.0):
        self.target, self.kp, self.ki = target, kp, ki
        self.dt_hours = dt_hours
        self.integral_limit = integral_limit
        self.integral = 0.0

    def reset(self):
        self.integral = 0.0

    def act(self, state):
        a, self.integral = pi_step(state, self.integral, self.target, self.kp, self.ki, self.dt_hours,
                                   self.integral_limit)
        return a


class GreedyPolicy(Controller):
    """Trained PPO policy evaluated deterministically (argmax of the logits)."""

    name = "ppo"

    def __init__(self, nets: PolicyValueNets, name: str | None = None):
        self.nets = nets
        if name:
            self.name = name

    def act(self, state):
        return int(self.nets.greedy(state.as_array()[None, :])[0])


class ConstantController(Controller):
    def __init__(self, action: int):
        self.action = action
        self.name = f"always_{'on' if action else 'off'}"

    def act(self, state):
        return self.action
