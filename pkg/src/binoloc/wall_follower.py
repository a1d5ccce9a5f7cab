"""Two-mode boundary follower driven by a single binary sensor.

Mode SEARCH drives straight until the smoothed detection mean drops to 0.5,
then the controller switches (for good) to FOLLOW, which keeps the mean near
0.5 by steering on the detection error plus a periodic wiggle term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import IntEnum

from .motion import VelocityCommand


class Mode(IntEnum):
    SEARCH = 0
    FOLLOW = 1


@dataclass(frozen=True)
class WallFollowerParams:
    K: int = 100
    a_mu: float = 0.7
    a_v: float = 0.7
    v0: float = 0.3
    omega0: float = 0.6
    # lost-boundary supervisor: window in seconds (0 disables) and detection level
    watchdog_window: float = 10.0
    watchdog_level: float = 0.75

    def __post_init__(self):
        if int(self.K) != self.K or self.K <= 0:
            raise ValueError("K must be a positive integer")
        for key in ("a_mu", "a_v"):
            val = getattr(self, key)
            if not 0.0 < val < 1.0:
                raise ValueError(f"{key} must lie in (0, 1), got {val}")
        if self.v0 <= 0 or self.omega0 <= 0:
            raise ValueError("v0 and omega0 must be positive")
        if self.watchdog_window < 0:
            raise ValueError("watchdog_window must be >= 0")
        if not 0.5 < self.watchdog_level <= 1.0:
            raise ValueError("watchdog_level must lie in (0.5, 1]")


@dataclass(frozen=True)
class WallFollowerState:
    mode: Mode = Mode.SEARCH
    mu_d: float = 1.0
    v_rel: float = 0.0
    k: int = 0


def initial_state() -> WallFollowerState:
    return WallFollowerState()


def step(state: WallFollowerState, s: int, params: WallFollowerParams):
    """Advance the controller by one sensor reading.

    Returns the new state and the velocity command for this control step.
    """
    mu = params.a_mu * state.mu_d + (1.0 - params.a_mu) * s
    if state.mode == Mode.SEARCH:
        mode = Mode.SEARCH if mu > 0.5 else Mode.FOLLOW
        # the switching step still emits the last search command
        new = replace(state, mode=mode, mu_d=mu, k=state.k + 1)
        return new, VelocityCommand(params.v0, 0.0)

    d = 2.0 * (0.5 - mu)
    v_rel = params.a_v * state.v_rel + (1.0 - params.a_v) * (1.0 - abs(d))
    omega = 0.5 * (d + math.cos(2.0 * math.pi * state.k / params.K)) * params.omega0
    new = WallFollowerState(Mode.FOLLOW, mu, v_rel, state.k + 1)
    return new, VelocityCommand(v_rel * params.v0, omega)


class BoundaryWatchdog:
    """Detects a follower that switched modes without reaching the boundary.

    Two spurious zero readings can drop the detection mean below 0.5 while the
    robot is still deep inside the field; the follower then circles on the
    spot. On the boundary the raw detection rate averages 0.5, so a rate that
    stays above ``level`` for ``window`` steps means the boundary was lost and
    the controller should be restarted in search mode.
    """

    def __init__(self, window: int = 200, level: float = 0.75):
        self.window = int(window)
        self.level = level
        self._bits: list[int] = []
        self._sum = 0

    def reset(self) -> None:
        self._bits.clear()
        self._sum = 0

    def update(self, state: WallFollowerState, s: int) -> bool:
        """Feed one reading; True means the controller should be restarted."""
        if self.window <= 0 or state.mode != Mode.FOLLOW:
            return False
        self._bits.append(s)
        self._sum += s
        if len(self._bits) > self.window:
            self._sum -= self._bits.pop(0)
        if len(self._bits) == self.window and self._sum > self.level * self.window:
            self.reset()
            return True
        return False
