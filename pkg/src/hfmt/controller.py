"""Navigation state machine: follow the strip, act on boards, stop at the end.

The controller is a value: :func:`step` returns a new state and never
mutates its input, which keeps replays deterministic.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

from .fiducial import FiducialConfig, FiducialPattern, detect_fiducial
from .imaging import Image
from .path_tracker import (
    DEFAULT_CRUISE_V,
    STOP,
    SteeringCommand,
    SteeringGains,
    extract_path_mask,
    estimate_path,
    steering,
)

TURN_ANGLE = math.pi / 2
REACQUIRE_OFFSET = 0.3
REACQUIRE_TIMEOUT = 5.0


class Mode(enum.Enum):
    FOLLOWING = "Following"
    TURNING = "Turning"
    REACQUIRING = "Reacquiring"
    STOPPED = "Stopped"


class TurnDirection(enum.Enum):
    LEFT = 1
    RIGHT = -1


@dataclass(frozen=True)
class ControllerState:
    gains: SteeringGains
    turn_rate: float
    cooldown_frames: int = 30
    cruise_v: float = DEFAULT_CRUISE_V
    path_threshold: int = 128
    fiducial: FiducialConfig = FiducialConfig()

    mode: Mode = Mode.FOLLOWING
    turn_direction: TurnDirection | None = None
    turned_angle: float = 0.0
    reacquire_elapsed: float = 0.0
    terminals_seen: int = 0
    cooldown_remaining: int = 0
    lost_path: bool = False

    @property
    def reached_destination(self) -> bool:
        return self.mode is Mode.STOPPED and self.terminals_seen >= 2 and not self.lost_path


def new_controller(gains: SteeringGains = SteeringGains(), turn_rate: float = 1.0,
                   cooldown_frames: int = 30, **perception) -> ControllerState:
    """Fresh controller in Following mode.

    ``perception`` may override ``cruise_v``, ``path_threshold`` and ``fiducial``.
    """
    if not isinstance(gains, SteeringGains):
        raise ValueError("gains must be a SteeringGains instance")
    if not turn_rate > 0:
        raise ValueError(f"turn_rate must be positive, got {turn_rate}")
    if cooldown_frames < 0:
        raise ValueError("cooldown_frames must be >= 0")
    return ControllerState(gains=gains, turn_rate=float(turn_rate),
                           cooldown_frames=int(cooldown_frames), **perception)


def _follow_command(state: ControllerState, lower: Image) -> SteeringCommand:
    est = estimate_path(extract_path_mask(lower, state.path_threshold))
    return steering(est, state.gains, state.cruise_v)


def _spin(state: ControllerState) -> SteeringCommand:
    return SteeringCommand(0.0, state.turn_direction.value * state.turn_rate)


def step(state: ControllerState, lower: Image, upper: Image,
         dt: float) -> tuple[ControllerState, SteeringCommand]:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")

    if state.mode is Mode.STOPPED:
        return state, STOP

    if state.mode is Mode.TURNING:
        cmd = _spin(state)
        turned = state.turned_angle + state.turn_rate * dt
        if turned >= TURN_ANGLE:
            return replace(state, mode=Mode.REACQUIRING, turned_angle=0.0,
                           reacquire_elapsed=0.0), cmd
        return replace(state, turned_angle=turned), cmd

    if state.mode is Mode.REACQUIRING:
        est = estimate_path(extract_path_mask(lower, state.path_threshold))
        if est.valid and abs(est.offset) < REACQUIRE_OFFSET:
            new = replace(state, mode=Mode.FOLLOWING, turn_direction=None, reacquire_elapsed=0.0)
            return new, steering(est, state.gains, state.cruise_v)
        elapsed = state.reacquire_elapsed + dt
        if elapsed > REACQUIRE_TIMEOUT:
            return replace(state, mode=Mode.STOPPED, reacquire_elapsed=elapsed,
                           lost_path=True), STOP
        return replace(state, reacquire_elapsed=elapsed), _spin(state)

    # Following
    if state.cooldown_remaining > 0:
        state = replace(state, cooldown_remaining=state.cooldown_remaining - 1)
        return state, _follow_command(state, lower)

    pattern = detect_fiducial(upper, state.fiducial).pattern
    if pattern in (FiducialPattern.LEFT_TURN, FiducialPattern.RIGHT_TURN):
        direction = TurnDirection.LEFT if pattern is FiducialPattern.LEFT_TURN else TurnDirection.RIGHT
        return replace(state, mode=Mode.TURNING, turn_direction=direction, turned_angle=0.0,
                       cooldown_remaining=state.cooldown_frames), STOP
    if pattern is FiducialPattern.TERMINAL:
        seen = state.terminals_seen + 1
        if seen >= 2:
            return replace(state, mode=Mode.STOPPED, terminals_seen=seen), STOP
        state = replace(state, terminals_seen=seen, cooldown_remaining=state.cooldown_frames)
    return state, _follow_command(state, lower)
