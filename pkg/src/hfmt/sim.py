"""Deterministic 2D testing field with a floor camera and a board camera.

World frame: x/y in meters, heading counter-clockwise from +x. The lower
camera is an orthographic top-down view whose image "up" is the robot's
forward direction. The upper camera either shows the face of the nearest
board in view or, with no board in range, a dark frame.
"""

from __future__ import annotations

import enum
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import controller as ctl
from .fiducial import FiducialPattern
from .imaging import Image, write_pnm
from .path_tracker import SteeringCommand

BOARD_PATTERNS = {
    "left": FiducialPattern.LEFT_TURN,
    "right": FiducialPattern.RIGHT_TURN,
    "terminal": FiducialPattern.TERMINAL,
}
BOARD_NAMES = {v: k for k, v in BOARD_PATTERNS.items()}
VIEW_HALF_ANGLE = math.radians(30.0)

# canonical dot layout: offsets from the frame center in units of frame width
PATTERN_RADIUS = 0.30  # vertices on a circle of diameter 60% of the frame
DOT_RADIUS = 0.06


def _canonical(pattern: FiducialPattern) -> np.ndarray:
    if pattern is FiducialPattern.LEFT_TURN:
        return np.zeros((1, 2))
    if pattern is FiducialPattern.RIGHT_TURN:
        angles = np.radians([-90.0, 30.0, 150.0])
    elif pattern is FiducialPattern.TERMINAL:
        angles = np.radians([45.0, 135.0, 225.0, 315.0])
    else:
        raise ValueError(f"no board layout for {pattern}")
    return PATTERN_RADIUS * np.column_stack([np.cos(angles), np.sin(angles)])


def normalize_angle(a: float) -> float:
    """Wrap into (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", normalize_angle(self.heading))


@dataclass(frozen=True)
class Board:
    position: tuple[float, float]
    facing: float  # heading of the board face normal, radians
    pattern: FiducialPattern
    trigger_distance: float = 0.5

    def __post_init__(self):
        if self.pattern not in BOARD_NAMES:
            raise ValueError(f"boards carry left/right/terminal patterns, not {self.pattern}")
        if not self.trigger_distance > 0:
            raise ValueError("trigger_distance must be positive")


@dataclass(frozen=True)
class World:
    path: tuple[tuple[float, float], ...]
    strip_width: float = 0.1
    boards: tuple[Board, ...] = ()
    floor_intensity: int = 40
    strip_intensity: int = 220
    noise_sigma: float = 0.0

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("path needs at least 2 waypoints")
        if not self.strip_width > 0:
            raise ValueError("strip_width must be positive")
        if not (0 <= self.floor_intensity <= 255 and 0 <= self.strip_intensity <= 255):
            raise ValueError("intensities must lie in 0..255")
        if not self.strip_intensity > self.floor_intensity + 50:
            raise ValueError("strip_intensity must exceed floor_intensity by more than 50")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class LowerCamera:
    view_width_m: float = 0.2
    view_height_m: float = 0.2
    px_w: int = 64
    px_h: int = 64
    # a short look-ahead keeps a coming corner out of view until its board fires
    forward_offset_m: float = 0.06


@dataclass(frozen=True)
class UpperCamera:
    px_w: int = 96
    px_h: int = 96


class Outcome(enum.Enum):
    REACHED_DESTINATION = "ReachedDestination"
    LOST_PATH = "LostPath"
    TIMEOUT = "Timeout"


@dataclass
class EpisodeReport:
    outcome: Outcome
    steps: int
    final_pose: Pose2D
    max_cross_track_error: float
    terminals_seen: int
    trajectory: list[Pose2D] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "outcome": self.outcome.value,
            "steps": self.steps,
            "final_pose": {"x": self.final_pose.x, "y": self.final_pose.y,
                           "heading": self.final_pose.heading},
            "max_cross_track_error": self.max_cross_track_error,
            "terminals_seen": self.terminals_seen,
        }
        return json.dumps(doc, sort_keys=True)


# --------------------------------------------------------------------- geometry

def distance_to_path(path: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each of ``points`` (N, 2) to the polyline ``path``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    best = np.full(len(pts), np.inf)
    for a, b in zip(path[:-1], path[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom == 0.0:
            d = np.hypot(*(pts - a).T)
        else:
            t = np.clip(((pts - a) @ ab) / denom, 0.0, 1.0)
            d = np.hypot(*(pts - (a + t[:, None] * ab)).T)
        np.minimum(best, d, out=best)
    return best


def _add_noise(values: np.ndarray, sigma: float, rng: np.random.Generator | None) -> Image:
    out = values.astype(float)
    if sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 needs a random generator")
        out = out + rng.normal(0.0, sigma, size=out.shape)
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _lower_grid(cam: LowerCamera) -> tuple[np.ndarray, np.ndarray]:
    # pixel centers; column -> lateral (right positive), row -> forward (top farthest)
    sx = cam.view_width_m / cam.px_w
    sy = cam.view_height_m / cam.px_h
    lateral = (np.arange(cam.px_w) - (cam.px_w - 1) / 2.0) * sx
    forward = cam.forward_offset_m - (np.arange(cam.px_h) - (cam.px_h - 1) / 2.0) * sy
    return np.meshgrid(lateral, forward)


def render_lower(world: World, pose: Pose2D, cam: LowerCamera = LowerCamera(),
                 rng: np.random.Generator | None = None) -> Image:
    lat, fwd = _lower_grid(cam)
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    # right of heading is (s, -c)
    wx = pose.x + fwd * c + lat * s
    wy = pose.y + fwd * s - lat * c
    pts = np.column_stack([wx.ravel(), wy.ravel()])
    on_strip = distance_to_path(np.asarray(world.path, dtype=float), pts) <= world.strip_width / 2
    values = np.where(on_strip, world.strip_intensity, world.floor_intensity).reshape(lat.shape)
    return _add_noise(values, world.noise_sigma, rng)


def visible_board(world: World, pose: Pose2D) -> Board | None:
    """Nearest board within its trigger distance and +-30 degrees of the heading."""
    best, best_d = None, math.inf
    for board in world.boards:
        dx, dy = board.position[0] - pose.x, board.position[1] - pose.y
        d = math.hypot(dx, dy)
        if d > board.trigger_distance:
            continue
        if d > 0 and abs(normalize_angle(math.atan2(dy, dx) - pose.heading)) > VIEW_HALF_ANGLE:
            continue
        if d < best_d:
            best, best_d = board, d
    return best


def render_board_face(pattern: FiducialPattern, px_w: int, px_h: int, rotation: float,
                      bright: int, dark: int) -> np.ndarray:
    """Noise-free board face filling the frame, dots rotated by ``rotation`` radians."""
    centers = _canonical(pattern)
    c, s = math.cos(rotation), math.sin(rotation)
    rot = np.array([[c, -s], [s, c]])
    centers = centers @ rot.T * px_w + np.array([(px_w - 1) / 2.0, (px_h - 1) / 2.0])
    r2 = (DOT_RADIUS * px_w) ** 2
    ys, xs = np.mgrid[0:px_h, 0:px_w]
    dots = np.zeros((px_h, px_w), dtype=bool)
    for cx, cy in centers:
        dots |= (xs - cx) ** 2 + (ys - cy) ** 2 <= r2
    return np.where(dots, dark, bright)


def render_upper(world: World, pose: Pose2D, cam: UpperCamera = UpperCamera(),
                 rng: np.random.Generator | None = None) -> Image:
    board = visible_board(world, pose)
    if board is None:
        values = np.full((cam.px_h, cam.px_w), world.floor_intensity)
    else:
        # zero when the robot looks straight at the board face
        rotation = normalize_angle(pose.heading - board.facing - math.pi)
        values = render_board_face(board.pattern, cam.px_w, cam.px_h, rotation,
                                   world.strip_intensity, world.floor_intensity)
    return _add_noise(values, world.noise_sigma, rng)


def advance(pose: Pose2D, cmd: SteeringCommand, dt: float) -> Pose2D:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    heading = normalize_angle(pose.heading + cmd.angular_velocity * dt)
    step = cmd.linear_velocity * dt
    return Pose2D(pose.x + step * math.cos(heading), pose.y + step * math.sin(heading), heading)


# ---------------------------------------------------------------------- episode

def start_pose(world: World) -> Pose2D:
    (x0, y0), (x1, y1) = world.path[0], world.path[1]
    return Pose2D(x0, y0, math.atan2(y1 - y0, x1 - x0))


def run_episode(world: World, controller: ctl.ControllerState | None = None, *,
                dt: float = 0.05, max_steps: int = 5000, seed: int = 0,
                lower_cam: LowerCamera = LowerCamera(), upper_cam: UpperCamera = UpperCamera(),
                dump_dir: str | os.PathLike | None = None,
                trajectory_stride: int = 1) -> EpisodeReport:
    """Close the loop render -> controller.step -> advance until stop or ``max_steps``."""
    state = controller if controller is not None else ctl.new_controller()
    rng = np.random.default_rng(seed)
    path = np.asarray(world.path, dtype=float)
    pose = start_pose(world)
    trajectory = [pose]
    max_xte = float(distance_to_path(path, [[pose.x, pose.y]])[0])
    if dump_dir is not None:
        os.makedirs(dump_dir, exist_ok=True)

    steps = 0
    for i in range(max_steps):
        lower = render_lower(world, pose, lower_cam, rng)
        upper = render_upper(world, pose, upper_cam, rng)
        if dump_dir is not None:
            write_pnm(os.path.join(dump_dir, f"lower_{i:06d}.pgm"), lower)
            write_pnm(os.path.join(dump_dir, f"upper_{i:06d}.pgm"), upper)
        state, cmd = ctl.step(state, lower, upper, dt)
        pose = advance(pose, cmd, dt)
        steps = i + 1
        max_xte = max(max_xte, float(distance_to_path(path, [[pose.x, pose.y]])[0]))
        if trajectory_stride and steps % trajectory_stride == 0:
            trajectory.append(pose)
        if state.mode is ctl.Mode.STOPPED:
            break

    if state.mode is ctl.Mode.STOPPED and state.lost_path:
        outcome = Outcome.LOST_PATH
    elif state.reached_destination:
        outcome = Outcome.REACHED_DESTINATION
    else:
        outcome = Outcome.TIMEOUT
    return EpisodeReport(outcome, steps, pose, max_xte, state.terminals_seen, trajectory)


# ------------------------------------------------------------------ world files

class WorldConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _number(doc: dict, key: str, default=None, kind=float):
    if key not in doc:
        if default is None:
            raise WorldConfigError(key, "missing required key")
        return default
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise WorldConfigError(key, f"expected a number, got {type(v).__name__}")
    if kind is int and int(v) != v:
        raise WorldConfigError(key, "expected an integer")
    return kind(v)


def _point(v, key: str) -> tuple[float, float]:
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in v)):
        raise WorldConfigError(key, f"expected [x, y], got {v!r}")
    return (float(v[0]), float(v[1]))


def world_from_dict(doc: Any) -> tuple[World, int]:
    """Build a world and its seed from a parsed JSON document.

    Keys starting with ``_`` are treated as comments and ignored.
    """
    if not isinstance(doc, dict):
        raise WorldConfigError("<root>", "expected a JSON object")
    known = {"path", "strip_width", "boards", "floor_intensity", "strip_intensity",
             "noise_sigma", "seed"}
    for key in doc:
        if key not in known and not key.startswith("_"):
            raise WorldConfigError(key, "unknown key")
    raw_path = doc.get("path")
    if not isinstance(raw_path, list):
        raise WorldConfigError("path", "expected an array of [x, y] points")
    path = tuple(_point(p, f"path[{i}]") for i, p in enumerate(raw_path))

    boards = []
    raw_boards = doc.get("boards", [])
    if not isinstance(raw_boards, list):
        raise WorldConfigError("boards", "expected an array")
    for i, b in enumerate(raw_boards):
        where = f"boards[{i}]"
        if not isinstance(b, dict):
            raise WorldConfigError(where, "expected an object")
        pattern = b.get("pattern")
        if pattern not in BOARD_PATTERNS:
            raise WorldConfigError(f"{where}.pattern", f"expected left/right/terminal, got {pattern!r}")
        if "pos" not in b:
            raise WorldConfigError(f"{where}.pos", "missing required key")
        try:
            boards.append(Board(
                position=_point(b["pos"], f"{where}.pos"),
                facing=_number(b, "facing_rad", 0.0),
                pattern=BOARD_PATTERNS[pattern],
                trigger_distance=_number(b, "trigger_m", 0.5),
            ))
        except WorldConfigError as exc:
            if exc.key.startswith(where):
                raise
            raise WorldConfigError(f"{where}.{exc.key}", str(exc).split(": ", 1)[1]) from None
        except ValueError as exc:
            raise WorldConfigError(where, str(exc)) from None

    fields = {
        "strip_width": _number(doc, "strip_width", 0.1),
        "floor_intensity": _number(doc, "floor_intensity", 40, int),
        "strip_intensity": _number(doc, "strip_intensity", 220, int),
        "noise_sigma": _number(doc, "noise_sigma", 0.0),
    }
    seed = _number(doc, "seed", 0, int)
    if len(path) < 2:
        raise WorldConfigError("path", "needs at least 2 waypoints")
    if not fields["strip_width"] > 0:
        raise WorldConfigError("strip_width", "must be positive")
    for key in ("floor_intensity", "strip_intensity"):
        if not 0 <= fields[key] <= 255:
            raise WorldConfigError(key, "must lie in 0..255")
    if not fields["strip_intensity"] > fields["floor_intensity"] + 50:
        raise WorldConfigError("strip_intensity", "must exceed floor_intensity by more than 50")
    if not fields["noise_sigma"] >= 0:
        raise WorldConfigError("noise_sigma", "must be >= 0")
    world = World(path=path, boards=tuple(boards), **fields)
    return world, seed


def load_world(text: str) -> tuple[World, int]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise WorldConfigError("<json>", f"invalid JSON at line {exc.lineno} column {exc.colno}") from None
    return world_from_dict(doc)


def world_to_dict(world: World, seed: int = 0) -> dict:
    return {
        "path": [list(p) for p in world.path],
        "strip_width": world.strip_width,
        "boards": [
            {"pos": list(b.position), "facing_rad": b.facing,
             "pattern": BOARD_NAMES[b.pattern], "trigger_m": b.trigger_distance}
            for b in world.boards
        ],
        "floor_intensity": world.floor_intensity,
        "strip_intensity": world.strip_intensity,
        "noise_sigma": world.noise_sigma,
        "seed": seed,
    }


def default_world_path() -> str:
    return os.path.join(os.path.dirname(__file__), "data", "default_world.json")


def default_world() -> tuple[World, int]:
    """Start board, right turn, left turn, destination board on three 3 m segments."""
    with open(default_world_path(), encoding="utf-8") as fh:
        return load_world(fh.read())
