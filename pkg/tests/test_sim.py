import json
import math
import os

import numpy as np
import pytest

from hfmt import sim
from hfmt.fiducial import FiducialPattern as FP, detect_fiducial
from hfmt.imaging import read_pnm
from hfmt.path_tracker import SteeringCommand, track_frame


def straight_world(**kw):
    return sim.World(path=((0.0, 0.0), (5.0, 0.0)), **kw)


class TestRenderLower:
    def test_centered_closure(self):
        est = track_frame(sim.render_lower(straight_world(), sim.Pose2D(1.0, 0.0, 0.0)))
        assert est.valid
        assert abs(est.offset) <= 0.05 and abs(est.gradient) <= 0.05

    def test_displaced_right_sees_strip_left(self):
        # heading +x, so the robot's right is -y
        est = track_frame(sim.render_lower(straight_world(), sim.Pose2D(1.0, -0.04, 0.0)))
        assert est.valid and est.offset < 0

    def test_heading_error_gives_gradient(self):
        # robot points left of the path, so the strip leans right in the image
        est = track_frame(sim.render_lower(straight_world(), sim.Pose2D(1.0, 0.0, 0.2)))
        assert est.gradient == pytest.approx(0.2, abs=0.05)

    def test_determinism(self):
        w = straight_world(noise_sigma=5.0)
        pose = sim.Pose2D(1.0, 0.01, 0.1)
        a = sim.render_lower(w, pose, rng=np.random.default_rng(3))
        b = sim.render_lower(w, pose, rng=np.random.default_rng(3))
        assert a == b
        quiet = straight_world()
        assert sim.render_lower(quiet, pose) == sim.render_lower(quiet, pose)

    def test_intensities(self):
        img = sim.render_lower(straight_world(), sim.Pose2D(1.0, 0.0, 0.0))
        assert set(np.unique(img.pixels)) == {40, 220}

    @pytest.mark.parametrize("heading", [0.0, math.pi / 2, -math.pi / 2, math.pi, 2.0])
    def test_closure_any_direction(self, heading):
        d = (math.cos(heading), math.sin(heading))
        w = sim.World(path=((-2 * d[0], -2 * d[1]), (2 * d[0], 2 * d[1])))
        est = track_frame(sim.render_lower(w, sim.Pose2D(0.0, 0.0, heading)))
        assert est.valid and abs(est.offset) <= 0.05 and abs(est.gradient) <= 0.05


class TestRenderUpper:
    def test_no_board(self):
        img = sim.render_upper(straight_world(), sim.Pose2D(0, 0, 0))
        assert (img.pixels == 40).all()

    def test_terminal_closure(self):
        b = sim.Board((0.3, 0.0), math.pi, FP.TERMINAL, 0.5)
        w = straight_world(boards=(b,), noise_sigma=4.0)
        img = sim.render_upper(w, sim.Pose2D(0, 0, 0.2), rng=np.random.default_rng(0))
        assert detect_fiducial(img).pattern is FP.TERMINAL

    def test_nearest_board_wins(self):
        near = sim.Board((0.3, 0.0), math.pi, FP.LEFT_TURN, 0.5)
        far = sim.Board((0.45, 0.0), math.pi, FP.RIGHT_TURN, 0.5)
        w = straight_world(boards=(far, near))
        assert detect_fiducial(sim.render_upper(w, sim.Pose2D(0, 0, 0))).pattern is FP.LEFT_TURN

    def test_bearing_gate(self):
        b = sim.Board((0.0, 0.3), math.pi, FP.LEFT_TURN, 0.5)
        w = straight_world(boards=(b,))
        assert sim.visible_board(w, sim.Pose2D(0, 0, 0)) is None
        assert sim.visible_board(w, sim.Pose2D(0, 0, math.pi / 2)) is b

    def test_distance_gate(self):
        b = sim.Board((0.6, 0.0), math.pi, FP.LEFT_TURN, 0.5)
        assert sim.visible_board(straight_world(boards=(b,)), sim.Pose2D(0, 0, 0)) is None


class TestAdvance:
    def test_identity(self):
        p = sim.Pose2D(1.0, 2.0, 0.3)
        assert sim.advance(p, SteeringCommand(0, 0), 0.1) == p

    def test_straight(self):
        p = sim.advance(sim.Pose2D(0, 0, 0), SteeringCommand(1.0, 0.0), 1.0)
        assert (p.x, p.y, p.heading) == (1.0, 0.0, 0.0)

    def test_wrap(self):
        p = sim.advance(sim.Pose2D(0, 0, math.pi / 2), SteeringCommand(0.0, math.pi), 1.0)
        assert p.heading == pytest.approx(-math.pi / 2)

    def test_normalize_range(self):
        assert sim.normalize_angle(-math.pi) == math.pi
        assert sim.normalize_angle(3 * math.pi) == pytest.approx(math.pi)
        assert sim.normalize_angle(7.0) == pytest.approx(7.0 - 2 * math.pi)

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            sim.advance(sim.Pose2D(0, 0, 0), SteeringCommand(1, 0), 0)

    def test_displacement_bound(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            v, w, dt = rng.uniform(0, 1), rng.uniform(-2, 2), rng.uniform(0.01, 0.2)
            p0 = sim.Pose2D(*rng.normal(size=2), rng.uniform(-3, 3))
            p1 = sim.advance(p0, SteeringCommand(v, w), dt)
            assert math.hypot(p1.x - p0.x, p1.y - p0.y) <= v * dt + 1e-12


class TestWorldConfig:
    def test_default_loads(self):
        world, seed = sim.default_world()
        assert len(world.path) == 4 and len(world.boards) == 4 and world.noise_sigma == 4.0
        assert [b.pattern for b in world.boards] == [FP.TERMINAL, FP.RIGHT_TURN, FP.LEFT_TURN, FP.TERMINAL]

    def test_round_trip(self):
        world, seed = sim.default_world()
        again, seed2 = sim.world_from_dict(json.loads(json.dumps(sim.world_to_dict(world, seed))))
        assert again == world and seed2 == seed

    @pytest.mark.parametrize("doc, key", [
        ({"path": [[0, 0]]}, "path"),
        ({"path": [[0, 0], [1]]}, "path[1]"),
        ({"path": [[0, 0], [1, 0]], "strip_width": "wide"}, "strip_width"),
        ({"path": [[0, 0], [1, 0]], "boards": [{"pos": [0, 0], "pattern": "up"}]}, "boards[0].pattern"),
        ({"path": [[0, 0], [1, 0]], "boards": [{"pattern": "left"}]}, "boards[0].pos"),
        ({"path": [[0, 0], [1, 0]], "boards": [{"pos": [0, 0], "pattern": "left", "trigger_m": "x"}]},
         "boards[0].trigger_m"),
        ({"path": [[0, 0], [1, 0]], "floor_intensity": 200}, "strip_intensity"),
        ({"path": [[0, 0], [1, 0]], "colour": 3}, "colour"),
        ({"path": [[0, 0], [1, 0]], "seed": 1.5}, "seed"),
    ])
    def test_errors_name_key(self, doc, key):
        with pytest.raises(sim.WorldConfigError) as info:
            sim.world_from_dict(doc)
        assert info.value.key == key

    def test_bad_json(self):
        with pytest.raises(sim.WorldConfigError):
            sim.load_world("{not json")

    def test_world_invariants(self):
        with pytest.raises(ValueError):
            sim.World(path=((0, 0), (1, 0)), floor_intensity=100, strip_intensity=150)
        with pytest.raises(ValueError):
            sim.World(path=((0, 0),))


class TestEpisode:
    def test_default_reaches_destination(self):
        world, seed = sim.default_world()
        report = sim.run_episode(world, seed=seed)
        assert report.outcome is sim.Outcome.REACHED_DESTINATION
        assert report.steps < 5000
        assert report.max_cross_track_error < world.strip_width
        assert report.terminals_seen == 2

    def test_no_boards_never_arrives(self):
        world, seed = sim.default_world()
        bare = sim.World(world.path, world.strip_width, (), world.floor_intensity,
                         world.strip_intensity, world.noise_sigma)
        report = sim.run_episode(bare, seed=seed, max_steps=1500)
        assert report.outcome in (sim.Outcome.TIMEOUT, sim.Outcome.LOST_PATH)

    def test_same_seed_same_report(self):
        world, _ = sim.default_world()
        a = sim.run_episode(world, seed=5, max_steps=300)
        b = sim.run_episode(world, seed=5, max_steps=300)
        assert a.to_json() == b.to_json() and a.trajectory == b.trajectory

    def test_frame_dump(self, tmp_path):
        world, _ = sim.default_world()
        report = sim.run_episode(world, seed=1, max_steps=5, dump_dir=tmp_path)
        names = sorted(os.listdir(tmp_path))
        assert names == [f"{k}_{i:06d}.pgm" for k in ("lower", "upper") for i in range(5)]
        assert report.steps == 5
        img = read_pnm(tmp_path / "lower_000000.pgm")
        assert (img.width, img.height) == (64, 64)

    def test_trajectory_stride(self):
        world, _ = sim.default_world()
        r = sim.run_episode(world, seed=1, max_steps=20, trajectory_stride=5)
        assert len(r.trajectory) == 5

    def test_turns_come_from_boards(self):
        """Both corners are taken by board-triggered turns, not by line following alone."""
        from hfmt import controller as ctl

        world, seed = sim.default_world()
        rng = np.random.default_rng(seed)
        state, pose, turns = ctl.new_controller(), sim.start_pose(world), []
        for _ in range(5000):
            lo = sim.render_lower(world, pose, rng=rng)
            up = sim.render_upper(world, pose, rng=rng)
            prev = state.mode
            state, cmd = ctl.step(state, lo, up, 0.05)
            pose = sim.advance(pose, cmd, 0.05)
            if state.mode is ctl.Mode.TURNING and prev is not ctl.Mode.TURNING:
                turns.append(state.turn_direction)
            if state.mode is ctl.Mode.STOPPED:
                break
        assert turns == [ctl.TurnDirection.RIGHT, ctl.TurnDirection.LEFT]
        assert state.reached_destination
