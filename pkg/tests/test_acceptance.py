"""Acceptance criteria, one test each.

Run with ``pytest tests/test_acceptance.py -s -v`` to see one PASS/FAIL line per criterion.
"""
import filecmp
import math
import os
import time

import numpy as np

from hfmt import sim
from hfmt.cli import main
from hfmt.fiducial import FiducialPattern as FP, detect_fiducial
from hfmt.imaging import BinaryImage, Image, connected_components
from hfmt.path_tracker import PathEstimate, SteeringGains, estimate_path, steering, track_frame
from hfmt.survey import (
    Observation,
    dlt_triangulate,
    project,
    project_jacobian,
    refine_triangulation,
    reprojection_error,
)
from oracles import central_difference_jacobian, flood_fill_blobs, forward_project, look_at_camera


def verdict(n, title, ok, detail):
    print(f"\nACCEPTANCE {n} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
    assert ok, detail


def test_1_end_to_end_navigation():
    world, seed = sim.default_world()
    t0 = time.perf_counter()
    report = sim.run_episode(world, seed=seed, max_steps=5000)
    elapsed = time.perf_counter() - t0
    ok = (report.outcome is sim.Outcome.REACHED_DESTINATION and report.steps <= 5000
          and report.max_cross_track_error < world.strip_width and elapsed < 10.0)
    verdict(1, "end-to-end navigation", ok,
            f"outcome={report.outcome.value} steps={report.steps} "
            f"max_xte={report.max_cross_track_error:.4f} m (< {world.strip_width}) "
            f"noise_sigma={world.noise_sigma} runtime={elapsed:.2f} s (< 10)")


def test_2_fiducial_robustness():
    rng = np.random.default_rng(2024)
    patterns = [FP.LEFT_TURN, FP.RIGHT_TURN, FP.TERMINAL]
    wrong = []
    t0 = time.perf_counter()
    for i in range(500):
        pattern = patterns[rng.integers(3)]
        rotation = rng.uniform(0.0, 2 * math.pi)
        scale = rng.uniform(0.5, 2.0)
        sigma = rng.uniform(0.0, 8.0)
        size = round(96 * scale)
        px = sim.render_board_face(pattern, size, size, rotation, 220, 40).astype(float)
        px = np.clip(np.rint(px + rng.normal(0.0, sigma, px.shape)), 0, 255).astype(np.uint8)
        got = detect_fiducial(Image(px)).pattern
        if got is not pattern:
            wrong.append((i, pattern.value, got.value))
    elapsed = time.perf_counter() - t0
    ok = not wrong and elapsed < 5.0
    verdict(2, "fiducial robustness", ok,
            f"{500 - len(wrong)}/500 correct (rotation 0-360 deg, scale 0.5-2.0, sigma <= 8) "
            f"runtime={elapsed:.2f} s (< 5){' first miss ' + str(wrong[0]) if wrong else ''}")


def test_3_blob_oracle_equivalence():
    rng = np.random.default_rng(3)
    mismatches = 0
    for _ in range(100):
        mask = rng.random((64, 64)) < rng.uniform(0.1, 0.6)
        expected_all = flood_fill_blobs(mask)
        for min_area in (1, 5):
            got = sorted(((b.area, b.centroid, b.bbox)
                          for b in connected_components(BinaryImage(mask), min_area)),
                         key=lambda b: (b[2], b[1]))
            expected = [b for b in expected_all if b[0] >= min_area]
            mismatches += got != expected
    verdict(3, "blob oracle equivalence", mismatches == 0,
            f"{200 - mismatches}/200 (mask, min_area) cases match exactly on 64x64 masks")


def test_4_triangulation_accuracy():
    rng = np.random.default_rng(4)
    worst_dlt, increases = 0.0, 0
    for _ in range(200):
        n = int(rng.integers(2, 11))
        cams = {f: look_at_camera(rng) for f in range(n)}
        truth = rng.uniform(-1, 1, size=3)
        clean = [Observation(f, *forward_project(c, truth)) for f, c in cams.items()]
        noisy = [Observation(o.frame, o.x + rng.normal(0, 0.5), o.y + rng.normal(0, 0.5)) for o in clean]
        est = dlt_triangulate(clean, cams)
        worst_dlt = max(worst_dlt, float(np.linalg.norm(np.array(est) - truth)))
        for obs in (clean, noisy):
            init = dlt_triangulate(obs, cams)
            _, err = refine_triangulation(init, obs, cams)
            increases += err > reprojection_error(init, obs, cams)
    ok = worst_dlt < 1e-9 and increases == 0
    verdict(4, "triangulation accuracy", ok,
            f"200 points, 2-10 cameras: worst DLT error={worst_dlt:.2e} (< 1e-9); "
            f"LM error increases={increases}/400 instances")


def test_5_jacobian_correctness():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        cam = look_at_camera(rng)
        pt = rng.uniform(-1, 1, size=3)
        _, jac = project_jacobian(cam, pt)
        fd = central_difference_jacobian(lambda p: project(cam, p), pt)
        worst = max(worst, float(np.max(np.abs(jac - fd)) / np.max(np.abs(fd))))
    verdict(5, "Jacobian correctness", worst <= 1e-5,
            f"worst relative deviation from central differences={worst:.2e} (<= 1e-5) over 100 pairs")


def _diagonal_strip(size=128, half_width=4.0):
    ys, xs = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    # strip axis runs bottom-left to top-right, i.e. 45 degrees in the image
    return BinaryImage(np.abs((xs - c) + (ys - c)) / math.sqrt(2) <= half_width)


def test_6_path_estimation_closure():
    world = sim.World(path=((-5.0, 0.0), (5.0, 0.0)))
    worst = 0.0
    all_valid = True
    for x in np.linspace(-3.0, 3.0, 13):
        for heading in (0.0, math.pi):
            est = track_frame(sim.render_lower(world, sim.Pose2D(float(x), 0.0, heading)))
            all_valid &= est.valid
            worst = max(worst, abs(est.offset), abs(est.gradient))
    diag = estimate_path(_diagonal_strip())
    diag_err = abs(diag.gradient - math.pi / 4)
    ok = all_valid and worst <= 0.05 and diag.valid and diag_err <= 0.05
    verdict(6, "path estimation closure", ok,
            f"straight frames worst |offset|,|gradient|={worst:.4f} (<= 0.05); "
            f"45 deg strip gradient={diag.gradient:.4f} (pi/4 +/- 0.05)")


def test_7_determinism(tmp_path, capsys):
    outs = []
    for name in ("a", "b"):
        code = main(["sim", "--dump-frames", str(tmp_path / name)])
        outs.append((code, capsys.readouterr().out))
    names = sorted(os.listdir(tmp_path / "a"))
    _, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    same_listing = names == sorted(os.listdir(tmp_path / "b"))
    ok = outs[0] == outs[1] and same_listing and not mismatch and not errors and names
    verdict(7, "determinism", bool(ok),
            f"reports identical={outs[0] == outs[1]}; {len(names)} dumped frames, "
            f"{len(mismatch) + len(errors)} differ")


def test_8_steering_law():
    rng = np.random.default_rng(8)
    failures = []
    for i in range(1000):
        off, grad = rng.uniform(-1, 1), rng.uniform(-math.pi / 2, math.pi / 2)
        gains = SteeringGains(rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0.1, 3))
        w = steering(PathEstimate(off, grad, True), gains).angular_velocity
        w_neg = steering(PathEstimate(-off, -grad, True), gains).angular_velocity
        bigger = off + abs(rng.uniform(0, 1))
        w_big = steering(PathEstimate(bigger, grad, True), gains).angular_velocity
        raw = -(gains.k_offset * off + gains.k_gradient * grad)
        if w != -w_neg:
            failures.append((i, "antisymmetry"))
        if w_big > w:
            failures.append((i, "monotonicity"))
        if abs(w) > gains.max_rate or (abs(raw) <= gains.max_rate and w != raw):
            failures.append((i, "clamp"))
    verdict(8, "steering law", not failures,
            f"1000 samples, violations={len(failures)}{' first ' + str(failures[0]) if failures else ''}")
