"""Marker disc surveying: linear triangulation followed by damped
least-squares refinement of the summed squared reprojection error.

Cameras are 3x4 projection matrices keyed by frame index; every disc is
solved independently, so non-planar boards need no special treatment.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

SINGULAR_W = 1e-12
INFINITY_W = 1e-10


class ProjectionSingularityError(ArithmeticError):
    """The point lies on (or numerically at) the camera's principal plane."""


class DegenerateTriangulationError(ArithmeticError):
    """Linear triangulation produced a point at infinity."""


class RefinementError(ArithmeticError):
    """Non-finite error during refinement; ``last_point`` holds the last good iterate."""

    def __init__(self, message: str, last_point: Point3D, last_error: float):
        super().__init__(message)
        self.last_point = last_point
        self.last_error = last_error


class Point3D(NamedTuple):
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class Observation(NamedTuple):
    frame: int
    x: float
    y: float


@dataclass
class DiscRecord:
    marker_id: str
    disc_id: int
    observations: list[Observation] = field(default_factory=list)

    @property
    def key(self) -> tuple[str, int]:
        return (self.marker_id, self.disc_id)


@dataclass(frozen=True)
class DiscEstimate:
    point: Point3D
    error: float
    n_obs: int


@dataclass
class SurveyResult:
    estimates: dict[tuple[str, int], DiscEstimate]
    skipped: list[tuple[str, int, str]]

    @property
    def points(self) -> dict[tuple[str, int], Point3D]:
        return {k: v.point for k, v in self.estimates.items()}


def camera_matrix(p) -> np.ndarray:
    """Validate and return a 3x4 float projection matrix."""
    m = np.asarray(p, dtype=float)
    if m.size == 12:
        m = m.reshape(3, 4)
    if m.shape != (3, 4):
        raise ValueError(f"camera matrix must be 3x4, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("camera matrix has non-finite entries")
    if abs(np.linalg.det(m[:, :3])) <= 1e-300:
        raise ValueError("camera matrix has a singular left 3x3 block")
    return m


def _homogeneous(pt) -> np.ndarray:
    return np.append(np.asarray(pt, dtype=float), 1.0)


def project(cam: np.ndarray, pt) -> tuple[float, float]:
    u, v, w = np.asarray(cam, dtype=float) @ _homogeneous(pt)
    if abs(w) <= SINGULAR_W:
        raise ProjectionSingularityError(f"point {tuple(pt)} projects with w={w:.3g}")
    return (float(u / w), float(v / w))


def project_jacobian(cam: np.ndarray, pt) -> tuple[np.ndarray, np.ndarray]:
    """Projection and its 2x3 Jacobian with respect to the 3D point."""
    cam = np.asarray(cam, dtype=float)
    u, v, w = cam @ _homogeneous(pt)
    if abs(w) <= SINGULAR_W:
        raise ProjectionSingularityError(f"point {tuple(pt)} projects with w={w:.3g}")
    x, y = u / w, v / w
    jac = np.vstack([cam[0, :3] - x * cam[2, :3], cam[1, :3] - y * cam[2, :3]]) / w
    return np.array([x, y]), jac


def _distinct_frames(obs: Sequence[Observation]) -> set[int]:
    return {o.frame for o in obs}


def _same_up_to_scale(a: np.ndarray, b: np.ndarray) -> bool:
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    if np.dot(a.ravel(), b.ravel()) < 0:
        b = -b
    return bool(np.allclose(a, b, rtol=0, atol=1e-12))


def dlt_triangulate(obs: Sequence[Observation], cams: Mapping[int, np.ndarray]) -> Point3D:
    frames = _distinct_frames(obs)
    if len(frames) < 2:
        raise ValueError("triangulation needs observations in at least 2 distinct frames")
    mats = [np.asarray(cams[f], dtype=float) for f in sorted(frames)]
    if all(_same_up_to_scale(mats[0], m) for m in mats[1:]):
        raise ValueError("triangulation needs at least two distinct cameras")

    rows = []
    for o in obs:
        p = np.asarray(cams[o.frame], dtype=float)
        s = 1.0 / max(abs(o.x), abs(o.y), 1.0)
        rows.append(s * (o.x * p[2] - p[0]))
        rows.append(s * (o.y * p[2] - p[1]))
    a = np.array(rows)
    _, _, vt = np.linalg.svd(a)
    xh = vt[-1]
    if abs(xh[3]) < INFINITY_W:
        raise DegenerateTriangulationError("triangulated point is at infinity")
    return Point3D(*(float(c) for c in xh[:3] / xh[3]))


def _residuals(pt: np.ndarray, obs: Sequence[Observation], cams: Mapping[int, np.ndarray]):
    r = np.empty(2 * len(obs))
    jac = np.empty((2 * len(obs), 3))
    for i, o in enumerate(obs):
        proj, j = project_jacobian(cams[o.frame], pt)
        r[2 * i] = proj[0] - o.x
        r[2 * i + 1] = proj[1] - o.y
        jac[2 * i : 2 * i + 2] = j
    return r, jac


def _sum_squares(r: np.ndarray) -> float:
    # same accumulation order as reprojection_error, so the two agree bit for bit
    total = 0.0
    for i in range(0, len(r), 2):
        total += float(r[i]) ** 2 + float(r[i + 1]) ** 2
    return total


def reprojection_error(pt, obs: Sequence[Observation], cams: Mapping[int, np.ndarray]) -> float:
    total = 0.0
    for o in obs:
        x, y = project(cams[o.frame], pt)
        total += (x - o.x) ** 2 + (y - o.y) ** 2
    return total


def refine_triangulation(init, obs: Sequence[Observation], cams: Mapping[int, np.ndarray],
                         max_iters: int = 100, rel_tol: float = 1e-12,
                         initial_damping: float = 1e-3) -> tuple[Point3D, float]:
    """Levenberg-Marquardt descent on the reprojection error.

    The damping is multiplied by 10 after a rejected step and divided by 10
    after an accepted one. Iteration stops when an accepted step improves the
    error by less than ``rel_tol`` relative, when the damping saturates, or
    after ``max_iters`` iterations. The returned error never exceeds the
    error at ``init``.
    """
    x = np.asarray(init, dtype=float).copy()
    r, jac = _residuals(x, obs, cams)
    err = _sum_squares(r)
    if not np.isfinite(err):
        raise RefinementError("non-finite initial error", Point3D(*x), err)
    lam = initial_damping

    for _ in range(max_iters):
        if err == 0.0:
            break
        jtj = jac.T @ jac
        g = jac.T @ r
        accepted = False
        while lam < 1e16:
            h = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                step = np.linalg.solve(h, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = x + step
            try:
                r_new, jac_new = _residuals(cand, obs, cams)
            except ProjectionSingularityError:
                lam *= 10.0
                continue
            new_err = _sum_squares(r_new)
            if not np.isfinite(new_err):
                raise RefinementError("non-finite error during refinement", Point3D(*x), err)
            if new_err < err:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            break
        improvement = (err - new_err) / err
        x, r, jac, err = cand, r_new, jac_new, new_err
        lam /= 10.0
        if improvement < rel_tol:
            break
    return Point3D(*(float(c) for c in x)), err


def survey_markers(records: Sequence[DiscRecord], cams: Mapping[int, np.ndarray],
                   **refine_opts) -> SurveyResult:
    """Triangulate and refine every disc independently.

    Discs seen in fewer than two distinct frames, or whose linear solution is
    degenerate, are reported in ``skipped`` instead of the estimates.
    """
    if not records:
        raise ValueError("no disc records to survey")
    estimates: dict[tuple[str, int], DiscEstimate] = {}
    skipped: list[tuple[str, int, str]] = []
    for rec in records:
        missing = _distinct_frames(rec.observations) - set(cams)
        if missing:
            skipped.append((rec.marker_id, rec.disc_id, f"no camera for frames {sorted(missing)}"))
            continue
        n_frames = len(_distinct_frames(rec.observations))
        if n_frames < 2:
            skipped.append((rec.marker_id, rec.disc_id,
                            f"observed in {n_frames} distinct frame(s), need 2"))
            continue
        try:
            init = dlt_triangulate(rec.observations, cams)
            point, err = refine_triangulation(init, rec.observations, cams, **refine_opts)
        except (ValueError, ArithmeticError) as exc:
            log.debug("disc %s skipped: %s", rec.key, exc)
            skipped.append((rec.marker_id, rec.disc_id, str(exc)))
            continue
        estimates[rec.key] = DiscEstimate(point, err, len(rec.observations))
    return SurveyResult(estimates, skipped)


# ---------------------------------------------------------------------- CSV I/O

class SchemaError(ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


OBS_HEADER = ["marker_id", "disc_id", "frame", "x", "y"]
CAM_HEADER = ["frame"] + [f"p{r}{c}" for r in range(1, 4) for c in range(1, 5)]
RESULT_HEADER = ["marker_id", "disc_id", "X", "Y", "Z", "reproj_error", "n_obs"]


def _rows(text: str, header: list[str]) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    first = next(reader, None)
    if first is None:
        return
    if [h.strip() for h in first] != header:
        raise SchemaError(f"expected header {','.join(header)}", 1)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(f"expected {len(header)} fields, got {len(row)}", lineno)
        yield lineno, [c.strip() for c in row]


def _num(value: str, kind, row: int, name: str):
    try:
        out = kind(value)
    except ValueError:
        raise SchemaError(f"{name}={value!r} is not a valid {kind.__name__}", row) from None
    if kind is float and not np.isfinite(out):
        raise SchemaError(f"{name} must be finite", row)
    return out


def read_observations(text: str) -> list[DiscRecord]:
    records: dict[tuple[str, int], DiscRecord] = {}
    for lineno, (marker, disc, frame, x, y) in _rows(text, OBS_HEADER):
        if not marker:
            raise SchemaError("empty marker_id", lineno)
        disc_id = _num(disc, int, lineno, "disc_id")
        if not 0 <= disc_id <= 3:
            raise SchemaError(f"disc_id {disc_id} outside 0..3", lineno)
        f = _num(frame, int, lineno, "frame")
        if f < 0:
            raise SchemaError("frame must be >= 0", lineno)
        rec = records.setdefault((marker, disc_id), DiscRecord(marker, disc_id))
        rec.observations.append(Observation(f, _num(x, float, lineno, "x"), _num(y, float, lineno, "y")))
    return list(records.values())


def read_cameras(text: str) -> dict[int, np.ndarray]:
    cams: dict[int, np.ndarray] = {}
    for lineno, row in _rows(text, CAM_HEADER):
        f = _num(row[0], int, lineno, "frame")
        if f in cams:
            raise SchemaError(f"duplicate frame {f}", lineno)
        vals = [_num(v, float, lineno, name) for v, name in zip(row[1:], CAM_HEADER[1:])]
        try:
            cams[f] = camera_matrix(vals)
        except ValueError as exc:
            raise SchemaError(str(exc), lineno) from None
    return cams


def format_results(result: SurveyResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for (marker, disc), est in sorted(result.estimates.items()):
        w.writerow([marker, disc, *(repr(float(v)) for v in est.point),
                    repr(float(est.error)), est.n_obs])
    return buf.getvalue()
