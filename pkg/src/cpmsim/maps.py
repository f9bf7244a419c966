"""Road geometry: arc-length paths, junctions, and the built-in maps.

Paths are densely sampled polylines (5 mm spacing by default) so imported
and analytic geometry get uniform treatment; the smoothness requirement is
checked discretely. All built-in maps fit the 4.0 m x 4.5 m driving area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .types import DEFAULT_PARAMS, Pose, VehicleParams, normalize_yaw

MAP_WIDTH = 4.0
MAP_HEIGHT = 4.5
SAMPLE_SPACING = 0.005


class MapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PathGeometry:
    path_id: str
    s: np.ndarray         # arc length, strictly increasing, starts at 0
    xy: np.ndarray        # (n, 2)
    heading: np.ndarray   # unwrapped along the path
    curvature: np.ndarray
    closed: bool = False

    def __post_init__(self):
        if len(self.s) < 2:
            raise MapError(f"path {self.path_id!r} needs at least 2 samples")
        if np.any(np.diff(self.s) <= 0):
            raise MapError(f"path {self.path_id!r}: arc length not strictly increasing")

    @property
    def length(self) -> float:
        return float(self.s[-1])


def path_from_points(path_id: str, xy: np.ndarray, closed: bool = False) -> PathGeometry:
    """Build a path from ordered plane points; heading and curvature by
    finite differences. Closed paths use wrap-aware differences so the seam
    carries no spurious curvature jump."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        raise MapError(f"path {path_id!r} needs at least two samples")
    if closed and np.linalg.norm(xy[0] - xy[-1]) > 1e-9:
        xy = np.vstack([xy, xy[0]])
    seg = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if closed and len(xy) > 8:
        pad = 3
        ext = np.vstack([xy[-1 - pad:-1], xy, xy[1:pad + 1]])
        seg_e = np.linalg.norm(np.diff(ext, axis=0), axis=1)
        s_e = np.concatenate([[0.0], np.cumsum(seg_e)])
        d = np.gradient(ext, s_e, axis=0)
        heading_e = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        curv_e = np.gradient(heading_e, s_e)
        heading = heading_e[pad:pad + len(xy)]
        curv = curv_e[pad:pad + len(xy)]
    else:
        order = min(2, len(xy) - 1)
        d = np.gradient(xy, s, axis=0, edge_order=order)
        heading = np.unwrap(np.arctan2(d[:, 1], d[:, 0]))
        curv = np.gradient(heading, s, edge_order=order)
    return PathGeometry(path_id, s, xy, heading, curv, closed)


def path_point(path: PathGeometry, s: float) -> tuple[Pose, float]:
    """Pose and curvature at arc length s (wrapping on closed paths)."""
    if path.closed:
        s = s % path.length
    elif s < -1e-12 or s > path.length + 1e-12:
        raise MapError(f"s={s} outside [0, {path.length}] on open path {path.path_id!r}")
    s = min(max(s, 0.0), path.length)
    i = int(np.clip(np.searchsorted(path.s, s, side="right") - 1, 0, len(path.s) - 2))
    w = (s - path.s[i]) / (path.s[i + 1] - path.s[i])
    x, y = (1 - w) * path.xy[i] + w * path.xy[i + 1]
    heading = (1 - w) * path.heading[i] + w * path.heading[i + 1]
    curv = (1 - w) * path.curvature[i] + w * path.curvature[i + 1]
    return Pose(float(x), float(y), normalize_yaw(float(heading))), float(curv)


@dataclass(frozen=True)
class SmoothnessReport:
    ok: bool
    max_curvature: float
    curvature_bound: float
    max_jump: float
    jump_threshold: float
    worst_s: float

    def __str__(self):
        verdict = "pass" if self.ok else "fail"
        return (f"{verdict}: max|curvature| {self.max_curvature:.3f} "
                f"(bound {self.curvature_bound:.3f}), max jump {self.max_jump:.4f} "
                f"(threshold {self.jump_threshold:.4f}) at s={self.worst_s:.3f}")


def check_smoothness(path: PathGeometry, params: VehicleParams = DEFAULT_PARAMS,
                     jump_threshold: float = 0.1) -> SmoothnessReport:
    """Discrete curvature-continuity and curvature-bound check."""
    if len(path.s) < 3:
        raise MapError("smoothness check needs at least 3 samples")
    bound = params.max_curvature
    k = path.curvature
    jumps = np.abs(np.diff(k))
    max_k = float(np.max(np.abs(k)))
    max_jump = float(np.max(jumps))
    worst = float(path.s[int(np.argmax(np.abs(k)))]) if max_k > bound \
        else float(path.s[int(np.argmax(jumps))])
    return SmoothnessReport(
        ok=max_k <= bound and max_jump <= jump_threshold,
        max_curvature=max_k, curvature_bound=bound,
        max_jump=max_jump, jump_threshold=jump_threshold, worst_s=worst)


@dataclass(frozen=True)
class Junction:
    entry_path: str
    entry_s: float
    branches: tuple  # outgoing path ids

    def __post_init__(self):
        if not self.branches:
            raise MapError("junction needs at least one branch")


@dataclass(frozen=True, eq=False)
class RoadMap:
    map_id: str
    paths: dict
    junctions: tuple = ()

    def path(self, path_id: str) -> PathGeometry:
        try:
            return self.paths[path_id]
        except KeyError:
            raise MapError(f"unknown path {path_id!r} in map {self.map_id!r}") from None

    def junction_after(self, path_id: str) -> Junction | None:
        for j in self.junctions:
            if j.entry_path == path_id:
                return j
        return None

    def bounding_box(self):
        pts = np.vstack([p.xy for p in self.paths.values()])
        return pts.min(axis=0), pts.max(axis=0)

    def validate(self, params: VehicleParams = DEFAULT_PARAMS):
        lo, hi = self.bounding_box()
        if lo[0] < 0 or lo[1] < 0 or hi[0] > MAP_WIDTH or hi[1] > MAP_HEIGHT:
            raise MapError(f"map {self.map_id!r} exceeds the {MAP_WIDTH} x {MAP_HEIGHT} m area")
        for p in self.paths.values():
            rep = check_smoothness(p, params)
            if not rep.ok:
                raise MapError(f"path {p.path_id!r} fails smoothness: {rep}")
        for j in self.junctions:
            entry_pose, _ = path_point(self.path(j.entry_path), j.entry_s)
            for b in j.branches:
                bp, _ = path_point(self.path(b), 0.0)
                if math.hypot(bp.x - entry_pose.x, bp.y - entry_pose.y) > 1e-3:
                    raise MapError(f"branch {b!r} entry point off junction by > 1 mm")
                if abs(normalize_yaw(bp.yaw - entry_pose.yaw)) > math.radians(1.0):
                    raise MapError(f"branch {b!r} entry heading off junction by > 1 deg")


def choose_branch(junction: Junction, rng) -> str:
    """Uniform branch choice from the vehicle's named random stream."""
    return junction.branches[int(rng.integers(len(junction.branches)))]


class RouteCursor:
    """Unbounded arc-length coordinate over a junction-extended route.

    Extends the route with choose_branch draws as planning reaches each
    junction; draws come from the owning vehicle's stream only, so routes
    are independent across vehicles.
    """

    def __init__(self, road: RoadMap, start_path: str, rng):
        self.road = road
        self.rng = rng
        self.segments = [start_path]  # path ids in travel order
        self.offsets = [0.0]          # route arc length where each segment starts

    def _extend_to(self, s: float) -> bool:
        while s > self.offsets[-1] + self.road.path(self.segments[-1]).length:
            last = self.segments[-1]
            path = self.road.path(last)
            if path.closed:
                return True  # closed segment loops forever
            j = self.road.junction_after(last)
            if j is None:
                return False
            nxt = choose_branch(j, self.rng)
            self.offsets.append(self.offsets[-1] + path.length)
            self.segments.append(nxt)
        return True

    def point(self, s: float) -> tuple[Pose, float]:
        if not self._extend_to(s):
            raise MapError(f"route ends before s={s}")
        i = len(self.offsets) - 1
        while i > 0 and s < self.offsets[i]:
            i -= 1
        return path_point(self.road.path(self.segments[i]), s - self.offsets[i])


# -- built-in maps -------------------------------------------------------------


def _circle_points(cx, cy, r, a0, a1, spacing=SAMPLE_SPACING):
    n = max(8, int(abs(a1 - a0) * r / spacing))
    ang = np.linspace(a0, a1, n + 1)
    return np.column_stack([cx + r * np.cos(ang), cy + r * np.sin(ang)])


def outer_circle_map() -> RoadMap:
    pts = _circle_points(2.0, 2.25, 1.75, -math.pi / 2, 3 * math.pi / 2)[:-1]
    return RoadMap("outer_circle", {"loop": path_from_points("loop", pts, closed=True)})


def platoon_loop_map() -> RoadMap:
    a, b = 1.6, 1.3
    t = np.linspace(0, 2 * math.pi, 4096, endpoint=False)
    pts = np.column_stack([2.0 + a * np.cos(t), 2.25 + b * np.sin(t)])
    return RoadMap("platoon_loop", {"loop": path_from_points("loop", pts, closed=True)})


def cloverleaf_map() -> RoadMap:
    """Four mutually tangent loops; each tangent point is a two-branch
    junction (stay on the loop or cross to the neighbor)."""
    r = 0.8
    cx, cy = 2.0, 2.25
    centers = {
        "ne": (cx + r, cy + r), "nw": (cx - r, cy + r),
        "sw": (cx - r, cy - r), "se": (cx + r, cy - r),
    }
    cw = {"ne": True, "sw": True, "nw": False, "se": False}
    # Tangent points sit midway between adjacent centers.
    tangents = {
        ("ne", "nw"): (cx, cy + r), ("ne", "se"): (cx + r, cy),
        ("sw", "se"): (cx, cy - r), ("sw", "nw"): (cx - r, cy),
    }

    def angle_of(circle, pt):
        ccx, ccy = centers[circle]
        return math.atan2(pt[1] - ccy, pt[0] - ccx)

    touch = {c: [] for c in centers}
    for (a, b), pt in tangents.items():
        touch[a].append(pt)
        touch[b].append(pt)

    paths = {}
    arc_from = {}  # (circle, start point rounded) -> (path id, end point)
    for c, (ccx, ccy) in centers.items():
        p0, p1 = touch[c]
        # Full loop around this circle as its own closed path, oriented to
        # match the arc direction, so scenarios can keep vehicles on one
        # leaf without junction branching.
        a_start = angle_of(c, p0)
        a_stop = a_start - 2 * math.pi if cw[c] else a_start + 2 * math.pi
        loop_pts = _circle_points(ccx, ccy, r, a_start, a_stop)[:-1]
        paths[c] = path_from_points(c, loop_pts, closed=True)
        a0, a1 = angle_of(c, p0), angle_of(c, p1)
        for idx, (sa, sb, start_pt, end_pt) in enumerate(
                [(a0, a1, p0, p1), (a1, a0, p1, p0)]):
            if cw[c]:
                while sb >= sa:
                    sb -= 2 * math.pi
            else:
                while sb <= sa:
                    sb += 2 * math.pi
            pid = f"{c}{idx}"
            paths[pid] = path_from_points(pid, _circle_points(ccx, ccy, r, sa, sb))
            arc_from[(c, round(start_pt[0], 6), round(start_pt[1], 6))] = pid
            arc_from.setdefault("ends", {})[pid] = end_pt

    junctions = []
    for (a, b), pt in tangents.items():
        key = (round(pt[0], 6), round(pt[1], 6))
        out_a = arc_from[(a, *key)]
        out_b = arc_from[(b, *key)]
        for pid, end in arc_from["ends"].items():
            if (round(end[0], 6), round(end[1], 6)) == key:
                entry = paths[pid]
                junctions.append(Junction(pid, entry.length, (out_a, out_b)))
    return RoadMap("cloverleaf", paths, tuple(junctions))


_BUILDERS = {
    "outer_circle": outer_circle_map,
    "platoon_loop": platoon_loop_map,
    "cloverleaf": cloverleaf_map,
}
_CACHE: dict[str, RoadMap] = {}


def builtin_map(map_id: str) -> RoadMap:
    if map_id not in _BUILDERS:
        raise MapError(f"unknown map {map_id!r}; available: {sorted(_BUILDERS)}")
    if map_id not in _CACHE:
        _CACHE[map_id] = _BUILDERS[map_id]()
    return _CACHE[map_id]


def builtin_map_ids():
    return sorted(_BUILDERS)
