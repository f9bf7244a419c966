"""Simulated indoor positioning system.

Works in world-plane meters: camera intrinsics are collapsed into a single
detection-noise sigma. Per 50 Hz frame the pipeline projects each vehicle's
LEDs into the plane, groups detections by single linkage, recovers the pose
from the non-equilateral LED triangle (rigid least-squares fit), and decodes
vehicle identity from the flashing frequency of the fourth LED.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from . import payloads
from .types import Pose, normalize_yaw


class UnresolvedPose(Exception):
    pass


class UnresolvedIdentity(Exception):
    def __init__(self, candidates):
        super().__init__(f"ambiguous identification between {candidates}")
        self.candidates = candidates


@dataclass(frozen=True)
class LedLayout:
    """LED positions in the vehicle body frame (meters)."""

    outer: tuple = ((0.08, 0.03), (0.08, -0.03), (-0.07, 0.025))
    ident: tuple = (0.0, 0.0)
    com_offset: tuple = (0.0, 0.0)
    separation_margin: float = 0.005

    def __post_init__(self):
        sides = self.side_lengths()
        gaps = [abs(sides[i] - sides[j]) for i in range(3) for j in range(i + 1, 3)]
        if min(gaps) < self.separation_margin:
            raise ValueError(
                f"outer triangle not non-equilateral: side gaps {gaps} below "
                f"margin {self.separation_margin}")

    def side_lengths(self):
        p = self.outer
        return (math.dist(p[0], p[1]), math.dist(p[0], p[2]), math.dist(p[1], p[2]))


@dataclass(frozen=True)
class FrameDetections:
    frame_index: int
    points: np.ndarray  # (n, 2) world-plane meters


@dataclass(frozen=True)
class PoseFit:
    pose: Pose
    ident_on: bool
    residual_rms: float


def flash_on(freq: float, frame_index: int, frame_rate: float = 50.0) -> bool:
    """Square-wave flash state of an identification LED at a given frame."""
    return math.floor(2.0 * freq * frame_index / frame_rate) % 2 == 0


def _body_to_world(pose: Pose, pts: np.ndarray) -> np.ndarray:
    c, s = math.cos(pose.yaw), math.sin(pose.yaw)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.array([pose.x, pose.y])


def project_leds(poses: dict, layouts: dict, freqs: dict, frame_index: int,
                 sigma: float = 0.0, rngs: dict | None = None,
                 frame_rate: float = 50.0) -> FrameDetections:
    """World-plane LED detection points for one frame.

    `poses` maps vehicle id to its center-of-mass pose; noise draws come
    from per-vehicle generators so rosters can change without perturbing
    anyone else's randomness.
    """
    points = []
    for vid in sorted(poses):
        pose = poses[vid]
        layout = layouts[vid]
        body = [np.array(p) - np.array(layout.com_offset) for p in layout.outer]
        if flash_on(freqs[vid], frame_index, frame_rate):
            body.append(np.array(layout.ident) - np.array(layout.com_offset))
        pts = _body_to_world(pose, np.array(body))
        if sigma > 0.0 and rngs is not None:
            pts = pts + sigma * rngs[vid].standard_normal(pts.shape)
        points.append(pts)
    if not points:
        return FrameDetections(frame_index, np.zeros((0, 2)))
    return FrameDetections(frame_index, np.vstack(points))


def cluster_detections(frame: FrameDetections, max_vehicle_diameter: float = 0.20):
    """Single-linkage grouping with the vehicle diameter as threshold.

    Returns (groups, unresolved): point arrays with 3 or 4 members, and
    arrays for occluded or merged groups that are reported, not guessed.
    """
    pts = frame.points
    n = len(pts)
    if n == 0:
        return [], []
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    adj = csr_matrix(d <= max_vehicle_diameter)
    n_comp, labels = connected_components(adj, directed=False)
    groups, unresolved = [], []
    for c in range(n_comp):
        g = pts[labels == c]
        if 3 <= len(g) <= 4:
            groups.append(g)
        else:
            unresolved.append(g)
    return groups, unresolved


def _fit_batch(body: np.ndarray, tris: np.ndarray):
    """Least-squares proper-rotation fits body -> each triangle in `tris`.

    In the plane the optimal rotation angle has the closed form
    atan2(sum of cross products, sum of dot products) of the centered point
    sets. Returns (angles, translations, rms) over the batch.
    """
    bc = body.mean(axis=0)
    b = body - bc
    wc = tris.mean(axis=1)
    w = tris - wc[:, None, :]
    dots = np.einsum("ij,mij->m", b, w)
    crosses = np.einsum("i,mi->m", b[:, 0], w[..., 1]) - \
        np.einsum("i,mi->m", b[:, 1], w[..., 0])
    theta = np.arctan2(crosses, dots)
    c, s = np.cos(theta), np.sin(theta)
    rb = np.empty((len(tris), len(body), 2))
    rb[..., 0] = c[:, None] * b[None, :, 0] - s[:, None] * b[None, :, 1]
    rb[..., 1] = s[:, None] * b[None, :, 0] + c[:, None] * b[None, :, 1]
    res = w - rb
    rms = np.sqrt((res ** 2).sum(axis=(1, 2)) / len(body))
    t = wc - np.stack([c * bc[0] - s * bc[1], s * bc[0] + c * bc[1]], axis=1)
    return theta, t, rms


def _fit_rigid(body: np.ndarray, world: np.ndarray):
    """Least-squares rigid transform (proper rotation only) body -> world."""
    theta, t, rms = _fit_batch(body, world[None])
    c, s = math.cos(theta[0]), math.sin(theta[0])
    rot = np.array([[c, -s], [s, c]])
    return rot, t[0], float(rms[0])


def solve_pose(points: np.ndarray, layout: LedLayout,
               residual_tol: float = 0.02) -> PoseFit:
    """Recover the center-of-mass pose from one vehicle's detection group.

    A 4-point group first excludes the identification LED as the point whose
    removal leaves the best triangle fit. The three outer points are labeled
    by trying all correspondences and keeping the proper-rotation fit with
    the smallest residual; the non-equilateral triangle makes that labeling
    unique.
    """
    points = np.asarray(points, dtype=float)
    if len(points) not in (3, 4):
        raise UnresolvedPose(f"group of {len(points)} points")
    body = np.array(layout.outer) - np.array(layout.com_offset)

    subsets = [((0, 1, 2), False)] if len(points) == 3 else \
        [(tuple(j for j in range(4) if j != i), True) for i in range(4)]
    perms = [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]

    tris = np.stack([points[list(subset)][list(perm)]
                     for subset, _ in subsets for perm in perms])
    ident_flags = [ident_on for _, ident_on in subsets for _ in perms]
    theta, t, rms = _fit_batch(body, tris)
    order = np.argsort(rms, kind="stable")
    best = int(order[0])
    best_rms = float(rms[best])
    second = float(rms[order[1]]) if len(order) > 1 else math.inf
    if best_rms > residual_tol:
        raise UnresolvedPose(f"best fit residual {best_rms:.4f} m exceeds {residual_tol}")
    min_gap = min(abs(a - b) for i, a in enumerate(layout.side_lengths())
                  for b in layout.side_lengths()[i + 1:])
    if second - best_rms < min_gap / 8:
        raise UnresolvedPose(
            f"side-length labeling ambiguous: residuals {best_rms:.4f} / {second:.4f}")
    return PoseFit(Pose(float(t[best, 0]), float(t[best, 1]),
                        normalize_yaw(float(theta[best]))),
                   ident_flags[best], best_rms)


def identify(history, table: dict, frame_rate: float = 50.0):
    """Match an on/off flash history against a frequency table.

    `history` is a sequence of (frame_index, on) samples; `table` maps
    frequency (Hz) to vehicle id. Returns (vehicle_id, confidence).
    """
    history = list(history)
    if not history:
        raise UnresolvedIdentity(())
    frames = np.array([n for n, _ in history], dtype=float)
    on = np.array([bool(o) for _, o in history])
    scores = {}
    for freq in table:
        period = max(1, math.ceil(frame_rate / freq))
        phases = np.arange(period, dtype=float)
        # flash_on() over a (phase, frame) grid
        pattern = np.floor(2.0 * freq * (frames[None, :] + phases[:, None])
                           / frame_rate) % 2 == 0
        hits = (pattern == on[None, :]).sum(axis=1)
        scores[freq] = float(hits.max()) / len(history)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    if len(ranked) > 1 and ranked[0][1] - ranked[1][1] < 1.0 / len(history):
        raise UnresolvedIdentity((table[ranked[0][0]], table[ranked[1][0]]))
    return table[ranked[0][0]], ranked[0][1]


def default_frequency(vehicle_id: int) -> float:
    return 1.0 + vehicle_id


@dataclass
class _Track:
    pos: np.ndarray
    last_yaw: float = 0.0
    history: list = field(default_factory=list)
    vid: int | None = None
    misses: int = 0


class IpsSystem:
    """IPS middleware participant: project, cluster, solve, identify.

    Reads ground truth from a runner-provided snapshot (frozen for the
    period) and publishes identified pose observations on `ips/poses`,
    delayed by the configured latency and thinned by the dropout
    probability. Unresolved vehicles are simply absent from a frame.
    """

    def __init__(self, vehicle_ids, truth_provider, rng_factory,
                 layout: LedLayout = LedLayout(), sigma: float = 0.001,
                 dropout: float = 0.0, latency_frames: int = 1,
                 frame_ns: int = 20_000_000, window: int = 50,
                 max_vehicle_diameter: float = 0.20, gate: float = 0.12,
                 frame_rate: float | None = None):
        self.vehicle_ids = sorted(vehicle_ids)
        self.truth = truth_provider
        self.layout = layout
        self.layouts = {vid: layout for vid in self.vehicle_ids}
        self.freqs = {vid: default_frequency(vid) for vid in self.vehicle_ids}
        self.table = {f: vid for vid, f in self.freqs.items()}
        self.sigma = sigma
        self.dropout = dropout
        self.latency = latency_frames
        self.frame_ns = frame_ns
        self.frame_rate = frame_rate if frame_rate is not None else 1e9 / frame_ns
        self.window = window
        self.max_diameter = max_vehicle_diameter
        self.gate = gate
        self.noise_rngs = {vid: rng_factory(vid, "ips-noise") for vid in self.vehicle_ids}
        self.drop_rngs = {vid: rng_factory(vid, "ips-dropout") for vid in self.vehicle_ids}
        self.tracks: list[_Track] = []
        self.queue: list[tuple[int, payloads.ObservationRecord]] = []
        self.unresolved_groups = 0

    subscriptions = ()

    def step(self, handle, period: int):
        frame = period
        poses = self.truth()
        det = project_leds(poses, self.layouts, self.freqs, frame,
                           self.sigma, self.noise_rngs, self.frame_rate)
        groups, unresolved = cluster_detections(det, self.max_diameter)
        self.unresolved_groups += len(unresolved)

        fits = []
        for g in groups:
            try:
                fits.append(solve_pose(g, self.layout))
            except UnresolvedPose:
                self.unresolved_groups += 1
        fits.sort(key=lambda f: (f.pose.x, f.pose.y))
        self._associate(fits, frame)

        for track in self.tracks:
            if track.vid is None and len(track.history) >= self.window:
                try:
                    vid, _ = identify(track.history[-self.window:], self.table,
                                      self.frame_rate)
                    if vid not in [t.vid for t in self.tracks]:
                        track.vid = vid
                except UnresolvedIdentity:
                    pass

        records = []
        for track in self.tracks:
            if track.vid is None or track.misses:
                continue
            if self.dropout > 0.0 and self.drop_rngs[track.vid].random() < self.dropout:
                continue
            records.append((frame + self.latency, payloads.ObservationRecord(
                track.vid, float(track.pos[0]), float(track.pos[1]),
                track.last_yaw, frame, frame * self.frame_ns)))
        self.queue.extend(records)

        due = [r for f, r in self.queue if f <= frame]
        self.queue = [(f, r) for f, r in self.queue if f > frame]
        due.sort(key=lambda r: r.vehicle_id)
        handle.publish("ips/poses", payloads.encode_observations(due))

    def _associate(self, fits, frame: int):
        pairs = []
        for ti, track in enumerate(self.tracks):
            for fi, fit in enumerate(fits):
                dist = math.hypot(fit.pose.x - track.pos[0], fit.pose.y - track.pos[1])
                if dist <= self.gate:
                    pairs.append((dist, ti, fi))
        pairs.sort()
        used_t, used_f = set(), set()
        for _, ti, fi in pairs:
            if ti in used_t or fi in used_f:
                continue
            used_t.add(ti)
            used_f.add(fi)
            track = self.tracks[ti]
            fit = fits[fi]
            track.pos = np.array([fit.pose.x, fit.pose.y])
            track.last_yaw = fit.pose.yaw
            track.history.append((frame, fit.ident_on))
            track.history = track.history[-4 * self.window:]
            track.misses = 0
        for ti, track in enumerate(self.tracks):
            if ti not in used_t:
                track.misses += 1
        self.tracks = [t for t in self.tracks if t.misses <= 10]
        for fi, fit in enumerate(fits):
            if fi not in used_f:
                t = _Track(pos=np.array([fit.pose.x, fit.pose.y]),
                           history=[(frame, fit.ident_on)])
                t.last_yaw = fit.pose.yaw
                self.tracks.append(t)
