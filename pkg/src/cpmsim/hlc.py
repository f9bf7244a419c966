"""High-level planning: platoon leader/follower, priority-based
intersection planning with speed-only yielding, circle streaming, and
trajectory verification.

Planners generate reference nodes from a virtual progress state along the
road rather than from measured poses; the MLC closes the loop. Priority
planning scales the reference speed over a discrete grid and picks the
largest factor whose occupancy does not conflict with any higher-priority
(lower-id) vehicle's committed trajectory; the path itself is never
altered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import payloads
from .collision import Footprint, collision_check
from .maps import PathGeometry, RouteCursor, path_point
from .trajectory import Trajectory, TrajectoryError, merge_nodes, prune_before
from .types import (NS_PER_S, Pose, TrajectoryNode, VehicleParams, Violation,
                    validate_node)

LAMBDA_GRID = tuple(round(1.0 - 0.1 * i, 1) for i in range(11))  # 1.0 .. 0.0

# Verification acceleration bound. Planners ramp at the scenario's a_max
# (default 1.0 m/s^2); verification allows headroom for the centripetal
# component so curved constant-speed plans are not rejected.
A_MAX_VERIFY = 1.5


@dataclass(frozen=True)
class CommittedTrajectory:
    vehicle_id: int
    priority: int  # = vehicle_id; lower is more important
    trajectory: Trajectory


@dataclass(frozen=True)
class PlanResult:
    nodes: tuple
    s_end: float
    v_end: float


@dataclass(frozen=True)
class PriorityPlan:
    nodes: tuple
    scale: float
    s_end: float
    v_end: float
    conflict: bool
    emergency: bool


def _point(path, s: float) -> tuple[Pose, float]:
    if isinstance(path, PathGeometry):
        return path_point(path, s)
    return path.point(s)


def _speed_profile(v0: float, target: float, a_max: float, dt: float, steps: int):
    """Speeds and cumulative distances for a bounded ramp toward target."""
    speeds = [v0]
    dists = [0.0]
    v = v0
    for _ in range(steps):
        if v < target:
            nv = min(target, v + a_max * dt)
        else:
            nv = max(target, v - a_max * dt)
        dists.append(dists[-1] + 0.5 * (v + nv) * dt)
        speeds.append(nv)
        v = nv
    return speeds, dists


def _profile_nodes(path, s0: float, v0: float, target: float, now: int,
                   horizon_ns: int, period_ns: int, a_max: float):
    steps = max(1, horizon_ns // period_ns)
    dt = period_ns / NS_PER_S
    speeds, dists = _speed_profile(v0, target, a_max, dt, steps)
    nodes = []
    for j in range(steps + 1):
        pose, _ = _point(path, s0 + dists[j])
        v = speeds[j]
        nodes.append(TrajectoryNode(now + j * period_ns, pose.x, pose.y,
                                    v * math.cos(pose.yaw), v * math.sin(pose.yaw)))
    return tuple(nodes), s0 + dists[-1], speeds[-1]


def plan_leader(path, s_current: float, ref_speed: float, now: int,
                horizon_ns: int, period_ns: int = 100_000_000,
                v_current: float = 0.0, a_max: float = 1.0) -> PlanResult:
    """Nodes along the path at ref_speed with a bounded speed ramp."""
    nodes, s_end, v_end = _profile_nodes(path, s_current, v_current, ref_speed,
                                         now, horizon_ns, period_ns, a_max)
    # Next period plans from the j=1 node, not the horizon end.
    dt = period_ns / NS_PER_S
    speeds, dists = _speed_profile(v_current, ref_speed, a_max, dt, 1)
    return PlanResult(nodes, s_current + dists[1], speeds[1])


def hold_nodes(pose: Pose, now: int, horizon_ns: int, period_ns: int):
    steps = max(1, horizon_ns // period_ns)
    return tuple(TrajectoryNode(now + j * period_ns, pose.x, pose.y, 0.0, 0.0)
                 for j in range(steps + 1))


def ease_nodes(nodes, prev_x: float, prev_y: float, now: int,
               ease_ns: int = 3_000_000_000):
    """Shift a plan so it starts at the previously published reference.

    The offset between the old reference position and the new plan's start
    decays linearly over ease_ns, which turns step changes of the target
    (e.g., a follower acquiring its predecessor's trajectory) into a bounded
    catch-up instead of a reference jump the MPC would chase at full power.
    """
    nodes = tuple(nodes)
    ox = prev_x - nodes[0].x
    oy = prev_y - nodes[0].y
    if math.hypot(ox, oy) < 1e-9:
        return nodes
    ease_s = ease_ns / NS_PER_S
    out = []
    for n in nodes:
        w = 1.0 - (n.t - now) / ease_ns
        if w > 0.0:
            out.append(TrajectoryNode(n.t, n.x + w * ox, n.y + w * oy,
                                      n.vx - ox / ease_s, n.vy - oy / ease_s))
        else:
            out.append(n)
    return tuple(out)


def plan_follower(leader_committed: CommittedTrajectory | Trajectory, gap_time_ns: int,
                  own_pose: Pose, now: int, horizon_ns: int,
                  period_ns: int = 100_000_000):
    """Time-shift the predecessor's trajectory by the gap time.

    With insufficient predecessor history the follower holds position
    (ramp-in at experiment start).
    """
    leader = (leader_committed.trajectory
              if isinstance(leader_committed, CommittedTrajectory) else leader_committed)
    t0 = now - gap_time_ns
    t1 = now + (horizon_ns // period_ns) * period_ns - gap_time_ns
    if leader is None or len(leader) < 2 or not leader.covers(t0, t1):
        return hold_nodes(own_pose, now, horizon_ns, period_ns)
    from .trajectory import sample
    ts = list(range(t0, t1 + 1, period_ns))
    pos, vel = sample(leader, ts)
    return tuple(TrajectoryNode(now + j * period_ns, pos[j, 0], pos[j, 1],
                                vel[j, 0], vel[j, 1]) for j in range(len(ts)))


def plan_priority(own_id: int, path, s_current: float, ref_speed: float,
                  committed, now: int, horizon_ns: int,
                  period_ns: int = 100_000_000, v_current: float = 0.0,
                  a_max: float = 1.0, params: VehicleParams | None = None,
                  inflation: float = 0.02, dt_c: int = 10_000_000,
                  max_scale: float = 1.0) -> PriorityPlan:
    """Largest speed scale in {1.0, 0.9, ..., 0.0} avoiding all
    higher-priority committed trajectories; emergency stop if none."""
    params = params or VehicleParams(vehicle_id=own_id)
    own_fp = Footprint.of(params, inflation)
    lower = [c for c in committed if c.priority < own_id]
    dt = period_ns / NS_PER_S
    for lam in LAMBDA_GRID:
        if lam > max_scale + 1e-9:
            continue
        nodes, _, _ = _profile_nodes(path, s_current, v_current,
                                     lam * ref_speed, now, horizon_ns,
                                     period_ns, a_max)
        cand = Trajectory(nodes, params)
        hit = False
        for c in lower:
            other_fp = Footprint.of(VehicleParams(vehicle_id=c.vehicle_id), inflation)
            if collision_check(cand, c.trajectory, own_fp, other_fp, dt_c) is not None:
                hit = True
                break
        if not hit:
            # Next period plans from the j=1 node, matching plan_leader.
            speeds, dists = _speed_profile(v_current, lam * ref_speed, a_max, dt, 1)
            return PriorityPlan(nodes, lam, s_current + dists[1], speeds[1],
                                conflict=lam < 1.0, emergency=False)
    pose, _ = _point(path, s_current)
    return PriorityPlan(hold_nodes(pose, now, horizon_ns, period_ns), 0.0,
                        s_current, 0.0, conflict=True, emergency=True)


def verify_trajectory(candidate, committed, params: VehicleParams,
                      a_max: float = A_MAX_VERIFY, inflation: float = 0.02,
                      dt_c: int = 10_000_000, a_tol: float = 1e-6) -> list[Violation]:
    """Safety gate before publication: node validity, acceleration bound,
    and collision-freeness against every committed trajectory."""
    nodes = tuple(candidate)
    violations = []
    for n in nodes:
        bad = validate_node(n, params)
        if bad is not None:
            violations.append(Violation(bad.kind, f"t={n.t}: {bad.detail}"))
    if violations:
        return violations
    for a, b in zip(nodes, nodes[1:]):
        dt = (b.t - a.t) / NS_PER_S
        acc = math.hypot(b.vx - a.vx, b.vy - a.vy) / dt
        if acc > a_max + a_tol:
            violations.append(Violation(
                "acceleration", f"t={b.t}: {acc:.3f} m/s^2 > {a_max}"))
    if violations:
        return violations
    try:
        cand = Trajectory(nodes, params)
    except TrajectoryError as exc:
        return [Violation("structure", str(exc))]
    own_fp = Footprint.of(params, inflation)
    for c in committed:
        other_fp = Footprint.of(VehicleParams(vehicle_id=c.vehicle_id), inflation)
        t = collision_check(cand, c.trajectory, own_fp, other_fp, dt_c)
        if t is not None:
            violations.append(Violation(
                "collision", f"with vehicle {c.vehicle_id} at t={t}"))
    return violations


# -- middleware participants ---------------------------------------------------


class CentralizedPlatoonHlc:
    """One participant planning the whole platoon: the lowest id leads, each
    follower tracks its predecessor's history shifted by the gap time."""

    def __init__(self, spec, road):
        self.spec = spec
        self.road = road
        self.order = sorted(spec.vehicles, key=lambda v: v.vehicle_id)
        lead = self.order[0]
        self.path = road.path(lead.path)
        self.s = lead.start_s
        self.v = 0.0
        self.ref_speed = lead.ref_speed
        self.histories = {v.vehicle_id: None for v in self.order}
        self.initial = {v.vehicle_id: spec.initial_pose(v) for v in self.order}
        self.rejected = 0

    @property
    def subscriptions(self):
        return tuple(f"vehicle/{v.vehicle_id}/fused" for v in self.order)

    def step(self, handle, period: int):
        spec = self.spec
        now = period * spec.mlc_period_ns
        committed = []
        plans = {}
        for i, veh in enumerate(self.order):
            vid = veh.vehicle_id
            params = spec.params_for(vid)
            if i == 0:
                res = plan_leader(self.path, self.s, self.ref_speed, now,
                                  spec.horizon_ns, spec.hlc_period_ns,
                                  v_current=self.v, a_max=spec.a_max)
                nodes = res.nodes
                self.s, self.v = res.s_end, res.v_end
            else:
                pred = self.order[i - 1].vehicle_id
                nodes = plan_follower(self.histories[pred], spec.gap_time_ns,
                                      self.initial[vid], now, spec.horizon_ns,
                                      spec.hlc_period_ns)
                hist = self.histories[vid]
                if hist is not None and len(hist) >= 2 and hist.covers(now, now):
                    from .trajectory import sample
                    p, _ = sample(hist, [now])
                    nodes = ease_nodes(nodes, p[0, 0], p[0, 1], now)
            bad = verify_trajectory(nodes, committed, params,
                                    inflation=spec.inflation)
            if bad:
                self.rejected += 1
                continue
            plans[vid] = nodes
            committed.append(CommittedTrajectory(vid, vid, Trajectory(nodes, params)))
        for vid, nodes in plans.items():
            payload = payloads.encode_nodes(nodes)
            handle.publish(f"hlc/{vid}/trajectory", payload)
            handle.publish(f"hlc/committed/{vid}", payload)
            hist = merge_nodes(self.histories[vid], list(nodes), spec.params_for(vid))
            keep_from = now - spec.gap_time_ns - NS_PER_S
            self.histories[vid] = prune_before(hist, keep_from)


class CentralizedCircleHlc:
    """Stress-test streaming: constant-speed trajectories on the outer
    circle for every vehicle, no collision logic."""

    def __init__(self, spec, road):
        self.spec = spec
        self.road = road
        self.state = {v.vehicle_id: [v.start_s, 0.0, road.path(v.path), v.ref_speed]
                      for v in spec.vehicles}
        self.rejected = 0

    subscriptions = ()

    def step(self, handle, period: int):
        spec = self.spec
        now = period * spec.mlc_period_ns
        for vid in sorted(self.state):
            s, v, path, ref = self.state[vid]
            res = plan_leader(path, s, ref, now, spec.horizon_ns,
                              spec.hlc_period_ns, v_current=v, a_max=spec.a_max)
            if verify_trajectory(res.nodes, (), spec.params_for(vid),
                                 inflation=spec.inflation):
                self.rejected += 1
                continue
            self.state[vid][0], self.state[vid][1] = res.s_end, res.v_end
            payload = payloads.encode_nodes(res.nodes)
            handle.publish(f"hlc/{vid}/trajectory", payload)
            handle.publish(f"hlc/committed/{vid}", payload)


class DistributedPriorityHlc:
    """One participant per vehicle: yields by speed scaling to committed
    trajectories of lower-id peers (one period stale under strict LET)."""

    def __init__(self, vehicle_spec, spec, road, branch_rng):
        self.veh = vehicle_spec
        self.spec = spec
        self.params = spec.params_for(vehicle_spec.vehicle_id)
        self.cursor = RouteCursor(road, vehicle_spec.path, branch_rng)
        self.s = vehicle_spec.start_s
        self.v = 0.0
        self.scale = 1.0
        self.rising_hold = False
        self.committed_cache = {}
        self.rejected = 0
        self.emergencies = 0

    @property
    def subscriptions(self):
        vid = self.veh.vehicle_id
        subs = [f"vehicle/{vid}/fused"]
        subs += [f"hlc/committed/{v.vehicle_id}" for v in self.spec.vehicles
                 if v.vehicle_id < vid]
        return tuple(subs)

    def step(self, handle, period: int):
        spec = self.spec
        vid = self.veh.vehicle_id
        now = period * spec.mlc_period_ns
        for env in handle.collect_inputs():
            if env.topic.startswith("hlc/committed/"):
                peer = int(env.topic.rsplit("/", 1)[1])
                nodes = payloads.decode_nodes(env.payload)
                self.committed_cache[peer] = CommittedTrajectory(
                    peer, peer, Trajectory(nodes, spec.params_for(peer)))
        committed = [self.committed_cache[k] for k in sorted(self.committed_cache)]
        plan = plan_priority(vid, self.cursor, self.s, self.veh.ref_speed,
                             committed, now, spec.horizon_ns, spec.hlc_period_ns,
                             v_current=self.v, a_max=spec.a_max, params=self.params,
                             inflation=spec.inflation)
        # One period of hysteresis before speeding back up after a conflict.
        if plan.scale > self.scale and not plan.emergency:
            if not self.rising_hold:
                self.rising_hold = True
                plan = plan_priority(vid, self.cursor, self.s, self.veh.ref_speed,
                                     committed, now, spec.horizon_ns,
                                     spec.hlc_period_ns, v_current=self.v,
                                     a_max=spec.a_max, params=self.params,
                                     inflation=spec.inflation, max_scale=self.scale)
        else:
            self.rising_hold = False
        if plan.emergency:
            self.emergencies += 1
        bad = verify_trajectory(plan.nodes, committed, self.params,
                                inflation=spec.inflation)
        if bad:
            self.rejected += 1
            return
        self.s, self.v, self.scale = plan.s_end, plan.v_end, plan.scale
        payload = payloads.encode_nodes(plan.nodes)
        handle.publish(f"hlc/{vid}/trajectory", payload)
        handle.publish(f"hlc/committed/{vid}", payload)


class DirectHlc:
    """Direct-control mode: stream a fixed command to every vehicle."""

    def __init__(self, spec):
        self.spec = spec

    subscriptions = ()

    def step(self, handle, period: int):
        from .types import ActuatorCommand
        cmd = ActuatorCommand(*self.spec.direct_command)
        for v in self.spec.vehicles:
            handle.publish(f"hlc/{v.vehicle_id}/direct", payloads.encode_command(cmd))
