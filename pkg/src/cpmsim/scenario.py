"""Scenario definitions: the `cpmscenario v1` text format and built-in
experiment fixtures.

A scenario names the map, the vehicle roster (internal or external-process),
the controller topology, rates, noise and fault intensities, the seed, the
duration, and the pass criteria the CLI checks after a run.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .collision import Footprint, poses_collide
from .maps import RoadMap, builtin_map, path_point
from .middleware import FaultModel
from .plant import NoiseConfig
from .types import NS_PER_S, Pose, VehicleParams

FORMAT_HEADER = "cpmscenario v1"

KINDS = ("platoon", "intersection", "circle", "direct")
TOPOLOGIES = ("centralized", "distributed")
REQUIRE_OPS = ("<=", ">=", "==")


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleSpec:
    vehicle_id: int
    kind: str  # internal | external
    path: str
    start_s: float
    ref_speed: float

    def __post_init__(self):
        if self.kind not in ("internal", "external"):
            raise ScenarioError(f"vehicle {self.vehicle_id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Requirement:
    metric: str
    op: str
    value: float

    def holds(self, actual: float) -> bool:
        if self.op == "<=":
            return actual <= self.value
        if self.op == ">=":
            return actual >= self.value
        return actual == self.value

    def __str__(self):
        return f"{self.metric} {self.op} {self.value:g}"


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    map_id: str
    kind: str
    topology: str
    seed: int
    duration_ns: int
    vehicles: tuple
    hlc_period_ns: int = 100_000_000
    mlc_period_ns: int = 20_000_000
    horizon_ns: int = 2_000_000_000
    gap_time_ns: int = 500_000_000
    a_max: float = 1.0
    inflation: float = 0.02
    alpha: float = 0.3
    noise: NoiseConfig = NoiseConfig()
    fault: FaultModel = FaultModel()
    ips_sigma: float = 0.001
    ips_dropout: float = 0.0
    ips_latency_frames: int = 1
    external_deadline_ms: int = 200
    direct_command: tuple = (0.0, 0.0)
    requires: tuple = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"unknown scenario kind {self.kind!r}")
        if self.topology not in TOPOLOGIES:
            raise ScenarioError(f"unknown topology {self.topology!r}")
        if self.duration_ns <= 0 or self.hlc_period_ns <= 0 or self.mlc_period_ns <= 0:
            raise ScenarioError("durations and periods must be positive")
        if self.hlc_period_ns % self.mlc_period_ns:
            raise ScenarioError("HLC period must be a multiple of the MLC period")

    def road(self) -> RoadMap:
        return builtin_map(self.map_id)

    def params_for(self, vehicle_id: int) -> VehicleParams:
        return VehicleParams(vehicle_id=vehicle_id)

    def initial_pose(self, v: VehicleSpec) -> Pose:
        pose, _ = path_point(self.road().path(v.path), v.start_s)
        return pose

    def vehicle(self, vehicle_id: int) -> VehicleSpec:
        for v in self.vehicles:
            if v.vehicle_id == vehicle_id:
                return v
        raise ScenarioError(f"no vehicle {vehicle_id} in scenario {self.name!r}")


def validate_spec(spec: ScenarioSpec) -> ScenarioSpec:
    ids = [v.vehicle_id for v in spec.vehicles]
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"duplicate vehicle ids in roster: {sorted(ids)}")
    if not spec.vehicles:
        raise ScenarioError("scenario has no vehicles")
    road = spec.road()
    road.validate()
    poses = {}
    for v in spec.vehicles:
        params = spec.params_for(v.vehicle_id)
        if v.ref_speed > params.max_speed:
            raise ScenarioError(
                f"vehicle {v.vehicle_id}: ref speed {v.ref_speed} > {params.max_speed}")
        poses[v.vehicle_id] = (spec.initial_pose(v), Footprint.of(params, spec.inflation))
    vids = sorted(poses)
    for i, a in enumerate(vids):
        pa, fa = poses[a]
        for b in vids[i + 1:]:
            pb, fb = poses[b]
            if bool(poses_collide(pa.x, pa.y, pa.yaw, fa, pb.x, pb.y, pb.yaw, fb)):
                raise ScenarioError(
                    f"initial footprints of vehicles {a} and {b} overlap")
    return spec


# -- text format ---------------------------------------------------------------

_SCALARS = {
    "map": ("map_id", str),
    "kind": ("kind", str),
    "topology": ("topology", str),
    "seed": ("seed", int),
    "duration_s": ("duration_ns", lambda v: round(float(v) * NS_PER_S)),
    "hlc_period_ms": ("hlc_period_ns", lambda v: round(float(v) * 1e6)),
    "mlc_period_ms": ("mlc_period_ns", lambda v: round(float(v) * 1e6)),
    "horizon_s": ("horizon_ns", lambda v: round(float(v) * NS_PER_S)),
    "gap_time_s": ("gap_time_ns", lambda v: round(float(v) * NS_PER_S)),
    "a_max": ("a_max", float),
    "inflation_m": ("inflation", float),
    "alpha": ("alpha", float),
    "ips_sigma_m": ("ips_sigma", float),
    "ips_dropout": ("ips_dropout", float),
    "ips_latency_frames": ("ips_latency_frames", int),
    "external_deadline_ms": ("external_deadline_ms", int),
}

_NOISE_KEYS = {
    "odometer_sigma": "odometer_sigma",
    "imu_accel_sigma": "imu_accel_sigma",
    "imu_yaw_rate_sigma": "imu_yaw_rate_sigma",
    "odometer_tick": "odometer_tick",
}


def load_scenario(source, name: str | None = None) -> ScenarioSpec:
    """Parse and fully validate a scenario; errors carry line numbers."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
        if name is None:
            import os
            name = os.path.splitext(os.path.basename(str(source)))[0]
    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ScenarioError(f"line 1: expected header {FORMAT_HEADER!r}")
    fields: dict = {"name": name or "scenario"}
    noise: dict = {}
    fault: dict = {}
    vehicles = []
    requires = []
    for ln, raw in enumerate(lines[1:], start=2):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0]
        try:
            if key == "name":
                fields["name"] = tokens[1]
            elif key in _SCALARS:
                attr, conv = _SCALARS[key]
                fields[attr] = conv(tokens[1])
            elif key in _NOISE_KEYS:
                noise[_NOISE_KEYS[key]] = float(tokens[1])
            elif key == "loss_probability":
                fault["loss_probability"] = float(tokens[1])
            elif key == "extra_delay_periods":
                fault["extra_delay_periods"] = int(tokens[1])
            elif key == "direct_command":
                fields["direct_command"] = (float(tokens[1]), float(tokens[2]))
            elif key == "require":
                metric, op, value = tokens[1], tokens[2], float(tokens[3])
                if op not in REQUIRE_OPS:
                    raise ScenarioError(f"unknown operator {op!r}")
                requires.append(Requirement(metric, op, value))
            elif key == "vehicle":
                vid = int(tokens[1])
                kind = tokens[2]
                kv = dict(tok.split("=", 1) for tok in tokens[3:])
                vehicles.append(VehicleSpec(
                    vehicle_id=vid, kind=kind, path=kv["path"],
                    start_s=float(kv["s"]), ref_speed=float(kv.get("speed", "1.0"))))
            else:
                raise ScenarioError(f"unknown directive {key!r}")
        except ScenarioError as exc:
            raise ScenarioError(f"line {ln}: {exc}") from None
        except (IndexError, KeyError, ValueError) as exc:
            raise ScenarioError(f"line {ln}: malformed {key!r} entry ({exc})") from None
    for required in ("map_id", "kind", "topology", "seed", "duration_ns"):
        if required not in fields:
            raise ScenarioError(f"missing required field for {required}")
    spec = ScenarioSpec(vehicles=tuple(vehicles), requires=tuple(requires),
                        noise=NoiseConfig(**noise), fault=FaultModel(**fault), **fields)
    return validate_spec(spec)


def save_scenario(spec: ScenarioSpec, path) -> None:
    lines = [FORMAT_HEADER, f"name {spec.name}", f"map {spec.map_id}",
             f"kind {spec.kind}", f"topology {spec.topology}", f"seed {spec.seed}",
             f"duration_s {spec.duration_ns / NS_PER_S:g}",
             f"hlc_period_ms {spec.hlc_period_ns / 1e6:g}",
             f"mlc_period_ms {spec.mlc_period_ns / 1e6:g}",
             f"horizon_s {spec.horizon_ns / NS_PER_S:g}",
             f"gap_time_s {spec.gap_time_ns / NS_PER_S:g}",
             f"a_max {spec.a_max:g}", f"inflation_m {spec.inflation:g}",
             f"alpha {spec.alpha:g}", f"ips_sigma_m {spec.ips_sigma:g}",
             f"ips_dropout {spec.ips_dropout:g}",
             f"ips_latency_frames {spec.ips_latency_frames}",
             f"external_deadline_ms {spec.external_deadline_ms}",
             f"odometer_sigma {spec.noise.odometer_sigma:g}",
             f"imu_accel_sigma {spec.noise.imu_accel_sigma:g}",
             f"imu_yaw_rate_sigma {spec.noise.imu_yaw_rate_sigma:g}",
             f"odometer_tick {spec.noise.odometer_tick:g}",
             f"loss_probability {spec.fault.loss_probability:g}",
             f"extra_delay_periods {spec.fault.extra_delay_periods}"]
    if spec.kind == "direct":
        lines.append(f"direct_command {spec.direct_command[0]:g} {spec.direct_command[1]:g}")
    for r in spec.requires:
        lines.append(f"require {r.metric} {r.op} {r.value:g}")
    for v in spec.vehicles:
        lines.append(f"vehicle {v.vehicle_id} {v.kind} path={v.path} "
                     f"s={v.start_s:g} speed={v.ref_speed:g}")
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


# -- fixtures ------------------------------------------------------------------

FIXTURE_NAMES = ("platoon8", "platoon8x2ext", "intersection8", "circle18", "direct_demo")


def fixture_path(name: str):
    if name not in FIXTURE_NAMES:
        raise ScenarioError(f"unknown fixture {name!r}; available: {list(FIXTURE_NAMES)}")
    return resources.files("cpmsim.fixtures").joinpath(f"{name}.scn")


def load_fixture(name: str) -> ScenarioSpec:
    with fixture_path(name).open("r", encoding="utf-8") as fh:
        return load_scenario(fh, name=name)


def resolve_scenario(ref: str) -> ScenarioSpec:
    """Accept either a fixture name or a scenario file path."""
    if ref in FIXTURE_NAMES:
        return load_fixture(ref)
    return load_scenario(ref)
