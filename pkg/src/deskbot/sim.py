"""Deterministic 2-D tabletop world, task success checkers, and a scripted
expert that stands in for a human demonstrator during automated runs.

The world is a unit square. The gripper has a planar pose (x, y, theta) and
an aperture in [0, 1]. Closing the aperture across 0.5 binds the nearest
object within GRASP_R; opening across 0.5 releases it. A closed gripper
pushes unheld objects it contacts (open jaws straddle objects and pass
over them). Dynamics are pure and deterministic; randomness only enters
through seeded resets.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .episodes import (
    Episode,
    EpisodeIdGen,
    Frame,
    Observation,
    ObjectState,
    RawAction,
    ZoneState,
    new_episode_id,
)
from .featurize import wrap_angle
from .nn import rng_stream

A_MAX_POS = 0.05
A_MAX_ROT = 0.2
G_RATE = 0.2
GRASP_R = 0.03
BODY_R = 0.01
T_MAX = 300
HOME = (0.5, 0.1, 0.0)
PLACE_RADIUS = 0.04
GRASP_HOLD_STEPS = 5
PUSH_DISTANCE = 0.15
WIPE_COVERAGE = 0.8
WIPE_ALIGN_TOL = 0.3

SKILLS = ("pick-place", "grasp", "push", "wipe")

_SUBSTEP = 0.01          # contact resolution path resolution
_APPROACH_TOL = 0.004    # expert considers itself arrived below this


class SimError(RuntimeError):
    pass


class PlacementError(SimError):
    pass


# --------------------------------------------------------------------------
# Roster and tasks
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectSpec:
    object_id: str
    radius: float


@dataclass(frozen=True)
class ZoneSpec:
    zone_id: str
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class Roster:
    objects: tuple[ObjectSpec, ...]
    zones: tuple[ZoneSpec, ...]

    @property
    def object_ids(self) -> tuple[str, ...]:
        return tuple(o.object_id for o in self.objects)

    @property
    def zone_ids(self) -> tuple[str, ...]:
        return tuple(z.zone_id for z in self.zones)

    @property
    def obs_dim(self) -> int:
        return 4 + 3 * len(self.objects) + 3 * len(self.zones)

    def object_spec(self, object_id: str) -> ObjectSpec:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise SimError(f"unknown object {object_id!r}")

    def zone_spec(self, zone_id: str) -> ZoneSpec:
        for z in self.zones:
            if z.zone_id == zone_id:
                return z
        raise SimError(f"unknown zone {zone_id!r}")

    def fingerprint(self) -> str:
        blob = json.dumps(
            {
                "objects": [[o.object_id, o.radius] for o in self.objects],
                "zones": [[z.zone_id, z.x, z.y, z.radius] for z in self.zones],
            },
            separators=(",", ":"), sort_keys=True,
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    command: str
    skill: str
    target: str | None = None
    destination: str | None = None
    family: str = "default"
    place_radius: float = PLACE_RADIUS
    grasp_hold_steps: int = GRASP_HOLD_STEPS
    push_distance: float = PUSH_DISTANCE
    wipe_coverage: float = WIPE_COVERAGE

    def __post_init__(self):
        if self.skill not in SKILLS:
            raise SimError(f"unknown skill {self.skill!r}")
        if self.skill in ("pick-place", "grasp", "push") and not self.target:
            raise SimError(f"{self.task_id}: skill {self.skill} needs a target object")
        if self.skill in ("pick-place", "wipe") and not self.destination:
            raise SimError(f"{self.task_id}: skill {self.skill} needs a destination zone")
        for v in (self.place_radius, self.push_distance, self.wipe_coverage):
            if v <= 0:
                raise SimError(f"{self.task_id}: thresholds must be positive")

    def required_objects(self) -> tuple[str, ...]:
        return (self.target,) if self.target else ()


def default_tasks_path() -> str:
    from importlib import resources

    return str(resources.files("deskbot").joinpath("data/tasks_default.json"))


def load_tasks(path: str | None = None):
    """Loads (roster, tasks) from a task file; None means the packaged default."""
    with open(path or default_tasks_path(), "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    roster = Roster(
        objects=tuple(ObjectSpec(o["id"], float(o["radius"])) for o in raw["objects"]),
        zones=tuple(ZoneSpec(z["id"], float(z["x"]), float(z["y"]), float(z["radius"]))
                    for z in raw["zones"]),
    )
    tasks = []
    seen = set()
    for t in raw["tasks"]:
        spec = TaskSpec(
            task_id=t["task_id"], command=t["command"], skill=t["skill"],
            target=t.get("target"), destination=t.get("destination"),
            family=t.get("family", "default"),
        )
        if spec.task_id in seen:
            raise SimError(f"duplicate task_id {spec.task_id!r}")
        seen.add(spec.task_id)
        if spec.target:
            roster.object_spec(spec.target)
        if spec.destination:
            roster.zone_spec(spec.destination)
        tasks.append(spec)
    return roster, tasks


# --------------------------------------------------------------------------
# World state
# --------------------------------------------------------------------------

@dataclass
class SimWorld:
    roster: Roster
    gripper_x: float
    gripper_y: float
    gripper_theta: float
    aperture: float
    positions: dict        # object_id -> np.ndarray (2,)
    present: dict          # object_id -> bool
    held: str | None = None
    held_streak: int = 0
    step_count: int = 0
    initial_positions: dict = field(default_factory=dict)
    wipe_spans: dict = field(default_factory=dict)   # zone_id -> [lo, hi] local x
    a_max_pos: float = A_MAX_POS
    a_max_rot: float = A_MAX_ROT
    grip_rate: float = G_RATE
    grasp_radius: float = GRASP_R
    body_radius: float = BODY_R
    wipe_align_tol: float = WIPE_ALIGN_TOL

    def gripper_pos(self) -> np.ndarray:
        return np.array([self.gripper_x, self.gripper_y])


def to_observation(world: SimWorld) -> Observation:
    objs = tuple(
        ObjectState(oid,
                    float(world.positions[oid][0]) if world.present[oid] else 0.0,
                    float(world.positions[oid][1]) if world.present[oid] else 0.0,
                    world.present[oid])
        for oid in world.roster.object_ids
    )
    zones = tuple(ZoneState(z.zone_id, z.x, z.y, z.radius) for z in world.roster.zones)
    return Observation(world.gripper_x, world.gripper_y, world.gripper_theta,
                       world.aperture, objs, zones)


def obs_vector(world: SimWorld) -> np.ndarray:
    return to_observation(world).to_vector()


# --------------------------------------------------------------------------
# Reset
# --------------------------------------------------------------------------

_OBJ_MARGIN = 0.08       # keep objects off the walls
_OBJ_SEP = 0.06          # min center distance between any two objects
_HOME_CLEAR = 0.08       # keep objects away from the gripper's home pose
_ZONE_CLEAR = 0.05       # extra clearance past each zone radius
_PUSH_X_RANGE = (0.15, 0.65)   # push targets need headroom to the right

_CANONICAL_SEED = 0xD5


def reset(roster: Roster, task: TaskSpec, seed: int, n_distractors: int = 1,
          randomize: bool = True, home: tuple = HOME,
          a_max_pos: float = A_MAX_POS, a_max_rot: float = A_MAX_ROT,
          grip_rate: float = G_RATE, grasp_radius: float = GRASP_R,
          body_radius: float = BODY_R, wipe_align_tol: float = WIPE_ALIGN_TOL) -> SimWorld:
    """Fresh world for (task, seed): required objects plus distractors placed
    by rejection sampling, gripper at home. Deterministic per
    (task, seed, n_distractors); randomize=False ignores the seed and yields
    one canonical layout per task."""
    required = task.required_objects()
    pool = [oid for oid in roster.object_ids if oid not in required]
    if n_distractors > len(pool):
        raise SimError(f"cannot place {n_distractors} distractors from a pool of {len(pool)}")
    if randomize:
        rng = rng_stream(seed, "reset", task.task_id, n_distractors)
    else:
        rng = rng_stream(_CANONICAL_SEED, "canonical", task.task_id, n_distractors)
    distractors = list(rng.choice(pool, size=n_distractors, replace=False)) if n_distractors else []

    positions = {oid: np.zeros(2) for oid in roster.object_ids}
    present = {oid: False for oid in roster.object_ids}
    placed: list[tuple[np.ndarray, float]] = []
    home_pos = np.array(home[:2])

    for oid in list(required) + distractors:
        spec = roster.object_spec(oid)
        is_push_target = task.skill == "push" and oid == task.target
        for attempt in range(10_000):
            if is_push_target:
                x = rng.uniform(_PUSH_X_RANGE[0], _PUSH_X_RANGE[1])
            else:
                x = rng.uniform(_OBJ_MARGIN, 1.0 - _OBJ_MARGIN)
            y = rng.uniform(_OBJ_MARGIN, 1.0 - _OBJ_MARGIN)
            pos = np.array([x, y])
            if any(np.linalg.norm(pos - q) < _OBJ_SEP for q, _ in placed):
                continue
            if any(np.linalg.norm(pos - np.array([z.x, z.y])) < z.radius + _ZONE_CLEAR
                   for z in roster.zones):
                continue
            if np.linalg.norm(pos - home_pos) < _HOME_CLEAR:
                continue
            break
        else:
            raise PlacementError(f"could not place {oid!r} after 10000 attempts")
        positions[oid] = pos
        present[oid] = True
        placed.append((pos, spec.radius))

    world = SimWorld(
        roster=roster,
        gripper_x=home[0], gripper_y=home[1], gripper_theta=home[2],
        aperture=1.0,
        positions=positions, present=present,
        a_max_pos=a_max_pos, a_max_rot=a_max_rot, grip_rate=grip_rate,
        grasp_radius=grasp_radius, body_radius=body_radius,
        wipe_align_tol=wipe_align_tol,
    )
    world.initial_positions = {oid: positions[oid].copy()
                               for oid in roster.object_ids if present[oid]}
    return world


# --------------------------------------------------------------------------
# Dynamics
# --------------------------------------------------------------------------

def _wipe_contact(world: SimWorld, zone: ZoneSpec) -> bool:
    if world.aperture >= 0.5:
        return False
    d = math.hypot(world.gripper_x - zone.x, world.gripper_y - zone.y)
    return d <= zone.radius and abs(wrap_angle(world.gripper_theta)) <= world.wipe_align_tol


def clamp_action(world: SimWorld, action: RawAction) -> RawAction:
    """The action the actuators will really execute: deltas clipped to the
    per-step limits, grip target to [0, 1]."""
    vals = action.as_list()
    if not all(math.isfinite(v) for v in vals):
        raise SimError("non-finite action")
    return RawAction(
        dx=min(max(action.dx, -world.a_max_pos), world.a_max_pos),
        dy=min(max(action.dy, -world.a_max_pos), world.a_max_pos),
        dtheta=min(max(action.dtheta, -world.a_max_rot), world.a_max_rot),
        gripper_target=min(max(action.gripper_target, 0.0), 1.0),
    )


def step(world: SimWorld, action: RawAction) -> SimWorld:
    """Advance one tick in place (also returns the world).

    Order: integrate pose, move aperture, bind/release on 0.5 crossings,
    track the held object, resolve closed-gripper contacts along the motion
    path, update per-task trackers.
    """
    clamped = clamp_action(world, action)
    dx, dy = clamped.dx, clamped.dy
    dth = clamped.dtheta
    grip_target = clamped.gripper_target

    x0, y0 = world.gripper_x, world.gripper_y
    x1 = min(max(x0 + dx, 0.0), 1.0)
    y1 = min(max(y0 + dy, 0.0), 1.0)
    world.gripper_x, world.gripper_y = x1, y1
    world.gripper_theta = wrap_angle(world.gripper_theta + dth)

    old_ap = world.aperture
    delta = min(max(grip_target - old_ap, -world.grip_rate), world.grip_rate)
    new_ap = old_ap + delta
    world.aperture = new_ap

    just_bound = False
    if old_ap >= 0.5 and new_ap < 0.5 and world.held is None:
        best, best_d = None, world.grasp_radius
        for oid in world.roster.object_ids:
            if not world.present[oid]:
                continue
            d = float(np.linalg.norm(world.positions[oid] - world.gripper_pos()))
            if d <= best_d:
                best, best_d = oid, d
        if best is not None:
            world.held = best
            just_bound = True
    elif old_ap < 0.5 and new_ap >= 0.5 and world.held is not None:
        world.held = None

    if world.held is not None:
        world.positions[world.held] = world.gripper_pos()

    # closed gripper shoves anything it overlaps; replay the motion path in
    # short substeps so fast moves cannot tunnel through small objects
    if new_ap < 0.5:
        travel = max(abs(x1 - x0), abs(y1 - y0))
        n_sub = max(1, math.ceil(travel / _SUBSTEP))
        for k in range(1, n_sub + 1):
            gp = np.array([x0 + (x1 - x0) * k / n_sub, y0 + (y1 - y0) * k / n_sub])
            for oid in world.roster.object_ids:
                if not world.present[oid] or oid == world.held:
                    continue
                contact_r = world.body_radius + world.roster.object_spec(oid).radius
                offset = world.positions[oid] - gp
                dist = float(np.linalg.norm(offset))
                if dist < 1e-9 or dist >= contact_r:
                    continue
                pushed = gp + offset / dist * contact_r
                world.positions[oid] = np.clip(pushed, 0.0, 1.0)

    if world.held is not None:
        world.held_streak = 1 if just_bound else world.held_streak + 1
    else:
        world.held_streak = 0

    for zone in world.roster.zones:
        if _wipe_contact(world, zone):
            rel = min(max(world.gripper_x - zone.x, -zone.radius), zone.radius)
            span = world.wipe_spans.get(zone.zone_id)
            if span is None:
                world.wipe_spans[zone.zone_id] = [rel, rel]
            else:
                span[0] = min(span[0], rel)
                span[1] = max(span[1], rel)

    world.step_count += 1
    return world


# --------------------------------------------------------------------------
# Success predicates
# --------------------------------------------------------------------------

def check_success(task: TaskSpec, world: SimWorld) -> bool:
    if task.skill == "pick-place":
        if not world.present.get(task.target, False) or world.held == task.target:
            return False
        zone = world.roster.zone_spec(task.destination)
        d = float(np.linalg.norm(world.positions[task.target] - np.array([zone.x, zone.y])))
        return d <= task.place_radius
    if task.skill == "grasp":
        return world.held == task.target and world.held_streak >= task.grasp_hold_steps
    if task.skill == "push":
        if not world.present.get(task.target, False):
            return False
        start = world.initial_positions.get(task.target)
        if start is None:
            return False
        return float(world.positions[task.target][0] - start[0]) >= task.push_distance
    if task.skill == "wipe":
        zone = world.roster.zone_spec(task.destination)
        span = world.wipe_spans.get(zone.zone_id)
        if span is None:
            return False
        return (span[1] - span[0]) >= task.wipe_coverage * 2.0 * zone.radius
    raise SimError(f"unknown skill {task.skill!r}")


# --------------------------------------------------------------------------
# Scripted expert
# --------------------------------------------------------------------------

def _clip(v: float, lim: float) -> float:
    return min(max(v, -lim), lim)


def _hold_action(world: SimWorld) -> RawAction:
    return RawAction(0.0, 0.0, 0.0, world.aperture)


def _heading_rot(world: SimWorld, dx: float, dy: float) -> float:
    if abs(dx) < 1e-6 and abs(dy) < 1e-6:
        return 0.0
    heading = math.atan2(dy, dx)
    return _clip(wrap_angle(heading - world.gripper_theta), world.a_max_rot)


def _step_toward(world: SimWorld, tx: float, ty: float, grip: float,
                 rotate_to: float | None = None) -> RawAction:
    dx = _clip(tx - world.gripper_x, world.a_max_pos)
    dy = _clip(ty - world.gripper_y, world.a_max_pos)
    if rotate_to is None:
        dth = _heading_rot(world, dx, dy)
    else:
        dth = _clip(wrap_angle(rotate_to - world.gripper_theta), world.a_max_rot)
    return RawAction(dx, dy, dth, grip)


# Grasp/release timing is unforgiving (binding happens only on the 0.5
# aperture crossing), so demonstrations decelerate on final approach and
# start closing well inside the grasp radius. Policies cloned from such
# traces keep their crossings inside the bind window despite timing error.
_SLOW_RADIUS = 0.12
_SLOW_STEP = 0.02
_CLOSE_ONSET = 0.015


def _approach_step(world: SimWorld, tx: float, ty: float, grip: float) -> RawAction:
    d = math.hypot(tx - world.gripper_x, ty - world.gripper_y)
    cap = world.a_max_pos if d > _SLOW_RADIUS else min(_SLOW_STEP, world.a_max_pos)
    dx = _clip(tx - world.gripper_x, cap)
    dy = _clip(ty - world.gripper_y, cap)
    return RawAction(dx, dy, _heading_rot(world, dx, dy), grip)


def scripted_expert(task: TaskSpec, world: SimWorld) -> RawAction:
    """Deterministic phase controller; reaches success from any valid reset
    well inside T_MAX steps. Phases are derived from world state alone, so
    the controller needs no memory and recovers after interventions."""
    if check_success(task, world):
        return _hold_action(world)

    if task.skill in ("pick-place", "grasp", "push") and not world.present.get(task.target, False):
        raise SimError(f"task {task.task_id!r} needs missing object {task.target!r}")

    if task.skill == "pick-place":
        zone = world.roster.zone_spec(task.destination)
        if world.held == task.target:
            d = math.hypot(zone.x - world.gripper_x, zone.y - world.gripper_y)
            if d <= task.place_radius * 0.5:
                return RawAction(0.0, 0.0, 0.0, 1.0)
            return _approach_step(world, zone.x, zone.y, 0.0)
        if world.held is not None:
            return RawAction(0.0, 0.0, 0.0, 1.0)   # drop the wrong object
        ox, oy = world.positions[task.target]
        if math.hypot(ox - world.gripper_x, oy - world.gripper_y) > _CLOSE_ONSET:
            return _approach_step(world, ox, oy, 1.0)
        return RawAction(0.0, 0.0, 0.0, 0.0)

    if task.skill == "grasp":
        if world.held == task.target:
            return RawAction(0.0, 0.0, 0.0, 0.0)
        if world.held is not None:
            return RawAction(0.0, 0.0, 0.0, 1.0)
        ox, oy = world.positions[task.target]
        if math.hypot(ox - world.gripper_x, oy - world.gripper_y) > _CLOSE_ONSET:
            return _approach_step(world, ox, oy, 1.0)
        return RawAction(0.0, 0.0, 0.0, 0.0)

    if task.skill == "push":
        if world.held is not None:
            return RawAction(0.0, 0.0, 0.0, 1.0)
        ox, oy = world.positions[task.target]
        contact_r = world.body_radius + world.roster.object_spec(task.target).radius
        gap = contact_r + 0.015
        if world.aperture > 0.45:
            sx, sy = ox - gap, oy
            if math.hypot(sx - world.gripper_x, sy - world.gripper_y) > _APPROACH_TOL:
                return _step_toward(world, sx, sy, 1.0, rotate_to=0.0)
            return RawAction(0.0, 0.0, _clip(-world.gripper_theta, world.a_max_rot), 0.0)
        # closed: shove along +x while tracking the object's y; if the fist is
        # not behind the object any more (odd hand-back state), reopen and restage
        behind = world.gripper_x <= ox - 0.5 * contact_r
        if not behind or abs(oy - world.gripper_y) > 0.05:
            return RawAction(0.0, 0.0, 0.0, 1.0)
        dy = _clip(oy - world.gripper_y, world.a_max_pos)
        return RawAction(world.a_max_pos, dy, _clip(-world.gripper_theta, world.a_max_rot), 0.0)

    if task.skill == "wipe":
        zone = world.roster.zone_spec(task.destination)
        sweep = 0.95 * zone.radius
        start_x, end_x = zone.x - sweep, zone.x + sweep
        if world.aperture >= 0.5:
            if math.hypot(start_x - world.gripper_x, zone.y - world.gripper_y) > _APPROACH_TOL:
                return _step_toward(world, start_x, zone.y, 1.0, rotate_to=0.0)
            if abs(wrap_angle(world.gripper_theta)) > 0.02:
                return RawAction(0.0, 0.0, _clip(-world.gripper_theta, world.a_max_rot), 1.0)
            return RawAction(0.0, 0.0, 0.0, 0.0)
        # closed: sweep toward the right edge; ran out of zone without enough
        # coverage (odd hand-back state) -> reopen and restage from the left
        if world.gripper_x >= end_x - 1e-9:
            return RawAction(0.0, 0.0, 0.0, 1.0)
        return _step_toward(world, end_x, zone.y, 0.0, rotate_to=0.0)

    raise SimError(f"unknown skill {task.skill!r}")


def expert_controller(task: TaskSpec, world: SimWorld):
    return scripted_expert(task, world), "expert"


# --------------------------------------------------------------------------
# Rollout
# --------------------------------------------------------------------------

def rollout(controller, roster: Roster, task: TaskSpec, seed: int,
            max_steps: int = T_MAX, n_distractors: int = 1, randomize: bool = True,
            collected_by: str = "scripted-expert", episode_id: str | None = None,
            world: SimWorld | None = None) -> Episode:
    """Run `controller(task, world) -> (action, source)` to success or the
    step budget. Frames are recorded before each action; success stops the
    episode at the next check."""
    if world is None:
        world = reset(roster, task, seed, n_distractors=n_distractors, randomize=randomize)
    frames = []
    outcome = "failure"
    for t in range(max_steps):
        if check_success(task, world):
            outcome = "success"
            break
        action, source = controller(task, world)
        action = clamp_action(world, action)  # record what actually executes
        frames.append(Frame(t=t, obs=obs_vector(world), action=action, source=source))
        step(world, action)
    else:
        if check_success(task, world):
            outcome = "success"
    if not frames:
        # success on the very first check still needs one frame for the record
        frames.append(Frame(t=0, obs=obs_vector(world), action=_hold_action(world),
                            source="expert"))
    return Episode(
        episode_id=episode_id or new_episode_id(),
        task_id=task.task_id,
        frames=frames,
        outcome=outcome,
        seed=seed,
        collected_by=collected_by,
    )


def collect_expert_dataset(roster: Roster, tasks, episodes_per_task: int,
                           seed0: int = 0, n_distractors: int = 1,
                           randomize: bool = True, id_gen=None,
                           max_steps: int = T_MAX) -> list[Episode]:
    """Scripted-expert demos: episodes_per_task rollouts per task with
    consecutive seeds starting at seed0."""
    id_gen = id_gen or EpisodeIdGen(seed0)
    out = []
    for task in tasks:
        for k in range(episodes_per_task):
            out.append(rollout(expert_controller, roster, task, seed=seed0 + k,
                               n_distractors=n_distractors, randomize=randomize,
                               collected_by="scripted-expert", episode_id=id_gen(),
                               max_steps=max_steps))
    return out
