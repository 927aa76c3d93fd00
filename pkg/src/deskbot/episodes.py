"""Episode data model and on-disk store.

Everything downstream (featurization, training, collection analytics) reads
and writes the types in this module.  The persistent format is UTF-8 JSON
lines: a header line carrying a config fingerprint, then one episode per
line.  Floats are serialized with 9 significant decimal digits; an episode
that has been through one write/read cycle re-serializes bit-exactly.

Header line::

    {"format": "deskbot-episodes/1", "obs_dim": <int>, "roster": "<hash>"}

Episode line::

    {"episode_id": ..., "task_id": ..., "seed": ..., "outcome": ...,
     "collected_by": ..., "frames": [{"t": ..., "obs": [...],
     "action": [dx, dy, dtheta, grip], "source": ...}], "audit": [...]}
"""

from __future__ import annotations

import json
import os
import secrets
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np

STORE_FORMAT = "deskbot-episodes/1"

SOURCES = ("expert", "policy", "human-intervention", "oracle-intervention")
INTERVENTION_SOURCES = ("human-intervention", "oracle-intervention")
OUTCOMES = ("success", "failure", "aborted")
COLLECTORS = ("scripted-expert", "policy", "shared-autonomy", "teleop")


class ValidationError(ValueError):
    pass


class StoreError(RuntimeError):
    pass


def canon_float(x: float) -> float:
    """Project a float onto the 9-significant-digit grid used on disk."""
    return float(format(float(x), ".9g"))


def _canon_list(values) -> list[float]:
    return [canon_float(v) for v in values]


# --------------------------------------------------------------------------
# Structured observation (simulator boundary)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectState:
    object_id: str
    x: float
    y: float
    present: bool


@dataclass(frozen=True)
class ZoneState:
    zone_id: str
    x: float
    y: float
    radius: float


@dataclass(frozen=True)
class Observation:
    """Structured world snapshot; `to_vector` flattens it for learning code.

    The flat layout is [gx, gy, gtheta, aperture] + per object [x, y, present]
    + per zone [x, y, radius], objects and zones in roster order.  For a fixed
    roster the flattening is a bijection.
    """

    gripper_x: float
    gripper_y: float
    gripper_theta: float
    gripper_aperture: float
    objects: tuple[ObjectState, ...]
    zones: tuple[ZoneState, ...]

    def to_vector(self) -> np.ndarray:
        parts = [self.gripper_x, self.gripper_y, self.gripper_theta, self.gripper_aperture]
        for obj in self.objects:
            parts.extend((obj.x, obj.y, 1.0 if obj.present else 0.0))
        for zone in self.zones:
            parts.extend((zone.x, zone.y, zone.radius))
        return np.asarray(parts, dtype=np.float64)

    @staticmethod
    def from_vector(vec: np.ndarray, object_ids: tuple[str, ...],
                    zone_ids: tuple[str, ...]) -> "Observation":
        expected = 4 + 3 * len(object_ids) + 3 * len(zone_ids)
        if len(vec) != expected:
            raise ValidationError(f"observation vector length {len(vec)}, expected {expected}")
        objs = []
        off = 4
        for oid in object_ids:
            objs.append(ObjectState(oid, float(vec[off]), float(vec[off + 1]), vec[off + 2] != 0.0))
            off += 3
        zones = []
        for zid in zone_ids:
            zones.append(ZoneState(zid, float(vec[off]), float(vec[off + 1]), float(vec[off + 2])))
            off += 3
        return Observation(float(vec[0]), float(vec[1]), float(vec[2]), float(vec[3]),
                           tuple(objs), tuple(zones))


def obs_dim(n_objects: int, n_zones: int) -> int:
    return 4 + 3 * n_objects + 3 * n_zones


# --------------------------------------------------------------------------
# Actions, frames, episodes
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RawAction:
    dx: float
    dy: float
    dtheta: float
    gripper_target: float

    def as_list(self) -> list[float]:
        return [self.dx, self.dy, self.dtheta, self.gripper_target]


@dataclass(frozen=True)
class Frame:
    t: int
    obs: np.ndarray      # flat observation vector
    action: RawAction
    source: str

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.t == other.t and self.source == other.source
                and self.action == other.action
                and np.array_equal(self.obs, other.obs))


@dataclass(frozen=True)
class Task:
    """Registered task: a command resolvable to registered verbs/nouns.

    `skill` decides which target fields are required: pick-place needs both
    target and destination, push/grasp need a target object, wipe needs a
    destination zone.
    """

    task_id: str
    command: str
    skill: str
    target_object_id: str | None = None
    target_zone_or_object_id: str | None = None
    family: str = "default"


@dataclass
class Episode:
    episode_id: str
    task_id: str
    frames: list[Frame]
    outcome: str
    seed: int
    collected_by: str
    audit: list[dict] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (self.episode_id == other.episode_id and self.task_id == other.task_id
                and self.outcome == other.outcome and self.seed == other.seed
                and self.collected_by == other.collected_by and self.audit == other.audit
                and len(self.frames) == len(other.frames)
                and all(a == b for a, b in zip(self.frames, other.frames)))


def intervention_run_count(episode: Episode) -> int:
    """Number of maximal contiguous runs of intervention-source frames."""
    runs = 0
    in_run = False
    for frame in episode.frames:
        if frame.source in INTERVENTION_SOURCES:
            if not in_run:
                runs += 1
            in_run = True
        else:
            in_run = False
    return runs


def validate_episode(episode: Episode, a_max_pos: float = 0.05, a_max_rot: float = 0.2) -> None:
    """Raise ValidationError unless the episode satisfies its invariants."""
    if not episode.frames:
        raise ValidationError("episode has no frames")
    if episode.outcome not in OUTCOMES:
        raise ValidationError(f"bad outcome {episode.outcome!r}")
    if episode.collected_by not in COLLECTORS:
        raise ValidationError(f"bad collected_by {episode.collected_by!r}")
    if not episode.episode_id or not episode.task_id:
        raise ValidationError("episode_id and task_id must be non-empty")
    prev_t = None
    for frame in episode.frames:
        if prev_t is not None and frame.t <= prev_t:
            raise ValidationError(f"frame t={frame.t} not strictly increasing")
        prev_t = frame.t
        if frame.source not in SOURCES:
            raise ValidationError(f"bad frame source {frame.source!r}")
        if not np.all(np.isfinite(frame.obs)):
            raise ValidationError(f"non-finite observation at t={frame.t}")
        act = frame.action
        for val in act.as_list():
            if not np.isfinite(val):
                raise ValidationError(f"non-finite action at t={frame.t}")
        # small slack over the clamp so 9-digit canonical values never trip
        tol = 1e-9
        if abs(act.dx) > a_max_pos + tol or abs(act.dy) > a_max_pos + tol:
            raise ValidationError(f"position delta exceeds clamp at t={frame.t}")
        if abs(act.dtheta) > a_max_rot + tol:
            raise ValidationError(f"rotation delta exceeds clamp at t={frame.t}")
        if not (0.0 <= act.gripper_target <= 1.0):
            raise ValidationError(f"gripper target outside [0, 1] at t={frame.t}")


# --------------------------------------------------------------------------
# Sortable unique ids
# --------------------------------------------------------------------------

_B32 = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"  # Crockford alphabet


def _b32_encode(value: int, length: int) -> str:
    chars = []
    for _ in range(length):
        chars.append(_B32[value & 31])
        value >>= 5
    return "".join(reversed(chars))


def new_episode_id() -> str:
    """Wall-clock sortable 26-char id (48-bit ms timestamp + 80 random bits)."""
    ts = int(time.time() * 1000) & ((1 << 48) - 1)
    return _b32_encode(ts, 10) + _b32_encode(secrets.randbits(80), 16)


class EpisodeIdGen:
    """Deterministic id stream for reproducible collection runs.

    Ids keep the sortable 26-char shape; the time field is a logical counter
    and the entropy field is a hash of (seed, counter).
    """

    def __init__(self, seed: int):
        self._seed = int(seed)
        self._counter = 0

    def __call__(self) -> str:
        import hashlib

        head = _b32_encode(self._counter & ((1 << 48) - 1), 10)
        digest = hashlib.sha256(f"{self._seed}:{self._counter}".encode()).digest()
        tail = _b32_encode(int.from_bytes(digest[:10], "big"), 16)
        self._counter += 1
        return head + tail


# --------------------------------------------------------------------------
# JSON-lines store
# --------------------------------------------------------------------------

def _episode_record(episode: Episode) -> dict:
    return {
        "episode_id": episode.episode_id,
        "task_id": episode.task_id,
        "seed": episode.seed,
        "outcome": episode.outcome,
        "collected_by": episode.collected_by,
        "frames": [
            {
                "t": frame.t,
                "obs": _canon_list(frame.obs),
                "action": _canon_list(frame.action.as_list()),
                "source": frame.source,
            }
            for frame in episode.frames
        ],
        "audit": episode.audit,
    }


def _episode_from_record(rec: dict) -> Episode:
    frames = [
        Frame(
            t=int(f["t"]),
            obs=np.asarray(f["obs"], dtype=np.float64),
            action=RawAction(*[float(v) for v in f["action"]]),
            source=f["source"],
        )
        for f in rec["frames"]
    ]
    return Episode(
        episode_id=rec["episode_id"],
        task_id=rec["task_id"],
        frames=frames,
        outcome=rec["outcome"],
        seed=int(rec["seed"]),
        collected_by=rec["collected_by"],
        audit=list(rec.get("audit", [])),
    )


@dataclass(frozen=True)
class StoreHeader:
    obs_dim: int
    roster: str

    def as_dict(self) -> dict:
        return {"format": STORE_FORMAT, "obs_dim": self.obs_dim, "roster": self.roster}


def create_store(path: str, header: StoreHeader) -> None:
    if os.path.exists(path):
        raise StoreError(f"store already exists: {path}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header.as_dict(), separators=(",", ":")) + "\n")


def read_header(path: str) -> StoreHeader:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    try:
        rec = json.loads(first)
        if rec.get("format") != STORE_FORMAT:
            raise ValueError(f"unexpected format {rec.get('format')!r}")
        return StoreHeader(obs_dim=int(rec["obs_dim"]), roster=str(rec["roster"]))
    except (ValueError, KeyError) as exc:
        raise StoreError(f"{path}: bad store header: {exc}") from exc


def write_episode(episode: Episode, store_path: str,
                  a_max_pos: float = 0.05, a_max_rot: float = 0.2) -> None:
    """Validate and append one episode.  Single-writer append semantics."""
    validate_episode(episode, a_max_pos=a_max_pos, a_max_rot=a_max_rot)
    header = read_header(store_path)
    if episode.frames and len(episode.frames[0].obs) != header.obs_dim:
        raise StoreError(
            f"obs dim {len(episode.frames[0].obs)} does not match store ({header.obs_dim})")
    line = json.dumps(_episode_record(episode), separators=(",", ":"))
    with open(store_path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")


def read_dataset(store_path: str,
                 task_id: str | Iterable[str] | None = None,
                 collected_by: str | Iterable[str] | None = None,
                 outcome: str | Iterable[str] | None = None,
                 predicate: Callable[[Episode], bool] | None = None) -> list[Episode]:
    """All episodes matching the filters, in write order."""
    def as_set(v):
        if v is None:
            return None
        return {v} if isinstance(v, str) else set(v)

    tasks, collectors, outcomes = as_set(task_id), as_set(collected_by), as_set(outcome)
    episodes = []
    with open(store_path, "r", encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if index == 0:
                continue  # header, validated by read_header below
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                ep = _episode_from_record(rec)
            except (ValueError, KeyError, TypeError) as exc:
                raise StoreError(f"{store_path}: malformed record at index {index}: {exc}") from exc
            if tasks is not None and ep.task_id not in tasks:
                continue
            if collectors is not None and ep.collected_by not in collectors:
                continue
            if outcomes is not None and ep.outcome not in outcomes:
                continue
            if predicate is not None and not predicate(ep):
                continue
            episodes.append(ep)
    read_header(store_path)
    return episodes


def merge_datasets(path_a: str, path_b: str, out_path: str) -> None:
    """Union of two stores with the same fingerprint, order preserved per input."""
    header_a, header_b = read_header(path_a), read_header(path_b)
    if header_a != header_b:
        raise StoreError(f"config fingerprint mismatch: {header_a} vs {header_b}")
    eps_a, eps_b = read_dataset(path_a), read_dataset(path_b)
    seen = {ep.episode_id for ep in eps_a}
    for ep in eps_b:
        if ep.episode_id in seen:
            raise StoreError(f"duplicate episode_id in merge: {ep.episode_id}")
        seen.add(ep.episode_id)
    create_store(out_path, header_a)
    with open(out_path, "a", encoding="utf-8") as fh:
        for ep in eps_a + eps_b:
            fh.write(json.dumps(_episode_record(ep), separators=(",", ":")) + "\n")


def append_episodes(store_path: str, episodes: Iterable[Episode],
                    a_max_pos: float = 0.05, a_max_rot: float = 0.2) -> None:
    for ep in episodes:
        write_episode(ep, store_path, a_max_pos=a_max_pos, a_max_rot=a_max_rot)


def annotate_episode(store_path: str, episode_id: str, new_outcome: str,
                     timestamp: str | None = None) -> None:
    """Edit one episode's outcome in place, appending an audit entry.

    The rest of the record is untouched.  The store file is rewritten
    atomically (temp file + rename).
    """
    if new_outcome not in OUTCOMES:
        raise ValidationError(f"bad outcome {new_outcome!r}")
    header = read_header(store_path)
    episodes = read_dataset(store_path)
    hit = False
    for i, ep in enumerate(episodes):
        if ep.episode_id == episode_id:
            stamp = timestamp or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
            audit = ep.audit + [{"old": ep.outcome, "new": new_outcome, "timestamp": stamp}]
            episodes[i] = replace(ep, outcome=new_outcome, audit=audit)
            hit = True
            break
    if not hit:
        raise StoreError(f"unknown episode_id {episode_id!r}")
    tmp = store_path + ".tmp"
    if os.path.exists(tmp):
        os.remove(tmp)
    create_store(tmp, header)
    with open(tmp, "a", encoding="utf-8") as fh:
        for ep in episodes:
            fh.write(json.dumps(_episode_record(ep), separators=(",", ":")) + "\n")
    os.replace(tmp, store_path)
