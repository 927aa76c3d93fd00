"""Turn recorded trajectories into training labels.

Action labels are state differences over an adaptive horizon: starting at
N=1, the horizon grows until the gripper aperture changes by more than
GRIP_THRESHOLD or the pose moves by more than POSE_THRESHOLD in the scaled
pose metric (x, y, theta*ROT_SCALE). Frames whose entire future stays
within both thresholds produce no label. Each label also carries a chained
open-loop target sequence of up to H future actions with a validity mask.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .episodes import Episode, INTERVENTION_SOURCES, Observation, canon_float

GRIP_THRESHOLD = 0.01
POSE_THRESHOLD = 0.05
ROT_SCALE = 0.1
OPEN_LOOP_H = 10

# adaptive_horizon result when no future frame crosses either threshold
END_OF_EPISODE = None


class FeaturizeError(ValueError):
    pass


def wrap_angle(x: float) -> float:
    """Map an angle to (-pi, pi]."""
    out = math.fmod(x + math.pi, 2.0 * math.pi)
    if out <= 0.0:
        out += 2.0 * math.pi
    return out - math.pi


def _as_vectors(traj) -> np.ndarray:
    rows = []
    for item in traj:
        if isinstance(item, Observation):
            rows.append(item.to_vector())
        else:
            rows.append(np.asarray(item, dtype=np.float64))
    return np.asarray(rows, dtype=np.float64)


def _pose_delta(vecs: np.ndarray, t: int, u: int, rot_scale: float) -> np.ndarray:
    dx = vecs[u, 0] - vecs[t, 0]
    dy = vecs[u, 1] - vecs[t, 1]
    dth = wrap_angle(vecs[u, 2] - vecs[t, 2])
    return np.array([dx, dy, dth * rot_scale])


@dataclass(frozen=True)
class ActionLabel:
    obs: np.ndarray          # flat observation at time t
    d_pos: np.ndarray        # (dx, dy) to the horizon frame
    d_rot: float             # wrapped rotation delta
    grip_target: float       # aperture at the horizon frame
    horizon_n: int
    open_loop: np.ndarray    # (H, 4): dx, dy, dtheta, grip per chained slot
    open_loop_mask: np.ndarray  # (H,) booleans; masked slots carry no loss

    def __post_init__(self):
        if self.horizon_n < 1:
            raise FeaturizeError("horizon_n must be >= 1")
        if self.open_loop.shape != (OPEN_LOOP_H, 4):
            raise FeaturizeError(f"open_loop shape {self.open_loop.shape}")
        if self.open_loop_mask.shape != (OPEN_LOOP_H,):
            raise FeaturizeError(f"open_loop_mask shape {self.open_loop_mask.shape}")


def adaptive_horizon(traj, t: int,
                     grip_threshold: float = GRIP_THRESHOLD,
                     pose_threshold: float = POSE_THRESHOLD,
                     rot_scale: float = ROT_SCALE):
    """Smallest N >= 1 whose future frame crosses either movement threshold.

    Returns END_OF_EPISODE when no remaining frame does.
    """
    vecs = _as_vectors(traj)
    if not (0 <= t < len(vecs) - 1):
        raise FeaturizeError(f"t={t} out of range for trajectory of length {len(vecs)}")
    for n in range(1, len(vecs) - t):
        u = t + n
        if abs(vecs[u, 3] - vecs[t, 3]) > grip_threshold:
            return n
        if np.linalg.norm(_pose_delta(vecs, t, u, rot_scale)) > pose_threshold:
            return n
    return END_OF_EPISODE


def _raw_label(vecs: np.ndarray, t: int, n: int) -> tuple[np.ndarray, float, float]:
    u = t + n
    d_pos = vecs[u, :2] - vecs[t, :2]
    d_rot = wrap_angle(vecs[u, 2] - vecs[t, 2])
    return d_pos, d_rot, float(vecs[u, 3])


def open_loop_targets(traj, t: int,
                      grip_threshold: float = GRIP_THRESHOLD,
                      pose_threshold: float = POSE_THRESHOLD,
                      rot_scale: float = ROT_SCALE,
                      horizon: int = OPEN_LOOP_H):
    """Chained adaptive labels starting at t: slot k is the label at t_k,
    with t_0 = t and t_{k+1} = t_k + N(t_k). Returns (targets, mask)."""
    vecs = _as_vectors(traj)
    targets = np.zeros((horizon, 4))
    mask = np.zeros(horizon, dtype=bool)
    tk = t
    for k in range(horizon):
        if tk >= len(vecs) - 1:
            break
        n = adaptive_horizon(vecs, tk, grip_threshold, pose_threshold, rot_scale)
        if n is END_OF_EPISODE:
            break
        d_pos, d_rot, grip = _raw_label(vecs, tk, n)
        targets[k] = (d_pos[0], d_pos[1], d_rot, grip)
        mask[k] = True
        tk += n
    return targets, mask


def make_label(traj, t: int,
               grip_threshold: float = GRIP_THRESHOLD,
               pose_threshold: float = POSE_THRESHOLD,
               rot_scale: float = ROT_SCALE,
               horizon: int = OPEN_LOOP_H):
    """ActionLabel at frame t, or None when the static-suffix rule discards it."""
    vecs = _as_vectors(traj)
    n = adaptive_horizon(vecs, t, grip_threshold, pose_threshold, rot_scale)
    if n is END_OF_EPISODE:
        return None
    d_pos, d_rot, grip = _raw_label(vecs, t, n)
    targets, mask = open_loop_targets(vecs, t, grip_threshold, pose_threshold,
                                      rot_scale, horizon)
    return ActionLabel(obs=vecs[t].copy(), d_pos=d_pos, d_rot=d_rot,
                       grip_target=grip, horizon_n=n,
                       open_loop=targets, open_loop_mask=mask)


def featurize_dataset(episodes: list[Episode],
                      grip_threshold: float = GRIP_THRESHOLD,
                      pose_threshold: float = POSE_THRESHOLD,
                      rot_scale: float = ROT_SCALE,
                      horizon: int = OPEN_LOOP_H,
                      shared_autonomy: str = "interventions"):
    """All labels from a dataset as (task_id, ActionLabel), episode order then t.

    For shared-autonomy episodes only frames recorded during interventions
    anchor labels (the policy's own motion is not imitated); set
    shared_autonomy="all" to label every frame regardless of source.
    """
    if shared_autonomy not in ("interventions", "all"):
        raise FeaturizeError(f"bad shared_autonomy mode {shared_autonomy!r}")
    out = []
    for ep in episodes:
        vecs = np.asarray([f.obs for f in ep.frames], dtype=np.float64)
        if len(vecs) < 2:
            continue
        restrict = shared_autonomy == "interventions" and ep.collected_by == "shared-autonomy"
        for t in range(len(vecs) - 1):
            if restrict and ep.frames[t].source not in INTERVENTION_SOURCES:
                continue
            label = make_label(vecs, t, grip_threshold, pose_threshold, rot_scale, horizon)
            if label is not None:
                out.append((ep.task_id, label))
    return out


def label_counts(labels) -> dict:
    counts: dict[str, int] = {}
    for task_id, _ in labels:
        counts[task_id] = counts.get(task_id, 0) + 1
    return counts


# --------------------------------------------------------------------------
# Optional label dump (same JSON-lines discipline as the episode store)
# --------------------------------------------------------------------------

LABELS_FORMAT = "deskbot-labels/1"


def dump_labels(labels, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        obs_dim = int(labels[0][1].obs.shape[0]) if labels else 0
        fh.write(json.dumps({"format": LABELS_FORMAT, "obs_dim": obs_dim},
                            separators=(",", ":")) + "\n")
        for task_id, lab in labels:
            rec = {
                "task_id": task_id,
                "obs": [canon_float(v) for v in lab.obs],
                "d_pos": [canon_float(v) for v in lab.d_pos],
                "d_rot": canon_float(lab.d_rot),
                "grip_target": canon_float(lab.grip_target),
                "horizon_n": lab.horizon_n,
                "open_loop": [[canon_float(v) for v in row] for row in lab.open_loop],
                "open_loop_mask": [int(v) for v in lab.open_loop_mask],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_labels(path: str):
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != LABELS_FORMAT:
            raise FeaturizeError(f"{path}: unexpected label-file format")
        for index, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                lab = ActionLabel(
                    obs=np.asarray(rec["obs"], dtype=np.float64),
                    d_pos=np.asarray(rec["d_pos"], dtype=np.float64),
                    d_rot=float(rec["d_rot"]),
                    grip_target=float(rec["grip_target"]),
                    horizon_n=int(rec["horizon_n"]),
                    open_loop=np.asarray(rec["open_loop"], dtype=np.float64),
                    open_loop_mask=np.asarray(rec["open_loop_mask"], dtype=bool),
                )
                labels.append((rec["task_id"], lab))
            except (ValueError, KeyError, TypeError) as exc:
                raise FeaturizeError(f"{path}: malformed label at index {index}: {exc}") from exc
    return labels
