"""
From recorded trajectories to training labels
=============================================

Policies are trained on state differences, not raw actions. For each
frame the featurizer looks ahead to the first frame where the gripper
has moved enough to matter (0.01 in aperture or 0.05 in pose, with
rotation scaled by 0.1 onto the position metric) and uses that
difference as the label. Frames in the motionless tail of an episode
produce no label at all.
"""

import numpy as np

from deskbot.featurize import adaptive_horizon, featurize_dataset, label_counts, make_label
from deskbot.sim import load_tasks, rollout, scripted_expert

roster, tasks = load_tasks()
task = next(t for t in tasks if t.task_id == "place-apple-tray")
episode = rollout(lambda t, w: (scripted_expert(t, w), "expert"),
                  roster, task, seed=7, n_distractors=0)
print(f"episode: {len(episode.frames)} frames, outcome {episode.outcome}")

# The adaptive horizon: fast motion labels against the next frame, slow
# motion (the expert decelerates on final approach) looks further ahead.
vecs = np.asarray([f.obs for f in episode.frames])
horizons = [adaptive_horizon(vecs, t) for t in range(len(vecs) - 1)]
print(f"horizons along the episode: {horizons}")

# A label bundles the pose delta, the gripper target, and ten chained
# future deltas for the open-loop auxiliary heads.
label = make_label(vecs, 0)
print(f"\nfirst label: d_pos {np.round(label.d_pos, 4)}, "
      f"d_rot {label.d_rot:.4f}, grip {label.grip_target:.1f}")
print(f"open-loop targets: {label.open_loop.shape[0]} steps, "
      f"{int(label.open_loop_mask.sum())} of them real")

# Over a dataset, labels are keyed by task; the static suffix of each
# episode is discarded (no measurable state difference remains ahead).
episodes = [rollout(lambda t, w: (scripted_expert(t, w), "expert"),
                    roster, task, seed=100 + k, n_distractors=0)
            for k in range(10)]
labels = featurize_dataset(episodes)
frames = sum(len(ep.frames) for ep in episodes)
print(f"\n10 episodes: {frames} frames -> {len(labels)} labels "
      f"({frames - len(labels)} static-tail frames discarded)")
print(f"per-task counts: {label_counts(labels)}")
