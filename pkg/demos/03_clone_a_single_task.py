"""
Cloning a single task from expert demonstrations
================================================

The smallest useful pipeline: collect scripted-expert episodes, featurize
them, train the FiLM-conditioned policy on the labels, and measure
autonomous success on fresh seeds. Takes about a minute; the packaged
wrapper is deskbot.benchmarks.single_task_bc. Note the sharp capability
cliff: half the steps or a narrower torso and success collapses toward
zero, because a near-miss grasp scores nothing.
"""

import time

import numpy as np

from deskbot.benchmarks import SINGLE_TASK_SETTINGS, collect_demos
from deskbot.nn import rng_stream
from deskbot.sim import load_tasks
from deskbot.training import (
    build_task_vectors, evaluate_policy, make_act_fn,
    train_policy_on_episodes,
)

roster, tasks = load_tasks()
task = next(t for t in tasks if t.task_id == "place-apple-tray")

# 50 demonstrations on randomized scenes, no distractors.
demos = collect_demos(roster, task, n=50, seed0=20000, n_distractors=0)
print(f"collected {len(demos)} demos, "
      f"median length {int(np.median([len(e.frames) for e in demos]))} frames")

# Condition on a one-hot task vector (a single task needs no language).
vecs = build_task_vectors([task], "one-hot", dim=8)

settings = SINGLE_TASK_SETTINGS  # 10000 steps, batch 64, torso (192, 192, 192)
t0 = time.time()
net, trace = train_policy_on_episodes(demos, vecs, rng_stream(77, "train"),
                                      settings)
print(f"trained {settings.steps} steps in {time.time() - t0:.0f}s, "
      f"loss {trace[0]:.2f} -> {trace[-1]:.2f}")

# Evaluate autonomously on 50 unseen scene seeds.
act = make_act_fn(net, vecs)
rates = evaluate_policy(act, roster, [task], n_seeds=50, seed0=10000,
                        n_distractors=0)
print(f"success over 50 fresh scenes: {rates[task.task_id]:.0%}")
