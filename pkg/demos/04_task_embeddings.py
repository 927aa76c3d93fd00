"""
Task embeddings: language vectors and the trajectory encoder
============================================================

Every task is conditioned through a unit-norm vector z. Language
commands map to deterministic compositional vectors (summed hashed
content tokens), so related commands land near each other. The
trajectory encoder learns to map demonstration clips to the same space:
its loss pulls a human-analog clip and a robot demo of the same task
toward the task's language vector while a behavior-cloning term keeps
the embedding useful for control.
"""

import time

import numpy as np

from deskbot.benchmarks import collect_demos
from deskbot.embeddings import (
    ObsLayout, build_encoder_dataset, clip_from_episode, init_encoder,
    language_embedding, retrieval_accuracy, train_encoder,
)
from deskbot.nn import rng_stream
from deskbot.policy import init_policy
from deskbot.sim import load_tasks

# Language vectors compose: shared words mean shared direction.
a = language_embedding("place the apple on the tray", dim=64)
b = language_embedding("place the banana on the tray", dim=64)
c = language_embedding("wipe the desk with the sponge", dim=64)
print("cosine(place apple, place banana) =", round(float(a.vec @ b.vec), 3))
print("cosine(place apple, wipe desk)    =", round(float(a.vec @ c.vec), 3))

# A small demo corpus over four tasks.
roster, tasks = load_tasks()
chosen = [t for t in tasks if t.task_id in
          ("place-apple-tray", "place-banana-bowl", "push-sponge",
           "grasp-pepper")]
episodes, held_out = [], []
for i, task in enumerate(chosen):
    eps = collect_demos(roster, task, n=14, seed0=3000 + 500 * i,
                        n_distractors=0)
    episodes.extend(eps[:10])
    held_out.extend(clip_from_episode(ep) for ep in eps[10:])

layout = ObsLayout(n_objects=len(roster.objects), n_zones=len(roster.zones))
commands = {t.task_id: t.command for t in chosen}
dataset = build_encoder_dataset(episodes, commands, layout, dim=64)
print(f"\nencoder dataset: {sum(len(v) for v in dataset.robot.values())} robot "
      f"demos, {sum(len(v) for v in dataset.human.values())} human-analog clips")

# Joint training: encoder + a policy head reading the encoder's z.
obs_dim = episodes[0].frames[0].obs.shape[0]
encoder = init_encoder(rng_stream(1, "enc"), obs_dim, dim=64)
policy_net = init_policy(rng_stream(1, "pol"), obs_dim, 64)
t0 = time.time()
trace = train_encoder(dataset, encoder, policy_net, steps=400, batch_size=12,
                      rng=rng_stream(1, "steps"))
print(f"400 joint steps in {time.time() - t0:.0f}s, "
      f"loss {trace[0]:.2f} -> {trace[-1]:.2f}")

# Retrieval: do held-out robot clips land nearest their own command?
lang = {t.task_id: language_embedding(t.command, dim=64) for t in chosen}
acc = retrieval_accuracy(encoder, held_out, lang)
print(f"top-1 retrieval on {len(held_out)} held-out clips: {acc:.0%}")
