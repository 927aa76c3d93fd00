"""
Interactive collection: the gated aggregation loop
==================================================

Instead of spending the whole episode budget on demonstrations, deploy
the current policy and let a supervisor take over only when it drifts or
stalls. Here the supervisor is the synthetic gate: it compares progress
against the scripted expert's reference trace and intervenes with expert
actions when the policy deviates or stops making progress. Each round
retrains on everything collected so far. Watch the intervention column:
it moves opposite to success, so it works as a live performance proxy.
At these tiny settings one retrain lands badly, and the intervention
rate flags the regression without running a single evaluation rollout.
"""

import time

import numpy as np

from deskbot.benchmarks import collect_demos_mixed
from deskbot.dagger import (
    dagger_iterate, intervention_run_count, intervention_success_correlation,
)
from deskbot.nn import rng_stream
from deskbot.sim import load_tasks
from deskbot.training import (
    TrainSettings, build_task_vectors, evaluate_policy, make_act_fn,
    train_policy_on_episodes,
)

roster, tasks = load_tasks()
bench = [t for t in tasks if t.task_id in ("place-apple-tray", "push-sponge")]
vecs = build_task_vectors(bench, "one-hot", dim=4)
settings = TrainSettings(steps=1200, batch_size=64, torso_widths=(96, 96, 96))

# A thin starting dataset: 20 demonstrations across both tasks.
rng = rng_stream(3, "tasks")
seed_demos = collect_demos_mixed(roster, bench, 20, 5000, rng)


def trainer(episodes, iteration):
    net, _ = train_policy_on_episodes(list(episodes), vecs,
                                      rng_stream(40 + iteration, "train"),
                                      settings)
    return make_act_fn(net, vecs), None


def eval_fn(act_fn, iteration):
    rates = evaluate_policy(act_fn, roster, bench, 20, seed0=90000,
                            n_distractors=0)
    return float(np.mean(list(rates.values())))


t0 = time.time()
policies, reports, dataset = dagger_iterate(
    roster, bench, seed_demos, iterations=4, episodes_per_iter=15,
    trainer=trainer, seed0=9000, eval_fn=eval_fn, n_distractors=0)
print(f"4 rounds in {time.time() - t0:.0f}s; dataset grew "
      f"{len(seed_demos)} -> {len(dataset)} episodes\n")

print("round  interventions/ep  success")
for r in reports:
    print(f"  {r.iteration}         {r.mean_interventions:5.2f}        "
          f"{r.success_rate:.0%}")

# The headline relationship: policies that need fewer interventions
# succeed more often.
rho = intervention_success_correlation(reports)
print(f"\nSpearman rho(interventions, success) = {rho:.2f}")

# Intervention frames carry the expert's executed action, never the
# policy's proposal; they are the only shared-autonomy frames the
# featurizer turns into labels.
collected = dataset[len(seed_demos):]
runs = [intervention_run_count(ep) for ep in collected]
print(f"collected episodes with at least one takeover: "
      f"{float(np.mean([r > 0 for r in runs])):.0%}")
