"""Canned experiment orchestrations behind the headline comparisons.

Each benchmark is a deterministic function of its seed arguments: it collects
its own demonstrations, trains whatever it needs, and returns a plain-dict
result that the report command and the acceptance suite both consume.

The four benchmarks:

- single_task_bc: behavior cloning on one pick-place task, evaluated from
  either a canonical layout or randomized layouts.
- mixture_vs_expert: fixed total episode budget, expert-only demonstrations
  versus a 50/50 split of expert demonstrations and gated shared-autonomy
  collection, averaged over several seeds.
- retrieval_benchmark: trajectory-encoder top-1 retrieval on held-out clips,
  task-paired batches versus the uniform-clip-sampling ablation.
- conditioning_benchmark: language-conditioned policy versus one-hot on the
  training tasks, plus zero-shot evaluation on held-out verb-noun pairs
  against a shuffled-embedding control.
"""

from __future__ import annotations

import numpy as np

from . import policy as policy_mod
from .dagger import (
    DaggerError,
    GateConfig,
    IterationReport,
    dagger_iterate,
    intervention_success_correlation,
)
from .embeddings import (
    ObsLayout,
    build_encoder_dataset,
    clip_from_episode,
    init_encoder,
    language_embedding,
    retrieval_accuracy,
    train_encoder,
)
from .episodes import EpisodeIdGen
from .nn import rng_stream
from .sim import Roster, TaskSpec, load_tasks, rollout, scripted_expert
from .training import (
    TrainSettings,
    build_task_vectors,
    evaluate_policy,
    make_act_fn,
    train_policy_on_episodes,
)


class BenchmarkError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Shared collection helpers
# --------------------------------------------------------------------------

def expert_controller(task, world):
    return scripted_expert(task, world), "expert"


def collect_demos(roster: Roster, task: TaskSpec, n: int, seed0: int,
                  n_distractors: int = 0, randomize: bool = True,
                  id_gen: EpisodeIdGen | None = None) -> list:
    """n scripted-expert episodes on consecutive seeds."""
    id_gen = id_gen or EpisodeIdGen(seed0)
    return [rollout(expert_controller, roster, task, seed=seed0 + k,
                    n_distractors=n_distractors, randomize=randomize,
                    collected_by="scripted-expert", episode_id=id_gen())
            for k in range(n)]


def collect_demos_mixed(roster: Roster, tasks, n: int, seed0: int, rng,
                        n_distractors: int = 0) -> list:
    """n expert episodes over tasks drawn uniformly at random."""
    tasks = list(tasks)
    id_gen = EpisodeIdGen(seed0)
    return [rollout(expert_controller, roster,
                    tasks[int(rng.integers(len(tasks)))], seed=seed0 + k,
                    n_distractors=n_distractors, randomize=True,
                    collected_by="scripted-expert", episode_id=id_gen())
            for k in range(n)]


def _mean(rates: dict) -> float:
    return float(np.mean(list(rates.values())))


# --------------------------------------------------------------------------
# Single-task behavior cloning
# --------------------------------------------------------------------------

SINGLE_TASK = "place-apple-tray"
SINGLE_TASK_SETTINGS = TrainSettings(steps=10000, batch_size=64, lr=1e-3,
                                     torso_widths=(192, 192, 192))


def single_task_bc(randomize: bool, n_demos: int = 50, n_eval: int = 100,
                   task_id: str = SINGLE_TASK, demo_seed0: int = 20000,
                   eval_seed0: int = 10000, train_seed: int = 77,
                   settings: TrainSettings = SINGLE_TASK_SETTINGS,
                   tasks_path: str | None = None) -> dict:
    """Clone one pick-place task from expert demos and measure success.

    randomize=False evaluates from the task's single canonical layout,
    randomize=True from n_eval randomized layouts.
    """
    roster, tasks = load_tasks(tasks_path)
    task = next((t for t in tasks if t.task_id == task_id), None)
    if task is None:
        raise BenchmarkError(f"unknown task {task_id!r}")
    demos = collect_demos(roster, task, n_demos, demo_seed0,
                          randomize=randomize)
    if any(ep.outcome != "success" for ep in demos):
        raise BenchmarkError("expert demonstration failed; seeds unusable")
    vecs = build_task_vectors([task], "one-hot", dim=8)
    net, trace = train_policy_on_episodes(demos, vecs,
                                          rng_stream(train_seed, "train"),
                                          settings)
    act = make_act_fn(net, vecs)
    rates = evaluate_policy(act, roster, [task], n_eval, seed0=eval_seed0,
                            n_distractors=0, randomize=randomize)
    return {
        "task_id": task_id,
        "randomize": randomize,
        "n_demos": n_demos,
        "n_eval": n_eval,
        "success": rates[task_id],
        "final_loss": float(np.mean(trace[-200:])),
    }


# --------------------------------------------------------------------------
# Expert-only versus expert plus shared autonomy at a fixed episode budget
# --------------------------------------------------------------------------

MIXTURE_TASKS = ("place-apple-tray", "place-banana-bowl", "push-sponge",
                 "grasp-pepper")
MIXTURE_SETTINGS = TrainSettings(steps=5000, batch_size=64, lr=1e-3,
                                 torso_widths=(192, 192, 192))


def mixture_vs_expert(budget: int = 400, n_seeds: int = 3,
                      iterations: int = 8, n_eval: int = 50,
                      checkpoint_eval: int = 50,
                      task_ids=MIXTURE_TASKS,
                      settings: TrainSettings = MIXTURE_SETTINGS,
                      gate_config: GateConfig | None = None,
                      tasks_path: str | None = None) -> dict:
    """Compare two ways to spend the same episode budget, per seed:

    - expert arm: the whole budget as expert demonstrations;
    - mixture arm: half expert demonstrations, half shared-autonomy episodes
      collected over `iterations` gated deployment rounds. The expert half
      phases in alongside the rounds (manual and gated collection run as one
      campaign), so early checkpoints are data-poor and intervention-heavy
      while the final retrain sees the full half-and-half budget.

    Returns per-seed and mean success for both arms plus the per-iteration
    reports of each mixture run (interventions and checkpoint success).
    """
    if budget % 2:
        raise BenchmarkError("budget must split evenly between the arms")
    half = budget // 2
    if half % iterations:
        raise BenchmarkError("half budget must divide into the iterations")
    roster, tasks = load_tasks(tasks_path)
    by_id = {t.task_id: t for t in tasks}
    missing = [tid for tid in task_ids if tid not in by_id]
    if missing:
        raise BenchmarkError(f"unknown tasks {missing}")
    bench = [by_id[tid] for tid in task_ids]
    vecs = build_task_vectors(bench, "one-hot", dim=8)
    gate_config = gate_config or GateConfig()

    def train(eps, seed):
        net, _ = train_policy_on_episodes(list(eps), vecs,
                                          rng_stream(seed, "train"), settings)
        return make_act_fn(net, vecs)

    expert_rates, mixture_rates, all_reports = [], [], []
    for s in range(n_seeds):
        base = 30000 + 20000 * s
        rng = rng_stream(500 + s, "tasks")

        full = collect_demos_mixed(roster, bench, budget, base, rng)
        act = train(full, 101 + s)
        expert_rates.append(_mean(evaluate_policy(
            act, roster, bench, n_eval, seed0=10000, n_distractors=0)))

        seed_demos = collect_demos_mixed(roster, bench, half, base + 10000, rng)
        per_iter = half // iterations

        def trainer(episodes, iteration, _s=s):
            extra = seed_demos[per_iter:min(per_iter * (iteration + 1), half)]
            return train(list(episodes) + extra, 200 + 10 * _s + iteration), None

        def eval_fn(act_fn, iteration):
            return _mean(evaluate_policy(act_fn, roster, bench,
                                         checkpoint_eval, seed0=90000,
                                         n_distractors=0))

        policies, reports, _ = dagger_iterate(
            roster, bench, seed_demos[:per_iter], iterations=iterations,
            episodes_per_iter=per_iter, trainer=trainer,
            gate_config=gate_config, seed0=9000 + 1000 * s, eval_fn=eval_fn,
            n_distractors=0, randomize=True)
        mixture_rates.append(_mean(evaluate_policy(
            policies[-1], roster, bench, n_eval, seed0=10000,
            n_distractors=0)))
        all_reports.append([r.as_dict() for r in reports])

    try:
        rho = intervention_success_correlation(
            [IterationReport.from_dict(r) for r in all_reports[0]])
    except DaggerError:
        rho = None  # too few rounds, or a zero-variance series
    return {
        "budget": budget,
        "task_ids": list(task_ids),
        "expert_rates": expert_rates,
        "mixture_rates": mixture_rates,
        "expert_mean": float(np.mean(expert_rates)),
        "mixture_mean": float(np.mean(mixture_rates)),
        "gap_points": float((np.mean(mixture_rates) - np.mean(expert_rates)) * 100.0),
        "reports": all_reports,
        "spearman_rho": rho,
    }


# --------------------------------------------------------------------------
# Encoder retrieval with the batch-composition ablation
# --------------------------------------------------------------------------

RETRIEVAL_TASKS = ("place-apple-tray", "place-apple-cup", "place-apple-plate",
                   "place-banana-tray", "place-banana-bowl", "place-banana-plate",
                   "place-pepper-tray", "place-pepper-bowl", "place-fork-cup",
                   "place-fork-plate")


def retrieval_benchmark(task_ids=RETRIEVAL_TASKS, held_out: int = 5,
                        steps: int = 1500, dim: int = 64,
                        tasks_path: str | None = None) -> dict:
    """Train the trajectory encoder twice on a skewed demo corpus, once with
    task-paired batches and once sampling clips uniformly, and score top-1
    retrieval of held-out robot clips against the language table."""
    roster, tasks = load_tasks(tasks_path)
    by_id = {t.task_id: t for t in tasks}
    missing = [tid for tid in task_ids if tid not in by_id]
    if missing:
        raise BenchmarkError(f"unknown tasks {missing}")
    ordered = sorted(task_ids)
    counts = {tid: (24 if i % 3 == 0 else 3) for i, tid in enumerate(ordered)}
    layout = ObsLayout(n_objects=len(roster.objects), n_zones=len(roster.zones))

    train_eps, held_clips = [], []
    for i, tid in enumerate(ordered):
        eps = collect_demos(roster, by_id[tid], counts[tid] + held_out,
                            50000 + 1000 * i)
        train_eps.extend(eps[:counts[tid]])
        held_clips.extend(clip_from_episode(ep, modality="robot")
                          for ep in eps[counts[tid]:])
    commands = {tid: by_id[tid].command for tid in ordered}
    dataset = build_encoder_dataset(train_eps, commands, layout, dim=dim,
                                    seed=7, rng=rng_stream(61, "analogs"))
    obs_dim = dataset.robot[ordered[0]][0].clip.frames[0].shape[0]

    out = {"task_ids": ordered, "clip_counts": counts, "held_out": held_out}
    for scheme, key in (("task-paired", "paired_accuracy"),
                        ("uniform-clips", "uniform_accuracy")):
        encoder = init_encoder(rng_stream(8, "enc"), obs_dim, frames_k=20,
                               dim=dim)
        pol = policy_mod.init_policy(rng_stream(8, "pol"), obs_dim, dim,
                                     torso_widths=(64, 64), head_widths=(32,))
        train_encoder(dataset, encoder, pol, steps=steps,
                      batch_size=len(ordered),
                      rng=rng_stream(8, "steps", scheme), scheme=scheme,
                      lr=1e-3, bc_weight=1.0)
        out[key] = retrieval_accuracy(encoder, held_clips, dataset.lang)
    return out


# --------------------------------------------------------------------------
# Language conditioning parity and compositional zero-shot
# --------------------------------------------------------------------------

HOLDOUT_TASKS = ("place-apple-bowl", "place-banana-cup",
                 "place-pepper-plate", "place-fork-tray")
CONDITIONING_SETTINGS = TrainSettings(steps=40000, batch_size=64, lr=1e-3,
                                      lr_final=1e-4,
                                      torso_widths=(192, 192, 192))


def conditioning_benchmark(n_demos: int = 50, n_eval_train: int = 25,
                           n_eval_zero_shot: int = 50, dim: int = 64,
                           settings: TrainSettings = CONDITIONING_SETTINGS,
                           tasks_path: str | None = None) -> dict:
    """Train one policy per conditioning source on every pick-place task
    whose verb-noun pair is not held out, then evaluate:

    - both policies on the training tasks (parity check);
    - the language policy on the held-out pairs with their own embeddings
      and with embeddings shuffled across the held-out tasks (control).
    """
    roster, tasks = load_tasks(tasks_path)
    hold = [t for t in tasks if t.task_id in HOLDOUT_TASKS]
    if len(hold) != len(HOLDOUT_TASKS):
        raise BenchmarkError("holdout tasks missing from the task file")
    train_tasks = sorted((t for t in tasks if t.skill == "pick-place"
                          and t.task_id not in HOLDOUT_TASKS),
                         key=lambda t: t.task_id)

    demos = []
    for i, task in enumerate(train_tasks):
        demos.extend(collect_demos(roster, task, n_demos, 60000 + 1000 * i))

    result = {"train_task_ids": [t.task_id for t in train_tasks],
              "holdout_task_ids": [t.task_id for t in hold]}
    nets = {}
    for mode in ("one-hot", "language"):
        vecs = build_task_vectors(train_tasks, mode, dim=dim)
        net, _ = train_policy_on_episodes(demos, vecs,
                                          rng_stream(91, "train", mode),
                                          settings)
        nets[mode] = net
        rates = evaluate_policy(make_act_fn(net, vecs), roster, train_tasks,
                                n_eval_train, seed0=10000, n_distractors=0)
        result[f"{mode}_train_rates"] = rates
        result[f"{mode}_train_mean"] = _mean(rates)
    # positive = language trails one-hot; negative = language leads
    result["parity_gap_points"] = float(
        (result["one-hot_train_mean"] - result["language_train_mean"]) * 100.0)

    zs_vecs = {t.task_id: language_embedding(t.command, dim=dim) for t in hold}
    zs = evaluate_policy(make_act_fn(nets["language"], zs_vecs), roster, hold,
                         n_eval_zero_shot, seed0=11000, n_distractors=0)
    ids = [t.task_id for t in hold]
    rotated = {ids[i]: zs_vecs[ids[(i + 1) % len(ids)]] for i in range(len(ids))}
    control = evaluate_policy(make_act_fn(nets["language"], rotated), roster,
                              hold, n_eval_zero_shot, seed0=11000,
                              n_distractors=0)
    result["zero_shot_rates"] = zs
    result["zero_shot_mean"] = _mean(zs)
    result["control_rates"] = control
    result["control_mean"] = _mean(control)
    result["zero_shot_gap_points"] = float(
        (result["zero_shot_mean"] - result["control_mean"]) * 100.0)
    return result
