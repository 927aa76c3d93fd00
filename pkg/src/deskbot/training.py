"""Policy training and evaluation loops shared by the CLI, the iteration
loop, and the canned benchmarks.

train_policy_on_episodes follows the standard recipe: featurize episodes
into state-difference labels, look up each label's task vector, and run
noisy-embedding gradient steps over uniformly sampled label batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn, policy as policy_mod
from .embeddings import (
    EMBED_DIM,
    TaskEmbedding,
    average_task_embedding,
    language_embedding,
    one_hot_embedding,
)
from .episodes import Episode, RawAction
from .featurize import featurize_dataset
from .sim import Roster, T_MAX, TaskSpec, obs_vector, rollout

CONDITIONING_MODES = ("one-hot", "language", "trajectory")


class TrainingError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Task-to-vector table
# --------------------------------------------------------------------------

def build_task_vectors(tasks, mode: str, dim: int = EMBED_DIM, seed: int = 7,
                       encoder=None, clips_by_task=None, avg_clips: int = 10) -> dict:
    """task_id -> unit conditioning vector, per the chosen source.

    one-hot indexes tasks in sorted task_id order; language embeds each
    task's command string; trajectory averages up to avg_clips clip
    embeddings per task through the given encoder.
    """
    tasks = list(tasks)
    if not tasks:
        raise TrainingError("no tasks to embed")
    ids = sorted(t.task_id for t in tasks)
    if mode == "one-hot":
        return {tid: one_hot_embedding(tid, ids, dim=dim) for tid in ids}
    if mode == "language":
        by_id = {t.task_id: t for t in tasks}
        return {tid: language_embedding(by_id[tid].command, dim=dim, seed=seed)
                for tid in ids}
    if mode == "trajectory":
        if encoder is None or clips_by_task is None:
            raise TrainingError("trajectory conditioning needs encoder and clips")
        out = {}
        for tid in ids:
            clips = list(clips_by_task.get(tid, ()))
            if not clips:
                raise TrainingError(f"no clips for task {tid!r}")
            out[tid] = average_task_embedding(encoder, clips[:avg_clips])
        return out
    raise TrainingError(f"unknown conditioning mode {mode!r}")


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

@dataclass
class TrainSettings:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    lr_final: float | None = None
    noise_sigma: float = policy_mod.NOISE_SIGMA
    torso_widths: tuple = (128, 128, 128)
    head_widths: tuple = (64, 64)
    horizon: int = 10
    w_pos: float = policy_mod.W_POS
    w_rot: float = policy_mod.W_ROT
    w_grip: float = policy_mod.W_GRIP
    aux_weight: float = policy_mod.AUX_WEIGHT
    huber_delta: float = policy_mod.HUBER_DELTA


def train_policy_on_labels(labels, task_vecs: dict, rng: np.random.Generator,
                           settings: TrainSettings = TrainSettings(),
                           net: policy_mod.PolicyNet | None = None,
                           adam: nn.AdamState | None = None):
    """labels: (task_id, ActionLabel) pairs. Returns (net, loss_trace)."""
    labels = list(labels)
    if not labels:
        raise TrainingError("no labels to train on")
    missing = sorted({tid for tid, _ in labels if tid not in task_vecs})
    if missing:
        raise TrainingError(f"no conditioning vector for tasks {missing}")
    obs_dim = labels[0][1].obs.shape[0]
    z_dim = len(next(iter(task_vecs.values())).vec)
    if net is None:
        net = policy_mod.init_policy(rng, obs_dim, z_dim,
                                     torso_widths=settings.torso_widths,
                                     head_widths=settings.head_widths,
                                     horizon=settings.horizon)
    if adam is None:
        adam = nn.AdamState(lr=settings.lr)
    trace = []
    for step in range(settings.steps):
        if settings.lr_final is not None and settings.steps > 1:
            frac = step / (settings.steps - 1)
            adam.lr = settings.lr + (settings.lr_final - settings.lr) * frac
        idx = rng.integers(len(labels), size=settings.batch_size)
        chosen = [labels[int(i)] for i in idx]
        z_rows = np.stack([task_vecs[tid].vec for tid, _ in chosen])
        batch = policy_mod.LabelBatch.from_labels([lab for _, lab in chosen], z_rows)
        loss = policy_mod.train_step(net, adam, batch, rng,
                                     noise_sigma=settings.noise_sigma,
                                     w_pos=settings.w_pos, w_rot=settings.w_rot,
                                     w_grip=settings.w_grip,
                                     aux_weight=settings.aux_weight,
                                     delta=settings.huber_delta)
        trace.append(loss)
    return net, trace


def train_policy_on_episodes(episodes, task_vecs: dict, rng: np.random.Generator,
                             settings: TrainSettings = TrainSettings(),
                             shared_autonomy: str = "interventions",
                             net: policy_mod.PolicyNet | None = None,
                             adam: nn.AdamState | None = None):
    labels = featurize_dataset(list(episodes), shared_autonomy=shared_autonomy)
    if not labels:
        raise TrainingError("featurization discarded every frame")
    return train_policy_on_labels(labels, task_vecs, rng, settings,
                                  net=net, adam=adam)


# --------------------------------------------------------------------------
# Acting and evaluation
# --------------------------------------------------------------------------

def make_act_fn(net: policy_mod.PolicyNet, task_vecs: dict,
                a_max_pos: float = 0.05, a_max_rot: float = 0.2):
    """Closure mapping (task, world) to the policy's clamped action."""

    def act(task: TaskSpec, world) -> RawAction:
        emb = task_vecs.get(task.task_id)
        if emb is None:
            raise TrainingError(f"no conditioning vector for task {task.task_id!r}")
        return policy_mod.act(net, obs_vector(world), emb.vec,
                              a_max_pos=a_max_pos, a_max_rot=a_max_rot)

    return act


def policy_controller(act_fn):
    """Adapt an act_fn to the rollout controller protocol."""

    def controller(task, world):
        return act_fn(task, world), "policy"

    return controller


def evaluate_policy(act_fn, roster: Roster, tasks, n_seeds: int, seed0: int = 10000,
                    n_distractors: int = 1, randomize: bool = True,
                    max_steps: int = T_MAX) -> dict:
    """Autonomous rollouts, n_seeds per task: task_id -> success fraction."""
    controller = policy_controller(act_fn)
    out = {}
    for task in tasks:
        wins = 0
        for k in range(n_seeds):
            ep = rollout(controller, roster, task, seed=seed0 + k,
                         max_steps=max_steps, n_distractors=n_distractors,
                         randomize=randomize, collected_by="policy")
            wins += ep.outcome == "success"
        out[task.task_id] = wins / n_seeds
    return out


def binomial_sigma_points(p: float, n: int) -> float:
    """One-unit standard deviation of a success percentage estimated from n
    Bernoulli trials, in percentage points."""
    if n <= 0:
        raise TrainingError("need at least one trial")
    if not 0.0 <= p <= 1.0:
        raise TrainingError("success rate outside [0, 1]")
    return float(np.sqrt(p * (1.0 - p) / n) * 100.0)


def success_table(rates: dict, n_seeds: int) -> list[dict]:
    """Rows of task_id, success %, and the 1-sigma binomial column."""
    rows = []
    for tid in sorted(rates):
        p = rates[tid]
        rows.append({
            "task_id": tid,
            "success_pct": round(p * 100.0, 1),
            "sigma_pct": round(binomial_sigma_points(p, n_seeds), 1),
            "n": n_seeds,
        })
    return rows
