"""Shared-autonomy collection with gated interventions, dataset aggregation
across training iterations, and intervention-rate analytics.

The synthetic gate stands in for a supervising human: it compares the live
world against a precomputed expert reference for the same (task, seed) and
takes over when the rollout strays past a deviation threshold or stops
making progress. Control returns only after the expert has held it for a
minimum run and steered the state back close to the reference, so
intervention runs never chatter.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from . import nn
from .episodes import (
    Episode,
    EpisodeIdGen,
    Frame,
    INTERVENTION_SOURCES,
    intervention_run_count,
)
from .featurize import ROT_SCALE
from .sim import (
    Roster,
    SimWorld,
    T_MAX,
    TaskSpec,
    check_success,
    clamp_action,
    obs_vector,
    reset,
    scripted_expert,
    step as sim_step,
)

GATE_DEVIATION_EPS = 0.12
GATE_STALL_K = 40
HANDBACK_MIN_RUN = 5


class DaggerError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class GateConfig:
    deviation_eps: float = GATE_DEVIATION_EPS
    stall_k: int = GATE_STALL_K
    handback_min_run: int = HANDBACK_MIN_RUN

    def __post_init__(self):
        if self.deviation_eps <= 0 or self.stall_k <= 0 or self.handback_min_run <= 0:
            raise DaggerError("gate thresholds must be positive")

    @property
    def handback_eps(self) -> float:
        return self.deviation_eps / 2.0


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    episodes: int
    mean_interventions: float
    success_rate: float
    zero_intervention_success: float

    def __post_init__(self):
        if self.iteration < 0 or self.episodes < 0 or self.mean_interventions < 0:
            raise DaggerError("negative report field")
        for rate in (self.success_rate, self.zero_intervention_success):
            if not 0.0 <= rate <= 1.0:
                raise DaggerError(f"rate {rate} outside [0, 1]")

    def as_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "episodes": self.episodes,
            "mean_interventions": self.mean_interventions,
            "success_rate": self.success_rate,
            "zero_intervention_success": self.zero_intervention_success,
        }

    @staticmethod
    def from_dict(d: dict) -> "IterationReport":
        return IterationReport(
            iteration=int(d["iteration"]),
            episodes=int(d["episodes"]),
            mean_interventions=float(d["mean_interventions"]),
            success_rate=float(d["success_rate"]),
            zero_intervention_success=float(d["zero_intervention_success"]),
        )


# --------------------------------------------------------------------------
# Expert reference and the synthetic gate
# --------------------------------------------------------------------------

def gate_state_vector(task: TaskSpec, world: SimWorld) -> np.ndarray:
    """Progress-tracking state: gripper pose (rotation scaled onto the
    position metric), aperture, and the task's moving object, if any."""
    parts = [world.gripper_x, world.gripper_y,
             ROT_SCALE * world.gripper_theta, world.aperture]
    if task.target is not None:
        pos = world.positions[task.target]
        parts.extend([float(pos[0]), float(pos[1])])
    return np.asarray(parts, dtype=np.float64)


def expert_reference(roster: Roster, task: TaskSpec, seed: int,
                     n_distractors: int = 1, randomize: bool = True,
                     max_steps: int = T_MAX) -> np.ndarray:
    """Gate-state trace of a scripted-expert run from the identical reset."""
    world = reset(roster, task, seed, n_distractors=n_distractors, randomize=randomize)
    points = [gate_state_vector(task, world)]
    for _ in range(max_steps):
        if check_success(task, world):
            break
        sim_step(world, scripted_expert(task, world))
        points.append(gate_state_vector(task, world))
    return np.asarray(points)


class SyntheticGate:
    """Deviation-or-stall intervention trigger with handback hysteresis.

    Progress is the highest reference index reached so far, where "reached"
    means that index is the nearest reference point to the current state.
    """

    def __init__(self, config: GateConfig, reference: np.ndarray):
        reference = np.asarray(reference, dtype=np.float64)
        if reference.ndim != 2 or reference.shape[0] < 1:
            raise DaggerError("reference must be a non-empty 2-D point list")
        self.config = config
        self.reference = reference
        self.best_progress = -1
        self.steps_since_progress = 0
        self.intervening = False
        self.run_length = 0

    def _closest(self, vec: np.ndarray):
        d = np.linalg.norm(self.reference - vec, axis=1)
        idx = int(np.argmin(d))
        return idx, float(d[idx])

    def in_min_run(self) -> bool:
        return self.intervening and self.run_length < self.config.handback_min_run

    def decide_vector(self, vec: np.ndarray) -> str:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.reference.shape[1],):
            raise DaggerError("gate state width does not match the reference")
        idx, dist = self._closest(vec)
        if idx > self.best_progress:
            self.best_progress = idx
            self.steps_since_progress = 0
        else:
            self.steps_since_progress += 1

        if self.intervening:
            if (self.run_length >= self.config.handback_min_run
                    and dist <= self.config.handback_eps):
                self.intervening = False
                self.run_length = 0
                self.steps_since_progress = 0
                return "allow"
            self.run_length += 1
            return "intervene"

        if dist > self.config.deviation_eps or \
                self.steps_since_progress >= self.config.stall_k:
            self.intervening = True
            self.run_length = 1
            return "intervene"
        return "allow"

    def decide(self, task: TaskSpec, world: SimWorld) -> str:
        return self.decide_vector(gate_state_vector(task, world))


# --------------------------------------------------------------------------
# Shared-autonomy collection
# --------------------------------------------------------------------------

def choose_tasks(tasks, n_episodes: int, rng: np.random.Generator) -> list:
    """Uniform task draw per episode."""
    tasks = list(tasks)
    if not tasks:
        raise DaggerError("no tasks to sample")
    return [tasks[int(rng.integers(len(tasks)))] for _ in range(n_episodes)]


def shared_autonomy_episode(act_fn, roster: Roster, task: TaskSpec, seed: int,
                            gate_config: GateConfig = GateConfig(),
                            reference: np.ndarray | None = None,
                            max_steps: int = T_MAX, n_distractors: int = 1,
                            randomize: bool = True, episode_id: str | None = None,
                            intervention_source: str = "oracle-intervention") -> Episode:
    """One gated rollout: the policy drives until the gate takes over, the
    expert drives until handback. The success check is deferred while an
    intervention run is still under the handback minimum so recorded runs
    are never shorter than that minimum."""
    if intervention_source not in INTERVENTION_SOURCES:
        raise DaggerError(f"bad intervention source {intervention_source!r}")
    if reference is None:
        reference = expert_reference(roster, task, seed,
                                     n_distractors=n_distractors,
                                     randomize=randomize, max_steps=max_steps)
    world = reset(roster, task, seed, n_distractors=n_distractors, randomize=randomize)
    gate = SyntheticGate(gate_config, reference)
    frames = []
    outcome = "failure"
    for t in range(max_steps):
        if check_success(task, world) and not gate.in_min_run():
            outcome = "success"
            break
        decision = gate.decide(task, world)
        if decision == "intervene":
            action, source = scripted_expert(task, world), intervention_source
        else:
            action, source = act_fn(task, world), "policy"
        action = clamp_action(world, action)  # record what actually executes
        frames.append(Frame(t=t, obs=obs_vector(world), action=action, source=source))
        sim_step(world, action)
    else:
        if check_success(task, world):
            outcome = "success"
    if not frames:
        frames.append(Frame(t=0, obs=obs_vector(world),
                            action=act_fn(task, world), source="policy"))
    return Episode(
        episode_id=episode_id or EpisodeIdGen(seed)(),
        task_id=task.task_id,
        frames=frames,
        outcome=outcome,
        seed=seed,
        collected_by="shared-autonomy",
    )


def collect_shared_autonomy(act_fn, roster: Roster, tasks, n_episodes: int,
                            seed0: int, gate_config: GateConfig = GateConfig(),
                            max_steps: int = T_MAX, n_distractors: int = 1,
                            randomize: bool = True, id_gen=None,
                            intervention_source: str = "oracle-intervention") -> list[Episode]:
    """n_episodes gated rollouts; the task for each episode is drawn
    uniformly and the episode seed advances consecutively from seed0."""
    rng = nn.rng_stream(seed0, "shared-autonomy", "tasks")
    chosen = choose_tasks(tasks, n_episodes, rng)
    id_gen = id_gen or EpisodeIdGen(seed0)
    out = []
    for i, task in enumerate(chosen):
        out.append(shared_autonomy_episode(
            act_fn, roster, task, seed=seed0 + i, gate_config=gate_config,
            max_steps=max_steps, n_distractors=n_distractors,
            randomize=randomize, episode_id=id_gen(),
            intervention_source=intervention_source))
    return out


# --------------------------------------------------------------------------
# Analytics
# --------------------------------------------------------------------------

def intervention_stats(episodes) -> dict:
    """Mean intervention runs per episode, episode success rate, and the
    fraction of episodes that are successful with zero interventions."""
    episodes = list(episodes)
    if not episodes:
        raise DaggerError("no episodes to analyze")
    runs = [intervention_run_count(ep) for ep in episodes]
    succ = [ep.outcome == "success" for ep in episodes]
    clean = [s and r == 0 for s, r in zip(succ, runs)]
    return {
        "episodes": len(episodes),
        "mean_interventions": float(np.mean(runs)),
        "success_rate": float(np.mean(succ)),
        "zero_intervention_success": float(np.mean(clean)),
    }


def intervention_success_correlation(reports) -> float:
    """Spearman rank correlation between mean interventions per episode and
    success rate across iteration reports (ties get average ranks)."""
    reports = list(reports)
    if len(reports) < 4:
        raise DaggerError("need at least 4 reports for a rank correlation")
    x = [r.mean_interventions for r in reports]
    y = [r.success_rate for r in reports]
    if len(set(x)) < 2 or len(set(y)) < 2:
        raise DaggerError("zero variance in a correlation series")
    rho = float(scipy_stats.spearmanr(x, y).statistic)
    if not np.isfinite(rho):
        raise DaggerError("rank correlation undefined for these reports")
    return rho


# --------------------------------------------------------------------------
# The aggregation loop
# --------------------------------------------------------------------------

def dagger_iterate(roster: Roster, tasks, initial_episodes, iterations: int,
                   episodes_per_iter: int, trainer,
                   gate_config: GateConfig = GateConfig(),
                   seed0: int = 9000, eval_fn=None, out_dir=None,
                   max_steps: int = T_MAX, n_distractors: int = 1,
                   randomize: bool = True):
    """Train-deploy-collect-aggregate loop.

    trainer(episodes, iteration) returns (act_fn, saver) where saver is
    None or a callable(path) persisting the checkpoint. eval_fn(act_fn,
    iteration) -> autonomous success rate in [0, 1]; without it the report
    falls back to the success rate of the gated episodes themselves.

    Returns (policies, reports, dataset): one policy per training round
    (iterations + 1 total), one report per deployed policy, and the
    aggregated episode list whose first len(initial_episodes) entries are
    the initial dataset, untouched.
    """
    dataset = list(initial_episodes)
    if not dataset:
        raise DaggerError("initial dataset is empty")
    if iterations < 0 or episodes_per_iter <= 0:
        raise DaggerError("bad iteration parameters")

    def _train(episodes, iteration):
        try:
            return trainer(tuple(episodes), iteration)
        except nn.NumericError as exc:
            raise DaggerError(
                f"training diverged at iteration {iteration}: {exc}") from exc

    def _persist(saver, iteration):
        if out_dir is not None and saver is not None:
            saver(str(_ckpt_path(out_dir, iteration)))

    policies, reports = [], []
    act_fn, saver = _train(dataset, 0)
    policies.append(act_fn)
    _persist(saver, 0)

    for it in range(iterations):
        collected = collect_shared_autonomy(
            policies[-1], roster, tasks, episodes_per_iter,
            seed0=seed0 + it * episodes_per_iter, gate_config=gate_config,
            max_steps=max_steps, n_distractors=n_distractors, randomize=randomize,
            id_gen=EpisodeIdGen(seed0 + it))
        stats = intervention_stats(collected)
        success = eval_fn(policies[-1], it) if eval_fn is not None \
            else stats["success_rate"]
        reports.append(IterationReport(
            iteration=it,
            episodes=stats["episodes"],
            mean_interventions=stats["mean_interventions"],
            success_rate=float(success),
            zero_intervention_success=stats["zero_intervention_success"],
        ))
        dataset.extend(collected)
        act_fn, saver = _train(dataset, it + 1)
        policies.append(act_fn)
        _persist(saver, it + 1)
        if out_dir is not None:
            write_reports(str(_reports_path(out_dir)), reports)

    return policies, reports, dataset


def _ckpt_path(out_dir, iteration: int) -> Path:
    return Path(out_dir) / f"policy-iter-{iteration:03d}.ckpt"


def _reports_path(out_dir) -> Path:
    return Path(out_dir) / "reports.jsonl"


# --------------------------------------------------------------------------
# Fixed-budget dataset composition (expert vs expert + shared autonomy)
# --------------------------------------------------------------------------

def compose_budget(expert_episodes, shared_episodes, total: int,
                   expert_fraction: float = 0.5,
                   rng: np.random.Generator | None = None) -> list[Episode]:
    """Fixed episode budget drawn from two pools; expert_fraction=1.0 gives
    the all-demonstration baseline, 0.5 the half-and-half mixture."""
    if not 0.0 <= expert_fraction <= 1.0:
        raise DaggerError("expert_fraction outside [0, 1]")
    if total <= 0:
        raise DaggerError("budget must be positive")
    n_expert = round(total * expert_fraction)
    n_shared = total - n_expert
    expert_episodes = list(expert_episodes)
    shared_episodes = list(shared_episodes)
    if n_expert > len(expert_episodes):
        raise DaggerError(f"budget wants {n_expert} expert episodes, "
                          f"have {len(expert_episodes)}")
    if n_shared > len(shared_episodes):
        raise DaggerError(f"budget wants {n_shared} shared-autonomy episodes, "
                          f"have {len(shared_episodes)}")
    if rng is None:
        return expert_episodes[:n_expert] + shared_episodes[:n_shared]
    pick_e = rng.choice(len(expert_episodes), size=n_expert, replace=False)
    pick_s = rng.choice(len(shared_episodes), size=n_shared, replace=False)
    return [expert_episodes[i] for i in sorted(pick_e)] + \
           [shared_episodes[i] for i in sorted(pick_s)]


# --------------------------------------------------------------------------
# Report persistence
# --------------------------------------------------------------------------

def write_reports(path: str, reports) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.as_dict(), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_reports(path: str) -> list[IterationReport]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(IterationReport.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DaggerError(f"malformed report at line {i}: {exc}") from exc
    return out


def export_reports_csv(path: str, reports) -> None:
    """Scatter-ready table: one row per deployed checkpoint."""
    fields = ["iteration", "episodes", "mean_interventions",
              "success_rate", "zero_intervention_success"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.as_dict())
