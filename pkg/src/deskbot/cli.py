"""Command-line front end.

Every command is a thin wrapper over the library: it loads a config, seeds
the named random stream, does the work, writes its outputs under --out, and
drops a manifest next to them recording the effective configuration, the
seed, the code version, and a content hash of every input file. Reruns with
the same config and seed produce byte-identical outputs.

Subcommands: collect-expert, train-policy, train-encoder, eval, dagger,
annotate, report, serve.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .config import Config, ConfigError, default_config_text, load_config
from .dagger import (
    GateConfig,
    dagger_iterate,
    export_reports_csv,
    read_reports,
)
from .embeddings import (
    EmbeddingError,
    ObsLayout,
    average_task_embedding,
    build_encoder_dataset,
    clip_from_episode,
    export_embedding_table,
    init_encoder,
    load_embedding_table,
    load_encoder,
    retrieval_accuracy,
    save_encoder,
    train_encoder,
)
from .episodes import (
    EpisodeIdGen,
    StoreHeader,
    annotate_episode,
    append_episodes,
    create_store,
    obs_dim as store_obs_dim,
    read_dataset,
    read_header,
)
from .nn import rng_stream
from .policy import init_policy, load_policy, save_policy
from .sim import T_MAX, load_tasks, rollout, scripted_expert
from .training import (
    TrainSettings,
    TrainingError,
    build_task_vectors,
    evaluate_policy,
    make_act_fn,
    policy_controller,
    success_table,
    train_policy_on_episodes,
)


class CLIError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Manifests: every run records what produced its outputs
# --------------------------------------------------------------------------

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_path(out: str) -> str:
    if os.path.isdir(out):
        return os.path.join(out, "manifest.json")
    return out + ".manifest.json"


def write_manifest(out: str, command: str, config: Config, seed: int,
                   inputs=(), extra: dict | None = None) -> str:
    """Record (command, config echo, seed, code version, input hashes)."""
    payload = {
        "command": command,
        "code_version": __version__,
        "seed": seed,
        "config": config.dumps(),
        "inputs": {os.path.basename(p): _sha256(p) for p in inputs},
    }
    if extra:
        payload["extra"] = extra
    path = manifest_path(out)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _settings_from_config(config: Config) -> TrainSettings:
    return TrainSettings(
        steps=config["policy.steps"],
        batch_size=config["policy.batch"],
        lr=config["policy.lr"],
        noise_sigma=config["policy.noise_sigma"],
        torso_widths=tuple(config["policy.torso_widths"]),
        horizon=config["featurize.open_loop_horizon"],
        w_pos=config["policy.w_pos"],
        w_rot=config["policy.w_rot"],
        w_grip=config["policy.w_grip"],
        aux_weight=config["policy.aux_weight"],
        huber_delta=config["policy.huber_delta"],
    )


def _load_world(config: Config):
    path = config["sim.tasks_file"] or None
    return load_tasks(path)


def _select_tasks(tasks, wanted) -> list:
    if not wanted:
        return list(tasks)
    by_id = {t.task_id: t for t in tasks}
    missing = [tid for tid in wanted if tid not in by_id]
    if missing:
        raise CLIError(f"unknown tasks: {', '.join(missing)}")
    return [by_id[tid] for tid in wanted]


def _write_loss_curve(path: str, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss"])
        for i, loss in enumerate(trace):
            writer.writerow([i, f"{loss:.9g}"])


# --------------------------------------------------------------------------
# collect-expert
# --------------------------------------------------------------------------

def cmd_collect_expert(config: Config, out: str, task_filter=None,
                       n: int = 10, seed: int = 0,
                       echo=print) -> str:
    """Scripted-expert episodes into a fresh store, n per selected task."""
    if n < 0:
        raise CLIError("n must be >= 0")
    roster, tasks = _load_world(config)
    chosen = _select_tasks(tasks, task_filter)
    header = StoreHeader(
        obs_dim=store_obs_dim(len(roster.objects), len(roster.zones)),
        roster=config["sim.tasks_file"] or "packaged-default")
    create_store(out, header)
    id_gen = EpisodeIdGen(seed)
    counts = {}
    for i, task in enumerate(chosen):
        episodes = []
        for k in range(n):
            ep = rollout(lambda t, w: (scripted_expert(t, w), "expert"),
                         roster, task, seed=seed + i * max(n, 1) + k,
                         max_steps=config["sim.t_max"],
                         n_distractors=config["eval.distractors"],
                         randomize=True, collected_by="scripted-expert",
                         episode_id=id_gen())
            episodes.append(ep)
        append_episodes(out, episodes, a_max_pos=config["sim.a_max_pos"],
                        a_max_rot=config["sim.a_max_rot"])
        counts[task.task_id] = len(episodes)
        echo(f"{task.task_id}: {len(episodes)} episodes")
    echo(f"total: {sum(counts.values())} episodes -> {out}")
    write_manifest(out, "collect-expert", config, seed,
                   extra={"counts": counts})
    return out


# --------------------------------------------------------------------------
# train-policy
# --------------------------------------------------------------------------

def _trajectory_vectors(config: Config, encoder_path: str, episodes,
                        task_ids) -> dict:
    """Average up to embed.avg_clips robot-clip embeddings per task."""
    encoder = load_encoder(encoder_path)
    clips_by_task: dict[str, list] = {tid: [] for tid in task_ids}
    for ep in episodes:
        if ep.task_id in clips_by_task and len(ep.frames) >= 2:
            clips_by_task[ep.task_id].append(clip_from_episode(ep))
    missing = sorted(tid for tid, clips in clips_by_task.items() if not clips)
    if missing:
        raise CLIError(f"no clips to embed for tasks: {', '.join(missing)}")
    return {tid: average_task_embedding(encoder, clips[:config["embed.avg_clips"]])
            for tid, clips in clips_by_task.items()}


def cmd_train_policy(config: Config, store: str, out: str,
                     conditioning: str = "one-hot", seed: int = 0,
                     encoder_path: str | None = None, echo=print) -> str:
    """Featurize a store, build the conditioning table, train, checkpoint."""
    episodes = read_dataset(store)
    if not episodes:
        raise CLIError(f"store {store} holds no episodes")
    roster, tasks = _load_world(config)
    present = sorted({ep.task_id for ep in episodes})
    train_tasks = _select_tasks(tasks, present)

    if conditioning == "trajectory":
        if encoder_path is None:
            raise CLIError("trajectory conditioning requires --encoder")
        vecs = _trajectory_vectors(config, encoder_path, episodes, present)
    elif conditioning in ("one-hot", "language"):
        vecs = build_task_vectors(train_tasks, conditioning,
                                  dim=config["embed.dim"],
                                  seed=config["embed.seed"])
    else:
        raise CLIError(f"unknown conditioning {conditioning!r}")

    labels = None
    settings = _settings_from_config(config)
    rng = rng_stream(seed, "train-policy", conditioning)
    try:
        net, trace = train_policy_on_episodes(
            episodes, vecs, rng, settings,
            shared_autonomy=config["featurize.shared_autonomy"])
    except TrainingError as exc:
        raise CLIError(str(exc)) from exc

    save_policy(out, net, extra_meta={"conditioning": conditioning,
                                      "task_ids": present})
    export_embedding_table(out + ".embeddings.json", vecs)
    _write_loss_curve(out + ".loss.csv", trace)
    write_manifest(out, "train-policy", config, seed, inputs=[store],
                   extra={"conditioning": conditioning, "tasks": present,
                          "final_loss": float(np.mean(trace[-100:]))})
    echo(f"trained on {len(episodes)} episodes ({len(present)} tasks), "
         f"final loss {float(np.mean(trace[-100:])):.4f} -> {out}")
    return out


# --------------------------------------------------------------------------
# train-encoder
# --------------------------------------------------------------------------

def cmd_train_encoder(config: Config, store: str, out: str, seed: int = 0,
                      echo=print) -> str:
    """Joint encoder training on a store; prints top-1 retrieval."""
    episodes = read_dataset(store)
    if not episodes:
        raise CLIError(f"store {store} holds no episodes")
    roster, tasks = _load_world(config)
    present = sorted({ep.task_id for ep in episodes})
    by_id = {t.task_id: t for t in tasks}
    missing = [tid for tid in present if tid not in by_id]
    if missing:
        raise CLIError(f"unknown tasks: {', '.join(missing)}")
    commands = {tid: by_id[tid].command for tid in present}
    layout = ObsLayout(n_objects=len(roster.objects), n_zones=len(roster.zones))
    dataset = build_encoder_dataset(
        episodes, commands, layout, dim=config["embed.dim"],
        seed=config["embed.seed"], rng=rng_stream(seed, "analogs"),
        noise_sigma=config["embed.noise_sigma"])
    obs_dim = dataset.robot[present[0]][0].clip.frames[0].shape[0]
    encoder = init_encoder(rng_stream(seed, "enc"), obs_dim,
                           frames_k=config["embed.frames_k"],
                           dim=config["embed.dim"],
                           hidden=tuple(config["embed.hidden"]),
                           bottleneck=config["embed.bottleneck"])
    co_net = init_policy(rng_stream(seed, "pol"), obs_dim, config["embed.dim"],
                         torso_widths=(64, 64), head_widths=(32,))
    train_encoder(dataset, encoder, co_net,
                  steps=config["embed.steps"],
                  batch_size=min(config["embed.batch"], len(present)),
                  rng=rng_stream(seed, "steps"),
                  lr=config["embed.lr"],
                  bc_weight=config["embed.bc_weight"])

    all_clips = [demo.clip for tid in present for demo in dataset.robot[tid]]
    if len(present) == 1:
        accuracy = 1.0
        echo("warning: single-task store, retrieval is trivially 1.0")
    else:
        accuracy = retrieval_accuracy(encoder, all_clips, dataset.lang)
    save_encoder(out, encoder)
    table = {tid: dataset.lang[tid] for tid in present}
    export_embedding_table(out + ".embeddings.json", table)
    report = {"retrieval_accuracy": accuracy, "n_tasks": len(present),
              "n_clips": len(all_clips)}
    with open(out + ".retrieval.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(out, "train-encoder", config, seed, inputs=[store],
                   extra=report)
    echo(f"retrieval accuracy {accuracy:.3f} over {len(all_clips)} clips "
         f"({len(present)} tasks) -> {out}")
    return out


# --------------------------------------------------------------------------
# eval
# --------------------------------------------------------------------------

def cmd_eval(config: Config, out: str, policy_path: str | None = None,
             task_filter=None, seed: int | None = None, expert: bool = False,
             embeddings_path: str | None = None, echo=print) -> list[dict]:
    """Success table over eval rollouts; --expert runs the scripted expert
    through the identical harness instead of a checkpoint."""
    roster, tasks = _load_world(config)
    seed0 = config["eval.seed0"] if seed is None else seed
    n_seeds = config["eval.n_seeds"]

    if expert:
        chosen = _select_tasks(tasks, task_filter)
        act_fn = lambda task, world: scripted_expert(task, world)
    else:
        if policy_path is None:
            raise CLIError("eval needs --policy or --expert")
        net, _, meta = load_policy(policy_path)
        table_path = embeddings_path or policy_path + ".embeddings.json"
        if not os.path.exists(table_path):
            raise CLIError(f"no embedding table at {table_path}; "
                           "pass --embeddings or retrain")
        table = load_embedding_table(table_path)
        chosen = _select_tasks(tasks, task_filter or meta.get("task_ids"))
        missing = [t.task_id for t in chosen if t.task_id not in table]
        if missing:
            raise CLIError(f"embedding table lacks tasks: {', '.join(missing)}")
        act_fn = make_act_fn(net, table, a_max_pos=config["sim.a_max_pos"],
                             a_max_rot=config["sim.a_max_rot"])

    rates = evaluate_policy(act_fn, roster, chosen, n_seeds, seed0=seed0,
                            n_distractors=config["eval.distractors"],
                            randomize=True, max_steps=config["eval.max_steps"])
    rows = success_table(rates, n_seeds)
    echo(f"{'task':<24} {'success%':>9} {'sigma%':>7} {'n':>5}")
    for row in rows:
        echo(f"{row['task_id']:<24} {row['success_pct']:>9.1f} "
             f"{row['sigma_pct']:>7.1f} {row['n']:>5d}")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["task_id", "success_pct",
                                                "sigma_pct", "n"])
        writer.writeheader()
        writer.writerows(rows)
    inputs = [p for p in (policy_path,) if p]
    write_manifest(out, "eval", config, seed0, inputs=inputs,
                   extra={"expert": expert})
    return rows


# --------------------------------------------------------------------------
# dagger
# --------------------------------------------------------------------------

def cmd_dagger(config: Config, store: str, out: str, seed: int = 9000,
               echo=print) -> dict:
    """Gated deployment rounds seeded from an expert store.

    Writes per-iteration checkpoints, reports.jsonl, and a store of the
    collected shared-autonomy episodes under --out.
    """
    initial = read_dataset(store)
    if not initial:
        raise CLIError(f"store {store} holds no episodes")
    roster, tasks = _load_world(config)
    present = sorted({ep.task_id for ep in initial})
    bench = _select_tasks(tasks, present)
    vecs = build_task_vectors(bench, "one-hot", dim=config["embed.dim"])
    settings = _settings_from_config(config)
    gate = GateConfig(deviation_eps=config["dagger.deviation_eps"],
                      stall_k=config["dagger.stall_k"],
                      handback_min_run=config["dagger.handback_min_steps"])
    os.makedirs(out, exist_ok=True)

    def trainer(episodes, iteration):
        net, _ = train_policy_on_episodes(
            list(episodes), vecs, rng_stream(seed, "train", iteration),
            settings, shared_autonomy=config["featurize.shared_autonomy"])
        act = make_act_fn(net, vecs, a_max_pos=config["sim.a_max_pos"],
                          a_max_rot=config["sim.a_max_rot"])
        saver = lambda path: save_policy(path, net,
                                         extra_meta={"task_ids": present})
        return act, saver

    def eval_fn(act_fn, iteration):
        rates = evaluate_policy(act_fn, roster, bench,
                                config["dagger.eval_seeds"],
                                seed0=config["eval.seed0"],
                                n_distractors=config["eval.distractors"],
                                max_steps=config["eval.max_steps"])
        return float(np.mean(list(rates.values())))

    policies, reports, dataset = dagger_iterate(
        roster, bench, initial,
        iterations=config["dagger.iterations"],
        episodes_per_iter=config["dagger.episodes_per_iter"],
        trainer=trainer, gate_config=gate, seed0=seed, eval_fn=eval_fn,
        out_dir=out, max_steps=config["sim.t_max"],
        n_distractors=config["eval.distractors"], randomize=True)

    collected = dataset[len(initial):]
    header = read_header(store)
    collected_path = os.path.join(out, "collected.jsonl")
    create_store(collected_path, header)
    append_episodes(collected_path, collected,
                    a_max_pos=config["sim.a_max_pos"],
                    a_max_rot=config["sim.a_max_rot"])
    for rep in reports:
        echo(f"iteration {rep.iteration}: {rep.episodes} episodes, "
             f"mean interventions {rep.mean_interventions:.2f}, "
             f"success {rep.success_rate:.2f}")
    write_manifest(out, "dagger", config, seed, inputs=[store],
                   extra={"iterations": len(reports),
                          "collected": len(collected)})
    return {"checkpoints": len(policies), "reports": len(reports),
            "collected": len(collected), "out": out}


# --------------------------------------------------------------------------
# annotate
# --------------------------------------------------------------------------

def cmd_annotate(store: str, episode_id: str, outcome: str,
                 timestamp: str | None = None, echo=print) -> None:
    annotate_episode(store, episode_id, outcome, timestamp=timestamp)
    echo(f"{episode_id}: outcome set to {outcome}")


# --------------------------------------------------------------------------
# report
# --------------------------------------------------------------------------

def cmd_report(config: Config, out: str, store: str | None = None,
               reports_path: str | None = None, loss_paths=None,
               echo=print) -> dict:
    """Assemble run artifacts into out/: per-iteration scatter CSV from
    reports.jsonl, a per-task episode table from a store, and normalized
    copies of loss curves. Deterministic for fixed inputs."""
    os.makedirs(out, exist_ok=True)
    written = {}

    if reports_path:
        reports = read_reports(reports_path)
        scatter = os.path.join(out, "intervention-scatter.csv")
        export_reports_csv(scatter, reports)
        written["scatter_rows"] = len(reports)
        echo(f"intervention scatter: {len(reports)} rows -> {scatter}")

    if store:
        episodes = read_dataset(store)
        table: dict[str, dict] = {}
        for ep in episodes:
            row = table.setdefault(ep.task_id,
                                   {"episodes": 0, "successes": 0, "failures": 0,
                                    "aborted": 0})
            row["episodes"] += 1
            key = {"success": "successes", "failure": "failures",
                   "aborted": "aborted"}[ep.outcome]
            row[key] += 1
        task_table = os.path.join(out, "task-table.csv")
        with open(task_table, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["task_id", "episodes", "successes", "failures",
                             "aborted"])
            for tid in sorted(table):
                row = table[tid]
                writer.writerow([tid, row["episodes"], row["successes"],
                                 row["failures"], row["aborted"]])
            writer.writerow(["total", len(episodes),
                             sum(r["successes"] for r in table.values()),
                             sum(r["failures"] for r in table.values()),
                             sum(r["aborted"] for r in table.values())])
        written["task_rows"] = len(table)
        echo(f"task table: {len(table)} tasks, {len(episodes)} episodes "
             f"-> {task_table}")

    for path in loss_paths or ():
        name = os.path.basename(path)
        dest = os.path.join(out, name if name.endswith(".csv")
                            else name + ".csv")
        with open(path, "r", encoding="utf-8") as src_fh:
            rows = list(csv.reader(src_fh))
        with open(dest, "w", encoding="utf-8", newline="") as dst_fh:
            csv.writer(dst_fh).writerows(rows)
        written.setdefault("loss_curves", []).append(os.path.basename(dest))
        echo(f"loss curve -> {dest}")

    inputs = [p for p in [store, reports_path, *(loss_paths or ())] if p]
    write_manifest(out, "report", config, 0, inputs=inputs, extra=written)
    return written


# --------------------------------------------------------------------------
# serve
# --------------------------------------------------------------------------

def cmd_serve(config: Config, seed: int = 0, policy_path: str | None = None,
              store_path: str | None = None,
              embeddings_path: str | None = None, echo=print) -> None:
    from .teleop import serve_forever

    policy_act = None
    if policy_path is not None:
        net, _, _ = load_policy(policy_path)
        table_path = embeddings_path or policy_path + ".embeddings.json"
        if not os.path.exists(table_path):
            raise CLIError(f"no embedding table at {table_path}; "
                           "pass --embeddings or retrain")
        table = load_embedding_table(table_path)
        policy_act = make_act_fn(net, table,
                                 a_max_pos=config["sim.a_max_pos"],
                                 a_max_rot=config["sim.a_max_rot"])
    serve_forever(config, seed=seed, policy_act=policy_act,
                  store_path=store_path, echo=echo)


# --------------------------------------------------------------------------
# argparse wiring
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskbot",
        description="desk-scale imitation learning: collection, training, "
                    "gated deployment, evaluation, and reporting")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None,
                       help="config file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required,
                       help="output path (file or directory, per command)")

    p = sub.add_parser("collect-expert",
                       help="scripted-expert episodes into a fresh store")
    common(p)
    p.add_argument("--task", action="append", default=None,
                   help="task id filter, repeatable; all tasks when omitted")
    p.add_argument("--n", type=int, default=10, help="episodes per task")

    p = sub.add_parser("train-policy", help="behavior cloning from a store")
    common(p)
    p.add_argument("--store", required=True)
    p.add_argument("--conditioning", default="one-hot",
                   choices=["one-hot", "language", "trajectory"])
    p.add_argument("--encoder", default=None,
                   help="encoder checkpoint (trajectory conditioning)")

    p = sub.add_parser("train-encoder",
                       help="joint task-embedding training from a store")
    common(p)
    p.add_argument("--store", required=True)

    p = sub.add_parser("eval", help="success table over eval rollouts")
    common(p)
    p.add_argument("--policy", default=None, help="policy checkpoint")
    p.add_argument("--expert", action="store_true",
                   help="run the scripted expert through the same harness")
    p.add_argument("--task", action="append", default=None)
    p.add_argument("--embeddings", default=None,
                   help="embedding table (defaults to <policy>.embeddings.json)")

    p = sub.add_parser("dagger",
                       help="gated deployment rounds from an expert store")
    common(p)
    p.add_argument("--store", required=True)

    p = sub.add_parser("annotate", help="relabel one episode's outcome")
    p.add_argument("--store", required=True)
    p.add_argument("--episode-id", required=True)
    p.add_argument("--outcome", required=True,
                   choices=["success", "failure", "aborted"])
    p.add_argument("--timestamp", default=None)

    p = sub.add_parser("report", help="assemble run artifacts into a directory")
    common(p)
    p.add_argument("--store", default=None)
    p.add_argument("--reports", default=None, help="reports.jsonl path")
    p.add_argument("--loss", action="append", default=None,
                   help="loss curve CSV, repeatable")

    p = sub.add_parser("serve", help="teleoperation websocket server")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policy", default=None,
                   help="policy checkpoint for shared autonomy")
    p.add_argument("--embeddings", default=None,
                   help="embedding table (defaults to <policy>.embeddings.json)")
    p.add_argument("--store", default=None,
                   help="episode store for recorded sessions")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(getattr(args, "config", None))
        if args.command == "collect-expert":
            cmd_collect_expert(config, args.out, task_filter=args.task,
                               n=args.n, seed=args.seed)
        elif args.command == "train-policy":
            cmd_train_policy(config, args.store, args.out,
                             conditioning=args.conditioning, seed=args.seed,
                             encoder_path=args.encoder)
        elif args.command == "train-encoder":
            cmd_train_encoder(config, args.store, args.out, seed=args.seed)
        elif args.command == "eval":
            cmd_eval(config, args.out, policy_path=args.policy,
                     task_filter=args.task, seed=args.seed or None,
                     expert=args.expert, embeddings_path=args.embeddings)
        elif args.command == "dagger":
            cmd_dagger(config, args.store, args.out, seed=args.seed)
        elif args.command == "annotate":
            cmd_annotate(args.store, args.episode_id, args.outcome,
                         timestamp=args.timestamp)
        elif args.command == "report":
            cmd_report(config, args.out, store=args.store,
                       reports_path=args.reports, loss_paths=args.loss)
        elif args.command == "serve":
            cmd_serve(config, seed=args.seed, policy_path=args.policy,
                      store_path=args.store, embeddings_path=args.embeddings)
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command!r}")
    except (CLIError, ConfigError, EmbeddingError, TrainingError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
