"""Task-embedding subsystem.

Three ways to express "which task": deterministic compositional language
embeddings (unit token vectors summed and normalized, so commands sharing
words land near each other), one-hot task vectors, and a trajectory encoder
that maps a K-frame subsampled clip through an MLP with a 32-unit relu
bottleneck to a unit vector.

The encoder trains on task-paired batches: for each sampled task, one
human-analog clip, one robot demo, and the task's language vector. The
objective per triple is

    BC(policy(s_t, z_human), label_t) + D_cos(z_human, z_lang)
                                      + D_cos(z_robot, z_lang)

with gradients flowing into both the encoder and the policy. No embedding
noise is applied to z_human inside this objective.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import nn, policy as policy_mod
from .episodes import Episode, canon_float
from .featurize import featurize_dataset, wrap_angle

FRAMES_K = 20
BOTTLENECK = 32
EMBED_DIM = 64
ANALOG_NOISE = 0.01

PROVENANCES = ("language", "trajectory", "one-hot", "averaged")


class EmbeddingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TaskEmbedding:
    vec: np.ndarray
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise EmbeddingError(f"bad provenance {self.provenance!r}")
        if abs(np.linalg.norm(self.vec) - 1.0) > 1e-6:
            raise EmbeddingError("embedding is not unit-norm")


@dataclass(frozen=True, eq=False)
class TrajectoryClip:
    frames: tuple          # flat observation vectors
    modality: str          # robot | human-analog
    task_id: str

    def __post_init__(self):
        if len(self.frames) < 2:
            raise EmbeddingError("clip needs at least 2 frames")
        if self.modality not in ("robot", "human-analog"):
            raise EmbeddingError(f"bad modality {self.modality!r}")


def clip_from_episode(ep: Episode, modality: str = "robot") -> TrajectoryClip:
    return TrajectoryClip(frames=tuple(f.obs for f in ep.frames),
                          modality=modality, task_id=ep.task_id)


# --------------------------------------------------------------------------
# Language and one-hot providers
# --------------------------------------------------------------------------

# Function words carry no task content; a sentence encoder would discount
# them, so the stand-in drops them before summing token vectors.
STOPWORDS = frozenset((
    "a", "an", "and", "at", "by", "for", "from", "in", "into", "it", "of",
    "on", "onto", "the", "then", "to", "with",
))


def language_embedding(command: str, dim: int = EMBED_DIM, seed: int = 7) -> TaskEmbedding:
    """Deterministic compositional stand-in for a sentence encoder: each
    whitespace token maps to a fixed pseudo-random unit vector keyed by
    (token, seed); the command embeds as the normalized sum over content
    tokens (all tokens when every one is a stopword)."""
    tokens = command.split()
    if not tokens:
        raise EmbeddingError("empty command")
    content = [t for t in tokens if t.lower() not in STOPWORDS]
    total = np.zeros(dim)
    for token in content or tokens:
        vec = nn.rng_stream(seed, "token", token).normal(size=dim)
        total += vec / np.linalg.norm(vec)
    return TaskEmbedding(vec=nn.l2_normalize(total), provenance="language")


def one_hot_embedding(task_id: str, task_ids, dim: int = EMBED_DIM) -> TaskEmbedding:
    ordered = list(task_ids)
    if task_id not in ordered:
        raise EmbeddingError(f"unknown task {task_id!r}")
    if dim < len(ordered):
        raise EmbeddingError(f"dim {dim} too small for {len(ordered)} tasks")
    vec = np.zeros(dim)
    vec[ordered.index(task_id)] = 1.0
    return TaskEmbedding(vec=vec, provenance="one-hot")


# --------------------------------------------------------------------------
# Frame subsampling and the human-analog augmentation
# --------------------------------------------------------------------------

def subsample_frames(frames, k: int = FRAMES_K, mode: str = "inference",
                     rng: np.random.Generator | None = None) -> np.ndarray:
    """K frames with the first and last always kept.

    Training mode picks random interior frames; inference mode uses a
    uniform stride round(i*(L-1)/(K-1)). Clips shorter than K are padded by
    repeating the last frame.
    """
    rows = [np.asarray(f, dtype=np.float64) for f in frames]
    L = len(rows)
    if L < 2:
        raise EmbeddingError("need at least 2 frames to subsample")
    if L <= k:
        picked = rows + [rows[-1]] * (k - L)
        return np.asarray(picked)
    if mode == "inference":
        idx = [int(np.floor(i * (L - 1) / (k - 1) + 0.5)) for i in range(k)]
    elif mode == "train":
        if rng is None:
            raise EmbeddingError("training-mode subsampling needs an rng")
        interior = rng.choice(np.arange(1, L - 1), size=k - 2, replace=False)
        idx = [0] + sorted(int(i) for i in interior) + [L - 1]
    else:
        raise EmbeddingError(f"bad mode {mode!r}")
    return np.asarray([rows[i] for i in idx])


@dataclass(frozen=True)
class ObsLayout:
    """Index map into the flat observation vector for geometric transforms."""
    n_objects: int
    n_zones: int

    @property
    def x_indices(self):
        xs = [0]
        xs += [4 + 3 * i for i in range(self.n_objects)]
        xs += [4 + 3 * self.n_objects + 3 * j for j in range(self.n_zones)]
        return xs

    @property
    def y_indices(self):
        return [i + 1 for i in self.x_indices]

    @property
    def dim(self):
        return 4 + 3 * self.n_objects + 3 * self.n_zones


def apply_analog_transform(frames, layout: ObsLayout, reflect_x: bool,
                           reflect_y: bool, offsets: np.ndarray):
    """One geometric transform applied identically to every frame."""
    out = []
    for f in frames:
        v = np.asarray(f, dtype=np.float64).copy()
        if reflect_x:
            v[layout.x_indices] = 1.0 - v[layout.x_indices]
            v[2] = wrap_angle(np.pi - v[2])
        if reflect_y:
            v[layout.y_indices] = 1.0 - v[layout.y_indices]
            v[2] = wrap_angle(-v[2])
        v += offsets
        out.append(v)
    return tuple(out)


def augment_human_analog(clip: TrajectoryClip, rng: np.random.Generator,
                         layout: ObsLayout, noise_sigma: float = ANALOG_NOISE) -> TrajectoryClip:
    """Robot clip -> distorted 'human video' analog: coin-flip reflections
    plus one per-coordinate offset vector shared by all frames."""
    if clip.modality != "robot":
        raise EmbeddingError("augmentation expects a robot-modality clip")
    reflect_x = bool(rng.integers(2))
    reflect_y = bool(rng.integers(2))
    offsets = rng.normal(0.0, noise_sigma, size=layout.dim) if noise_sigma > 0 \
        else np.zeros(layout.dim)
    frames = apply_analog_transform(clip.frames, layout, reflect_x, reflect_y, offsets)
    return TrajectoryClip(frames=frames, modality="human-analog", task_id=clip.task_id)


# --------------------------------------------------------------------------
# Trajectory encoder
# --------------------------------------------------------------------------

@dataclass
class TrajectoryEncoder:
    obs_dim: int
    frames_k: int
    dim: int
    layers: list     # hidden relu layers, 32-unit relu bottleneck, linear out

    def params(self) -> dict:
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"enc.{i}.W"], out[f"enc.{i}.b"] = layer.W, layer.b
        return out

    @property
    def in_dim(self) -> int:
        return self.obs_dim * self.frames_k


def init_encoder(rng: np.random.Generator, obs_dim: int, frames_k: int = FRAMES_K,
                 dim: int = EMBED_DIM, hidden=(128,),
                 bottleneck: int = BOTTLENECK) -> TrajectoryEncoder:
    layers = []
    prev = obs_dim * frames_k
    for w in hidden:
        layers.append(nn.init_dense(rng, prev, w, "relu"))
        prev = w
    layers.append(nn.init_dense(rng, prev, bottleneck, "relu"))
    layers.append(nn.init_dense(rng, bottleneck, dim, "identity"))
    return TrajectoryEncoder(obs_dim=obs_dim, frames_k=frames_k, dim=dim, layers=layers)


def encode_batch(encoder: TrajectoryEncoder, x: np.ndarray):
    """x: (B, K*obs_dim) -> unit rows (B, dim), plus cache for backward."""
    x = nn.as_tensor2(x, "encoder input")
    if x.shape[1] != encoder.in_dim:
        raise nn.NumericError(f"encoder input width {x.shape[1]}, expects {encoder.in_dim}")
    h = x
    caches = []
    for layer in encoder.layers:
        h, c = nn.dense_forward(layer, h)
        caches.append(c)
    z = nn.l2_normalize(h)
    return z, (caches, h)


def encode_backward(encoder: TrajectoryEncoder, dz: np.ndarray, cache):
    caches, v = cache
    dh = nn.l2_normalize_backward(dz, v)
    grads = {}
    for i in range(len(encoder.layers) - 1, -1, -1):
        dh, dW, db = nn.dense_backward(encoder.layers[i], dh, caches[i])
        grads[f"enc.{i}.W"] = dW
        grads[f"enc.{i}.b"] = db
    return grads, dh


def encoder_preactivation_margin(encoder: TrajectoryEncoder, x: np.ndarray) -> float:
    """Smallest |pre-activation| feeding a relu; finite-difference checks
    re-roll their sample while this is tiny."""
    h = nn.as_tensor2(x, "encoder input")
    margin = np.inf
    for layer in encoder.layers:
        pre = h @ layer.W.T + layer.b
        if layer.activation == "relu":
            margin = min(margin, float(np.min(np.abs(pre))))
        h = nn._activate(pre, layer.activation)
    return margin


def clip_vector(clip: TrajectoryClip, frames_k: int, mode: str = "inference",
                rng: np.random.Generator | None = None) -> np.ndarray:
    return subsample_frames(clip.frames, frames_k, mode, rng).reshape(-1)


def encode_clip(encoder: TrajectoryEncoder, clip: TrajectoryClip,
                mode: str = "inference", rng=None) -> TaskEmbedding:
    x = clip_vector(clip, encoder.frames_k, mode, rng).reshape(1, -1)
    z, _ = encode_batch(encoder, x)
    return TaskEmbedding(vec=z[0], provenance="trajectory")


def average_task_embedding(encoder: TrajectoryEncoder, clips) -> TaskEmbedding:
    """Normalized sum of clip embeddings (inference-mode subsampling)."""
    if not clips:
        raise EmbeddingError("no clips to average")
    total = np.zeros(encoder.dim)
    for clip in clips:
        total += encode_clip(encoder, clip).vec
    return TaskEmbedding(vec=nn.l2_normalize(total), provenance="averaged")


# --------------------------------------------------------------------------
# Dataset container and batch sampling
# --------------------------------------------------------------------------

@dataclass
class RobotDemo:
    clip: TrajectoryClip
    labels: list           # labelable-frame ActionLabels, in t order


@dataclass
class EncoderDataset:
    task_ids: list
    lang: dict             # task_id -> TaskEmbedding
    robot: dict            # task_id -> list[RobotDemo]
    human: dict            # task_id -> list[TrajectoryClip]

    def validate(self):
        for tid in self.task_ids:
            if not self.robot.get(tid):
                raise EmbeddingError(f"task {tid!r} has no robot demos")
            if not self.human.get(tid):
                raise EmbeddingError(f"task {tid!r} has no human-analog clips")


def build_encoder_dataset(episodes: list[Episode], commands: dict, layout: ObsLayout,
                          dim: int = EMBED_DIM, seed: int = 7,
                          rng: np.random.Generator | None = None,
                          augment_per_demo: int = 1,
                          noise_sigma: float = ANALOG_NOISE) -> EncoderDataset:
    """Group episodes by task, compute labels, and synthesize human-analog
    clips by augmenting each robot demo."""
    rng = rng or nn.rng_stream(seed, "augment")
    robot: dict[str, list[RobotDemo]] = {}
    human: dict[str, list[TrajectoryClip]] = {}
    for ep in episodes:
        labels = [lab for _, lab in featurize_dataset([ep])]
        if not labels:
            continue
        clip = clip_from_episode(ep)
        robot.setdefault(ep.task_id, []).append(RobotDemo(clip=clip, labels=labels))
        for _ in range(augment_per_demo):
            human.setdefault(ep.task_id, []).append(
                augment_human_analog(clip, rng, layout, noise_sigma))
    task_ids = sorted(robot)
    lang = {tid: language_embedding(commands[tid], dim=dim, seed=seed) for tid in task_ids}
    ds = EncoderDataset(task_ids=task_ids, lang=lang, robot=robot, human=human)
    ds.validate()
    return ds


@dataclass(frozen=True)
class EncoderTriple:
    human_clip: TrajectoryClip
    robot_demo: RobotDemo
    lang: TaskEmbedding


def sample_encoder_batch(dataset: EncoderDataset, batch_size: int,
                         rng: np.random.Generator,
                         scheme: str = "task-paired") -> list[EncoderTriple]:
    """task-paired: tasks drawn uniformly, then one human clip and one robot
    demo of that task each. uniform-clips: the task is drawn proportionally
    to its share of the pooled human clips (rare tasks starve)."""
    triples = []
    if scheme == "task-paired":
        for _ in range(batch_size):
            tid = dataset.task_ids[rng.integers(len(dataset.task_ids))]
            triples.append(_triple_for(dataset, tid, rng))
    elif scheme == "uniform-clips":
        pool = [tid for tid in dataset.task_ids for _ in dataset.human[tid]]
        for _ in range(batch_size):
            tid = pool[rng.integers(len(pool))]
            triples.append(_triple_for(dataset, tid, rng))
    else:
        raise EmbeddingError(f"bad sampling scheme {scheme!r}")
    return triples


def _triple_for(dataset: EncoderDataset, tid: str, rng) -> EncoderTriple:
    humans = dataset.human.get(tid)
    robots = dataset.robot.get(tid)
    if not humans or not robots:
        raise EmbeddingError(f"task {tid!r} has no demos")
    return EncoderTriple(
        human_clip=humans[rng.integers(len(humans))],
        robot_demo=robots[rng.integers(len(robots))],
        lang=dataset.lang[tid],
    )


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------

def encoder_loss(triples: list[EncoderTriple], encoder: TrajectoryEncoder,
                 policy_net: policy_mod.PolicyNet, rng: np.random.Generator,
                 bc_weight: float = 1.0, subsample_mode: str = "train"):
    """Mean per-triple objective and gradients for encoder and policy.

    Returns (loss, encoder_grads, policy_grads). The behavior-cloning term
    conditions the policy on z_human at one uniformly drawn labelable frame
    of the paired robot demo.
    """
    if encoder.dim != policy_net.z_dim:
        raise nn.NumericError("encoder and policy disagree on embedding dim")
    B = len(triples)
    xs = []
    for tr in triples:
        xs.append(clip_vector(tr.human_clip, encoder.frames_k, subsample_mode, rng))
    for tr in triples:
        xs.append(clip_vector(tr.robot_demo.clip, encoder.frames_k, subsample_mode, rng))
    z_all, enc_cache = encode_batch(encoder, np.asarray(xs))
    z_h, z_e = z_all[:B], z_all[B:]

    lang = np.stack([tr.lang.vec for tr in triples])
    cos_terms = float(np.sum(2.0 - np.sum(z_h * lang, axis=1) - np.sum(z_e * lang, axis=1)))
    loss = cos_terms / B
    dz_all = np.zeros_like(z_all)
    dz_all[:B] = -lang / B
    dz_all[B:] = -lang / B

    policy_grads = {name: np.zeros_like(p) for name, p in policy_net.params().items()}
    if bc_weight > 0.0:
        labels = [tr.robot_demo.labels[rng.integers(len(tr.robot_demo.labels))]
                  for tr in triples]
        batch = policy_mod.LabelBatch.from_labels(labels, z_h)
        bc_loss, pol_grads, dz_bc = policy_mod.loss_and_grads(policy_net, batch)
        loss += bc_weight * bc_loss
        for name in policy_grads:
            policy_grads[name] = bc_weight * pol_grads[name]
        dz_all[:B] += bc_weight * dz_bc

    encoder_grads, _ = encode_backward(encoder, dz_all, enc_cache)
    return loss, encoder_grads, policy_grads


def train_encoder(dataset: EncoderDataset, encoder: TrajectoryEncoder,
                  policy_net: policy_mod.PolicyNet, steps: int, batch_size: int,
                  rng: np.random.Generator, lr: float = 1e-3,
                  scheme: str = "task-paired", bc_weight: float = 1.0) -> list[float]:
    """Joint optimization per the paired-batch scheme; returns the loss trace."""
    dataset.validate()
    adam = nn.AdamState(lr=lr)
    enc_params = encoder.params()
    pol_params = {f"pol.{k}": v for k, v in policy_net.params().items()}
    merged = {**enc_params, **pol_params}
    trace = []
    for _ in range(steps):
        triples = sample_encoder_batch(dataset, batch_size, rng, scheme)
        loss, enc_grads, pol_grads = encoder_loss(triples, encoder, policy_net, rng,
                                                  bc_weight=bc_weight)
        grads = {**enc_grads, **{f"pol.{k}": v for k, v in pol_grads.items()}}
        nn.adam_step(adam, merged, grads)
        trace.append(loss)
    return trace


# --------------------------------------------------------------------------
# Retrieval metric and exports
# --------------------------------------------------------------------------

def retrieval_accuracy(encoder: TrajectoryEncoder, clips, lang: dict) -> float:
    """Fraction of clips whose embedding is nearest its own task's language
    vector; cosine similarity, ties broken by lowest task_id."""
    if len(lang) < 2:
        raise EmbeddingError("retrieval needs at least 2 tasks")
    task_ids = sorted(lang)
    mat = np.stack([lang[tid].vec for tid in task_ids])
    hits = 0
    for clip in clips:
        z = encode_clip(encoder, clip).vec
        sims = mat @ z
        best = int(np.argmax(sims))   # argmax returns the first (lowest id) tie
        if task_ids[best] == clip.task_id:
            hits += 1
    return hits / len(clips) if clips else 0.0


EMBED_TABLE_FORMAT = "deskbot-embeddings/1"


def export_embedding_table(path: str, table: dict) -> None:
    """task_id -> unit vector, as JSON with 9-significant-digit floats."""
    dims = {len(emb.vec) for emb in table.values()}
    if len(dims) > 1:
        raise EmbeddingError("mixed embedding dims in table")
    payload = {
        "format": EMBED_TABLE_FORMAT,
        "dim": dims.pop() if dims else 0,
        "embeddings": {tid: [canon_float(v) for v in emb.vec]
                       for tid, emb in sorted(table.items())},
        "provenance": {tid: emb.provenance for tid, emb in sorted(table.items())},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, separators=(",", ":"), sort_keys=True)
        fh.write("\n")


def load_embedding_table(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != EMBED_TABLE_FORMAT:
        raise EmbeddingError(f"{path}: unexpected embedding-table format")
    prov = payload.get("provenance", {})
    out = {}
    for tid, vals in payload["embeddings"].items():
        vec = np.asarray(vals, dtype=np.float64)
        out[tid] = TaskEmbedding(vec=nn.l2_normalize(vec),
                                 provenance=prov.get(tid, "language"))
    return out


def save_encoder(path: str, encoder: TrajectoryEncoder, extra_meta: dict | None = None) -> None:
    meta = {"kind": "encoder", "obs_dim": encoder.obs_dim, "frames_k": encoder.frames_k,
            "dim": encoder.dim,
            "hidden": [l.out_dim for l in encoder.layers[:-2]],
            "bottleneck": encoder.layers[-2].out_dim}
    if extra_meta:
        meta.update(extra_meta)
    nn.save_checkpoint(path, encoder.params(), meta)


def load_encoder(path: str) -> TrajectoryEncoder:
    arrays, meta = nn.load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise nn.NumericError(f"{path} is not an encoder checkpoint")
    encoder = init_encoder(np.random.default_rng(0), meta["obs_dim"], meta["frames_k"],
                           meta["dim"], hidden=tuple(meta["hidden"]),
                           bottleneck=meta.get("bottleneck", BOTTLENECK))
    for name, p in encoder.params().items():
        if name not in arrays:
            raise nn.NumericError(f"{path}: checkpoint missing array {name}")
        p[...] = arrays[name]
    return encoder
