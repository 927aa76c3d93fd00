"""Experiment configuration: a flat namespaced key-value schema.

Config files are plain text, one ``section.key = value`` per line, with
``#`` comments.  Every key must exist in :data:`CONFIG_SCHEMA`; unknown keys
are rejected so typos fail loudly.  Values are typed by their schema default
(int, float, bool, str, or comma-separated tuples of int/float).

``Config`` instances behave like read-only mappings and can re-serialize
themselves (`dumps`) so that every run can echo its effective configuration
into its output directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Any

# key -> (default, comment).  Types are inferred from the default value.
CONFIG_SCHEMA: dict[str, tuple[Any, str]] = {
    # --- simulator -------------------------------------------------------
    "sim.tasks_file": ("", "task/roster JSON; empty = packaged default set"),
    "sim.a_max_pos": (0.05, "per-step position delta clamp, world units"),
    "sim.a_max_rot": (0.2, "per-step rotation delta clamp, radians"),
    "sim.grip_rate": (0.2, "max aperture change per step"),
    "sim.grasp_radius": (0.03, "bind distance when the jaws cross closed"),
    "sim.gripper_body_radius": (0.01, "closed-gripper footprint used for contact pushing"),
    "sim.home_x": (0.5, "gripper home pose"),
    "sim.home_y": (0.1, ""),
    "sim.home_theta": (0.0, ""),
    "sim.t_max": (300, "scripted-expert step budget per episode"),
    "sim.place_radius": (0.04, "pick-place success radius around the destination"),
    "sim.grasp_hold_steps": (5, "consecutive held steps for grasp success"),
    "sim.push_distance": (0.15, "required displacement along the commanded axis"),
    "sim.wipe_coverage": (0.8, "fraction of zone width that must be swept"),
    "sim.wipe_align_tol": (0.3, "orientation tolerance (rad) for wipe contact"),

    # --- featurizer (label construction) ---------------------------------
    "featurize.grip_threshold": (0.01, "aperture change that ends the horizon search"),
    "featurize.pose_threshold": (0.05, "pose-delta L2 norm that ends the horizon search"),
    "featurize.rot_scale": (0.1, "weight of the rotation component in the pose metric"),
    "featurize.open_loop_horizon": (10, "number of chained future action slots"),
    "featurize.shared_autonomy": ("interventions", "frames used from shared-autonomy episodes: interventions|all"),

    # --- task embeddings --------------------------------------------------
    "embed.dim": (64, "task embedding width"),
    "embed.frames_k": (20, "frames kept when subsampling a clip"),
    "embed.seed": (7, "seed for the synthetic language token vectors"),
    "embed.noise_sigma": (0.01, "per-coordinate offset noise in clip augmentation"),
    "embed.bottleneck": (32, "narrow relu layer before the embedding output"),
    "embed.hidden": ((128,), "encoder hidden widths before the bottleneck"),
    "embed.lr": (1e-3, ""),
    "embed.batch": (16, "tasks per encoder batch"),
    "embed.steps": (1200, ""),
    "embed.avg_clips": (10, "clips averaged when conditioning on trajectories"),
    "embed.bc_weight": (1.0, "weight of the cloning term in the encoder objective"),

    # --- policy network and training --------------------------------------
    "policy.torso_widths": ((128, 128, 128), "film-conditioned trunk"),
    "policy.head_widths": ((64, 64), "per-head hidden widths"),
    "policy.aux_weight": (1.0, "weight of the open-loop auxiliary loss"),
    "policy.noise_sigma": (0.1, "stddev of embedding noise during training"),
    "policy.huber_delta": (1.0, ""),
    "policy.w_pos": (100.0, "position-error loss weight"),
    "policy.w_rot": (10.0, "rotation-error loss weight"),
    "policy.w_grip": (0.5, "gripper log-loss weight"),
    "policy.lr": (1e-3, "scale with the batch size if you raise it"),
    "policy.batch": (64, ""),
    "policy.steps": (3000, ""),

    # --- gated intervention collection ------------------------------------
    "dagger.deviation_eps": (0.12, "distance from the reference before the gate takes over"),
    "dagger.stall_k": (40, "steps without progress before the gate takes over"),
    "dagger.handback_min_steps": (5, "minimum intervention run length"),
    "dagger.iterations": (6, ""),
    "dagger.episodes_per_iter": (25, ""),
    "dagger.eval_seeds": (10, "autonomous eval rollouts per task per iteration"),

    # --- evaluation --------------------------------------------------------
    "eval.n_seeds": (100, "rollouts per task"),
    "eval.distractors": (1, "extra objects placed at reset"),
    "eval.seed0": (10000, "first eval seed; training seeds stay below this"),
    "eval.max_steps": (300, ""),

    # --- teleop ------------------------------------------------------------
    "teleop.tick_hz": (10.0, "control loop rate"),
    "teleop.port": (8765, ""),
    "teleop.decay_ticks": (3, "held human action decays to zero over this many ticks"),
}


class ConfigError(ValueError):
    pass


def _parse_value(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            elem = type(default[0]) if default else int
            if not raw:
                return ()
            return tuple(elem(part) for part in raw.split(","))
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r}") from exc


def _format_value(value: Any) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class Config:
    """Effective configuration: schema defaults overlaid with file contents."""

    values: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        merged = {k: default for k, (default, _) in CONFIG_SCHEMA.items()}
        for key, val in self.values.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = val
        self.values = merged

    def __getitem__(self, key: str) -> Any:
        if key not in self.values:
            raise ConfigError(f"unknown config key {key!r}")
        return self.values[key]

    def with_overrides(self, **overrides: Any) -> "Config":
        """New Config with dotted keys given as key="sim.t_max" style kwargs not
        being valid python, overrides use the full dotted name as dict items."""
        vals = dict(self.values)
        vals.update(overrides)
        return Config(vals)

    def override(self, items: dict[str, Any]) -> "Config":
        vals = dict(self.values)
        for key, val in items.items():
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = val
        return Config(vals)

    def dumps(self) -> str:
        lines = []
        for key, (_, comment) in CONFIG_SCHEMA.items():
            suffix = f"  # {comment}" if comment else ""
            lines.append(f"{key} = {_format_value(self.values[key])}{suffix}")
        return "\n".join(lines) + "\n"

    def check_paths(self) -> None:
        """Referenced files must exist at load time."""
        tasks = self.values["sim.tasks_file"]
        if tasks and not os.path.exists(tasks):
            raise ConfigError(f"sim.tasks_file does not exist: {tasks}")


def parse_config(text: str) -> Config:
    values: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.split("#", 1)[0]
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, CONFIG_SCHEMA[key][0])
    return Config(values)


def load_config(path: str | None = None) -> Config:
    """Load a config file (or pure defaults when path is None)."""
    if path is None:
        cfg = Config({})
    else:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = parse_config(fh.read())
    cfg.check_paths()
    return cfg


def default_config_text() -> str:
    """The annotated default config, suitable for writing to disk."""
    return Config({}).dumps()
