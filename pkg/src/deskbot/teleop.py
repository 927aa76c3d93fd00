"""Teleoperation websocket server.

One client drives the simulator through a fixed-rate control loop:

- the network reader thread parses client JSON and enqueues commands into a
  bounded queue; the loop consumes everything queued at each tick boundary;
- every tick (wall-clock, ``teleop.tick_hz``) one action executes: the
  human's held action while the clutch is down or in manual mode, the
  policy's action otherwise; the post-tick state is broadcast as JSON;
- a held human action decays linearly to zero over ``teleop.decay_ticks``
  ticks without fresh input (the grip target is sticky, matching a physical
  trigger that stays where it was left);
- episodes begin at ``reset`` and end at ``mark_success``, ``abort``, or the
  next ``reset``; frames record the executed (clamped) action and the source
  that produced it, so stored teleop episodes validate and featurize exactly
  like scripted ones.

Malformed client messages produce an error reply and the session continues.
The plain-HTTP side of the endpoint serves the UI bundle out of
``frontend/dist`` when present.
"""

from __future__ import annotations

import json
import math
import os
import queue
import threading
import time
from dataclasses import dataclass

from .config import Config
from .episodes import (
    Episode,
    EpisodeIdGen,
    Frame,
    RawAction,
    StoreHeader,
    create_store,
    obs_dim as store_obs_dim,
    write_episode,
)
from .sim import SimWorld, TaskSpec, clamp_action, load_tasks, obs_vector, reset, step


class TeleopError(ValueError):
    """Client-visible rejection: reported, never fatal to the session."""


# Command name -> exactly the extra fields it accepts.
COMMAND_FIELDS = {
    "clutch_down": set(),
    "clutch_up": set(),
    "move": {"dx", "dy", "dtheta"},
    "grip": {"g"},
    "toggle_auto": set(),
    "mark_success": set(),
    "abort": set(),
    "reset": {"task", "seed"},
}


def parse_command(raw: str) -> dict:
    """Strict JSON command: known type, exact field set, finite numbers."""
    try:
        msg = json.loads(raw)
    except ValueError as exc:
        raise TeleopError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict):
        raise TeleopError("command must be a JSON object")
    kind = msg.get("type")
    if kind not in COMMAND_FIELDS:
        raise TeleopError(f"unknown command type {kind!r}")
    extra = set(msg) - {"type"} - COMMAND_FIELDS[kind]
    if extra:
        raise TeleopError(f"unknown fields for {kind}: {sorted(extra)}")
    missing = COMMAND_FIELDS[kind] - set(msg)
    if missing:
        raise TeleopError(f"missing fields for {kind}: {sorted(missing)}")
    for name in COMMAND_FIELDS[kind]:
        if name in ("dx", "dy", "dtheta", "g"):
            value = msg[name]
            if not isinstance(value, (int, float)) or isinstance(value, bool) \
                    or not math.isfinite(float(value)):
                raise TeleopError(f"field {name} must be a finite number")
            msg[name] = float(value)
    if kind == "reset":
        if not isinstance(msg["task"], str):
            raise TeleopError("field task must be a string")
        if not isinstance(msg["seed"], int) or isinstance(msg["seed"], bool):
            raise TeleopError("field seed must be an integer")
    return msg


@dataclass
class HeldAction:
    """The human's most recent motion command plus its age in ticks."""

    dx: float = 0.0
    dy: float = 0.0
    dtheta: float = 0.0
    grip: float = 1.0
    ticks_since_input: int = 0

    def decayed(self, decay_ticks: int) -> tuple[float, float, float, float]:
        factor = max(0.0, 1.0 - self.ticks_since_input / decay_ticks)
        return (self.dx * factor, self.dy * factor, self.dtheta * factor,
                self.grip)


class TeleopSession:
    """Control-loop state machine, independent of any transport."""

    def __init__(self, config: Config, seed: int = 0, policy_act=None,
                 store_path: str | None = None):
        self.config = config
        self.roster, self.tasks = load_tasks(config["sim.tasks_file"] or None)
        self.by_id = {t.task_id: t for t in self.tasks}
        self.mode = "manual"
        self.clutch = False
        self.recording = False
        self.task: TaskSpec | None = None
        self.world: SimWorld | None = None
        self.policy_act = policy_act
        self.held = HeldAction()
        self.tick = 0
        self.frames: list[Frame] = []
        self.episodes: list[Episode] = []
        self.episode_seed = 0
        self.id_gen = EpisodeIdGen(seed)
        self.store_path = store_path
        if store_path is not None and not os.path.exists(store_path):
            create_store(store_path, StoreHeader(
                obs_dim=store_obs_dim(len(self.roster.objects),
                                      len(self.roster.zones)),
                roster=config["sim.tasks_file"] or "packaged-default"))

    # -- command handling --------------------------------------------------

    def handle(self, msg: dict) -> None:
        kind = msg["type"]
        if kind == "clutch_down":
            self.clutch = True
        elif kind == "clutch_up":
            self.clutch = False
        elif kind == "move":
            self.held.dx = msg["dx"]
            self.held.dy = msg["dy"]
            self.held.dtheta = msg["dtheta"]
            self.held.ticks_since_input = 0
        elif kind == "grip":
            if not 0.0 <= msg["g"] <= 1.0:
                raise TeleopError("grip target must be in [0, 1]")
            self.held.grip = msg["g"]
            self.held.ticks_since_input = 0
        elif kind == "toggle_auto":
            if self.mode == "manual" and self.policy_act is None:
                raise TeleopError("no policy loaded; cannot enter autonomous mode")
            self.mode = "autonomous" if self.mode == "manual" else "manual"
        elif kind == "mark_success":
            if not self.recording:
                raise TeleopError("mark_success while not recording")
            self._finalize("success")
        elif kind == "abort":
            if not self.recording:
                raise TeleopError("abort while not recording")
            self._finalize("aborted")
        elif kind == "reset":
            self._reset(msg["task"], msg["seed"])
        else:  # pragma: no cover - parse_command filters unknown types
            raise TeleopError(f"unknown command type {kind!r}")

    def _reset(self, task_id: str, seed: int) -> None:
        task = self.by_id.get(task_id)
        if task is None:
            raise TeleopError(f"unknown task {task_id!r}")
        if self.recording and self.frames:
            self._finalize("aborted")
        self.task = task
        self.episode_seed = seed
        self.world = reset(
            self.roster, task, seed,
            n_distractors=self.config["eval.distractors"], randomize=True,
            home=(self.config["sim.home_x"], self.config["sim.home_y"],
                  self.config["sim.home_theta"]),
            a_max_pos=self.config["sim.a_max_pos"],
            a_max_rot=self.config["sim.a_max_rot"],
            grip_rate=self.config["sim.grip_rate"],
            grasp_radius=self.config["sim.grasp_radius"],
            body_radius=self.config["sim.gripper_body_radius"])
        self.frames = []
        self.recording = True
        self.held = HeldAction()

    def _finalize(self, outcome: str) -> None:
        self.recording = False
        if not self.frames:
            return
        episode = Episode(episode_id=self.id_gen(), task_id=self.task.task_id,
                          frames=self.frames, outcome=outcome,
                          seed=self.episode_seed, collected_by="teleop")
        self.episodes.append(episode)
        if self.store_path is not None:
            write_episode(episode, self.store_path,
                          a_max_pos=self.config["sim.a_max_pos"],
                          a_max_rot=self.config["sim.a_max_rot"])
        self.frames = []

    # -- control loop ------------------------------------------------------

    def human_controls(self) -> bool:
        """The clutch always hands control to the human; otherwise mode decides."""
        return self.clutch or self.mode == "manual"

    def tick_step(self) -> None:
        """One control tick: resolve the action, step, record."""
        if self.world is None:
            self.tick += 1
            return
        if self.human_controls():
            dx, dy, dtheta, grip = self.held.decayed(
                self.config["teleop.decay_ticks"])
            action = RawAction(dx, dy, dtheta, grip)
            source = "human-intervention" if (self.mode == "autonomous"
                                              and self.clutch) else "expert"
            self.held.ticks_since_input += 1
        else:
            action = self.policy_act(self.task, self.world)
            source = "policy"
        action = clamp_action(self.world, action)
        if self.recording:
            self.frames.append(Frame(t=len(self.frames),
                                     obs=obs_vector(self.world),
                                     action=action, source=source))
        step(self.world, action)
        self.tick += 1

    # -- state broadcast ---------------------------------------------------

    def state_message(self) -> dict:
        world = self.world
        if world is None:
            gripper = [0.0, 0.0, 0.0, 1.0]
            objects = []
            zones = []
            task_id = ""
        else:
            gripper = [world.gripper_x, world.gripper_y, world.gripper_theta,
                       world.aperture]
            objects = [{"id": oid,
                        "x": float(world.positions[oid][0]),
                        "y": float(world.positions[oid][1]),
                        "held": world.held == oid}
                       for oid in world.roster.object_ids if world.present[oid]]
            zones = [{"id": z.zone_id, "x": z.x, "y": z.y, "radius": z.radius}
                     for z in world.roster.zones]
            task_id = self.task.task_id
        return {
            "type": "state",
            "tick": self.tick,
            "gripper": [float(v) for v in gripper],
            "objects": objects,
            "zones": zones,
            "mode": self.mode,
            "clutch": self.clutch,
            "recording": self.recording,
            "task_id": task_id,
            "outcome_pending": self.recording,
        }


# --------------------------------------------------------------------------
# Websocket plumbing
# --------------------------------------------------------------------------

QUEUE_SIZE = 256

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
}


def static_file_responder(dist_dir: str):
    """process_request hook serving the UI bundle to plain HTTP requests."""

    def respond(connection, request):
        from websockets.datastructures import Headers
        from websockets.http11 import Response

        if "Upgrade" in request.headers:
            return None
        path = request.path.split("?", 1)[0]
        rel = "index.html" if path == "/" else path.lstrip("/")
        full = os.path.normpath(os.path.join(dist_dir, rel))
        inside = full.startswith(os.path.normpath(dist_dir) + os.sep)
        if not inside or not os.path.isfile(full):
            return connection.respond(404, "not found\n")
        with open(full, "rb") as fh:
            body = fh.read()
        ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1],
                                   "application/octet-stream")
        return Response(200, "OK", Headers([
            ("Content-Type", ctype),
            ("Content-Length", str(len(body))),
        ]), body)

    return respond


class TeleopServer:
    """One-client websocket server around a TeleopSession."""

    def __init__(self, config: Config, seed: int = 0, policy_act=None,
                 store_path: str | None = None, dist_dir: str | None = None,
                 max_ticks: int | None = None, echo=print):
        self.config = config
        self.session = TeleopSession(config, seed=seed, policy_act=policy_act,
                                     store_path=store_path)
        self.tick_interval = 1.0 / config["teleop.tick_hz"]
        self.max_ticks = max_ticks
        self.echo = echo
        self.dist_dir = dist_dir
        self._busy = threading.Lock()
        self._server = None
        self._thread = None

    # -- lifecycle ---------------------------------------------------------

    def start(self, host: str = "127.0.0.1", port: int | None = None):
        from websockets.sync.server import serve as ws_serve
        process_request = (static_file_responder(self.dist_dir)
                           if self.dist_dir else None)
        self._server = ws_serve(self._handler, host,
                                port if port is not None
                                else self.config["teleop.port"],
                                process_request=process_request)
        self._thread = threading.Thread(target=self._server.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self._server.socket.getsockname()[1]

    def stop(self):
        if self._server is not None:
            self._server.shutdown()
            self._thread.join(timeout=5)

    # -- per-connection loop -------------------------------------------------

    def _handler(self, ws):
        if not self._busy.acquire(blocking=False):
            ws.send(json.dumps({"type": "error",
                                "message": "another client is connected"}))
            ws.close()
            return
        try:
            self._run_connection(ws)
        finally:
            self._busy.release()

    def _run_connection(self, ws):
        inbox: queue.Queue = queue.Queue(maxsize=QUEUE_SIZE)
        closed = threading.Event()

        def reader():
            try:
                for raw in ws:
                    try:
                        inbox.put_nowait(raw)
                    except queue.Full:
                        _safe_send(ws, {"type": "error",
                                        "message": "command queue full"})
            except Exception:
                pass
            finally:
                closed.set()

        threading.Thread(target=reader, daemon=True).start()

        session = self.session
        ticks_served = 0
        next_tick = time.monotonic() + self.tick_interval
        while not closed.is_set():
            now = time.monotonic()
            if now < next_tick:
                time.sleep(min(next_tick - now, 0.01))
                continue
            next_tick += self.tick_interval
            while True:
                try:
                    raw = inbox.get_nowait()
                except queue.Empty:
                    break
                try:
                    session.handle(parse_command(raw))
                except TeleopError as exc:
                    _safe_send(ws, {"type": "error", "message": str(exc)})
            session.tick_step()
            if not _safe_send(ws, session.state_message()):
                break
            ticks_served += 1
            if self.max_ticks is not None and ticks_served >= self.max_ticks:
                break


def _safe_send(ws, payload: dict) -> bool:
    try:
        ws.send(json.dumps(payload, separators=(",", ":")))
        return True
    except Exception:
        return False


def default_dist_dir() -> str | None:
    """frontend/dist relative to the repository root, when present."""
    root = os.path.dirname(os.path.dirname(os.path.dirname(
        os.path.abspath(__file__))))
    dist = os.path.join(root, "frontend", "dist")
    return dist if os.path.isdir(dist) else None


def serve_forever(config: Config, seed: int = 0, policy_act=None,
                  store_path: str | None = None, echo=print) -> None:
    server = TeleopServer(config, seed=seed, policy_act=policy_act,
                          store_path=store_path, dist_dir=default_dist_dir(),
                          echo=echo)
    port = server.start(host="0.0.0.0", port=config["teleop.port"])
    echo(f"teleop server on ws://0.0.0.0:{port} "
         f"(tick rate {config['teleop.tick_hz']} Hz)")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        echo("shutting down")
    finally:
        server.stop()
