"""
Driving the teleop server from a script
=======================================

The teleop server speaks a small JSON protocol over a websocket: the
client sends commands (clutch, move, grip, reset, mark_success), the
server ticks the simulator and streams back world state. The browser UI
in frontend/ is one such client; this script is another. The tick rate
is raised far above the interactive 10 Hz so the demo finishes quickly.
"""

import json
import tempfile
from pathlib import Path

from websockets.sync.client import connect

from deskbot.config import Config
from deskbot.episodes import read_dataset
from deskbot.teleop import TeleopServer

config = Config({"teleop.tick_hz": 200.0, "eval.distractors": 0})
store = str(Path(tempfile.mkdtemp()) / "sessions.jsonl")
server = TeleopServer(config, seed=5, store_path=store)
port = server.start("127.0.0.1", 0)
print(f"server listening on port {port}")


def send(ws, **cmd):
    ws.send(json.dumps(cmd))


def next_state(ws):
    while True:
        msg = json.loads(ws.recv(timeout=5))
        if msg["type"] == "state":
            return msg


with connect(f"ws://127.0.0.1:{port}/ws") as ws:
    # Start an episode: recording begins at reset.
    send(ws, type="reset", task="place-apple-tray", seed=5)
    state = next_state(ws)
    print(f"task {state['task_id']}, gripper at "
          f"({state['gripper'][0]:.2f}, {state['gripper'][1]:.2f}), "
          f"{len(state['objects'])} objects in scene")

    # Hold the clutch and drag: each move is a pose delta; between
    # inputs the last motion decays linearly over a few ticks.
    send(ws, type="clutch_down")
    for _ in range(12):
        send(ws, type="move", dx=0.02, dy=0.015, dtheta=0.0)
        state = next_state(ws)
    send(ws, type="clutch_up")
    print(f"after dragging: gripper at "
          f"({state['gripper'][0]:.2f}, {state['gripper'][1]:.2f}), "
          f"tick {state['tick']}")

    # Close the gripper; the aperture slews toward the target.
    send(ws, type="grip", g=0.0)
    for _ in range(8):
        state = next_state(ws)
    print(f"aperture now {state['gripper'][3]:.1f}")

    # The operator judges the outcome; the server never auto-marks.
    send(ws, type="mark_success")
    next_state(ws)

server.stop()

# The session wrote a normal episode: replayable, featurizable.
episodes = read_dataset(store)
ep = episodes[0]
print(f"\nrecorded {len(episodes)} episode: {len(ep.frames)} frames, "
      f"outcome {ep.outcome}, collected_by {ep.collected_by}")
print(f"frame sources: {sorted(set(f.source for f in ep.frames))}")
