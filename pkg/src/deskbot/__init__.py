"""deskbot: a desk-scale interactive imitation-learning stack.

A 2D tabletop manipulation simulator, scripted experts, an episode store,
a conditioned multi-head policy with hand-derived gradients, a task
embedding space, expert-gated data collection, and a teleoperation server.
"""

__version__ = "0.1.0"
