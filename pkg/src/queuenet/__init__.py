"""Signal control for slotted-time queueing networks.

Three controllers share one simulator: a schedule-driven planner (``sdc``),
backpressure (``bp``) and a softmax-weighted coordinated planner (``sp``).
"""

import os

SCENARIO_DIR = os.path.join(os.path.dirname(__file__), "scenarios")


def bundled_scenario(name: str) -> str:
    """Path of a scenario file shipped with the package, e.g. ``"grid_pm_rush"``."""
    return os.path.join(SCENARIO_DIR, f"{name}.txt")
