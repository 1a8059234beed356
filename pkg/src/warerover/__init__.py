"""Closed-loop warehouse fulfillment simulator.

Couples order scheduling with multi-agent pathfinding in a single
step-level loop, executes plans under kinematic constraints, and injects
recoverable AGV failures with protected maintenance corridors.
"""

__version__ = "0.1.0"
