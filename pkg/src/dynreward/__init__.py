"""Offline model-based RL laboratory.

Learns a transition-consistency reward from offline data via adversarial
inverse RL, uses it to filter and terminate dynamics-model rollouts, and
trains policies on the filtered rollouts.  A synthetic temperature-control
task and an exact tabular minimax harness make every piece verifiable on a
desk-scale budget.
"""

__version__ = "0.1.0"
