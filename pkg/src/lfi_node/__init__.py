"""
lfi-node: identify an ODE from transient trajectories with a neural vector
field trained on a trajectory loss plus a data-derived Jacobian penalty, then
evaluate the learned model's small-signal stability.
"""

__version__ = "0.1.0"
