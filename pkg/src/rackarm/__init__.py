"""Shape control for a planar rack-driven segmented arm.

Exact constant-curvature geometry, a disturbance-bearing simulated plant,
a gated residual-correction network with hand-rolled reverse-mode autodiff,
closed-loop shape tracking, potential-field obstacle avoidance, and a
benchmark/serve harness tying them together.
"""

__version__ = "0.1.0"
