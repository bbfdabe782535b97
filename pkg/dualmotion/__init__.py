"""
Dual-path conditional VAE for controllable, diverse human motion prediction.

Stages: synthetic or imported motion data, the dual-path model, a
normalizing-flow pose prior, a post-hoc diversity sampler and the
control/diversity evaluation protocols.
"""

__version__ = "0.1.0"
