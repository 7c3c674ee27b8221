"""Selective state-adaptive regularization for offline and offline-to-online RL.

A self-contained training engine: a small reverse-mode autodiff core over
MLPs, TD3+BC and CQL backbones extended with a learned per-state
regularization coefficient, sub-dataset selection, a trust-region schedule,
and desk-scale continuous-control environments for end-to-end verification.
"""

__version__ = "0.1.0"
