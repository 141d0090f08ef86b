"""Reward labeling via optimal transport plus offline RL on a planar tracker."""

__version__ = "0.1.0"
