"""Curvature-guided graph learning with a variational information
bottleneck: exact and differentiable Ollivier-Ricci curvature,
curvature-aware message passing, and Ricci-flow structure refinement."""

__version__ = "0.1.0"
