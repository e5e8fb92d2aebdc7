"""artifit: articulated-part discovery from point-cloud videos.

Fits a small set of superquadric primitives, grouped into rigid parts with
revolute or prismatic joints, to a sequence of partial point clouds, then
reads joint axes, pivots, and per-frame joint states off the optimized model.
"""

__version__ = "0.1.0"
