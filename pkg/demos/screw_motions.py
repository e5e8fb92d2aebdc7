"""
Screw motions: one twist per joint
==================================

A joint is a 6-vector twist. Scaling it by a motion amount and taking the
exponential map yields the rigid transform of the attached part. Revolute
twists rotate about an axis through a pivot; prismatic twists translate.
"""

import numpy as np

from artifit.kinematics import (PRISMATIC, REVOLUTE, PartState, exp_twist,
                                twist_of)

# A door hinge: vertical axis through the pivot (1, 0, 0).
door = PartState.new(REVOLUTE, frames=4, omega=(0, 0, 1), q_point=(1, 0, 0))
S = twist_of(door)
print("revolute twist [w, v] =", np.round(S.data, 4))

p = np.array([2.0, 0.0, 0.5])   # a point on the door
for deg in (0, 30, 60, 90):
    tf = exp_twist(S, np.deg2rad(deg))
    moved = tf.rotation.data @ p + tf.translation.data
    print("  swing %3d deg -> %s" % (deg, np.round(moved, 4)))

# The pivot itself must not move under any angle.
tf = exp_twist(S, 1.234)
pivot = np.array([1.0, 0.0, 0.0])
print("pivot displacement:", np.linalg.norm(tf.rotation.data @ pivot
                                            + tf.translation.data - pivot))

# A drawer slide: pure translation along +y, amount in scene units.
drawer = PartState.new(PRISMATIC, frames=4, v_dir=(0, 1, 0))
S = twist_of(drawer)
print("prismatic twist [w, v] =", np.round(S.data, 4))
tf = exp_twist(S, 0.35)
print("  slide 0.35 -> translation", np.round(tf.translation.data, 4),
      "rotation is identity:", np.allclose(tf.rotation.data, np.eye(3)))

# One-parameter subgroup: exp((a+b) S) == exp(aS) exp(bS).
a, b = 0.7, -0.4
lhs = exp_twist(S, a + b).matrix()
rhs = exp_twist(S, a).matrix() @ exp_twist(S, b).matrix()
print("subgroup residual:", np.abs(lhs - rhs).max())
