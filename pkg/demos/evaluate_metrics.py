"""
Evaluation metrics on a toy example
===================================

How predicted parts are scored: labels are matched one-to-one against
ground truth by maximizing total IoU, then axis, pivot, motion-state, and
type errors are computed per matched joint.
"""

import numpy as np

from artifit.metrics import (axis_error, iou_matrix, match_parts, miou,
                             pivot_error, state_error)

# Two frames of parallel labelings. GT has parts {0, 1}; the prediction
# splits them imperfectly and numbers them the other way around.
gt = [np.array([0, 0, 0, 0, 1, 1]), np.array([0, 0, 1, 1, 1, 1])]
pred = [np.array([1, 1, 1, 0, 0, 0]), np.array([1, 1, 0, 0, 0, 0])]

iou, gt_ids, pred_ids = iou_matrix(pred, gt)
print("IoU matrix (rows gt, cols pred):")
print(np.round(iou, 3))

pairs, _, _, _ = match_parts(pred, gt)
print("optimal matching:", pairs)
print("mIoU:", round(miou(pred, gt), 3))

# Axis error is sign-agnostic: a joint axis has no preferred direction.
a = np.array([0.0, 0.0, 1.0])
b = np.array([np.sin(np.deg2rad(4.0)), 0.0, np.cos(np.deg2rad(4.0))])
print("\naxis error      %.3f deg" % axis_error(a, b))
print("flipped axis    %.3f deg" % axis_error(a, -b))

# Pivot error is the point-to-line distance in centimeters: a 3-4-5
# triangle gives exactly 5 cm.
err = pivot_error(pred_axis=np.array([0.0, 0.0, 1.0]),
                  pred_pivot=np.array([0.0, 0.0, 0.0]),
                  gt_pivot=np.array([0.03, 0.04, 0.7]))
print("pivot error     %.3f cm" % err)

# Motion state is L1 after resolving the axis sign ambiguity; revolute
# states are reported in degrees.
pred_theta = np.deg2rad([0.0, -10.0, -20.0])
gt_theta = np.deg2rad([0.0, 10.0, 21.0])
print("state error     %.3f deg" %
      state_error(pred_theta, gt_theta, "revolute"))
