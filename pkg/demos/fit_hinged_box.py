"""
End-to-end: discover a hinge from point clouds
==============================================

Generates a box-with-lid sequence, fits primitives and joints with a
reduced budget (a few minutes on one core), and scores the result against
ground truth. The full-quality configuration is FitConfig() as-is (3000
steps, more points); see the README for the command-line equivalent.
"""

import time

import numpy as np

from artifit.metrics import evaluate
from artifit.pipeline import FitConfig, extract, fit_seed
from artifit.synth import Trajectory, builtin_scenes, generate

spec = builtin_scenes()["hinged-box"]
config = FitConfig(frames=8, points=384, num_primitives=4, num_parts=2,
                   steps=2200, resolution=96, samples_per_primitive=64,
                   seeds=1)
scene = generate(spec, Trajectory.around(spec), frames=config.frames,
                 points=config.points, seed=0, resolution=192)
print("scene: %d frames x %d points, gt joint: %s" %
      (scene.frames, scene.points_per_frame, scene.joints[0].joint_type))

t0 = time.time()
def progress(seed, step, log):
    if step % 400 == 0:
        print("  step %4d  loss %.4f  (flow %.4f)" %
              (step, log["total"], log["flow"]))

state = fit_seed(scene, config, seed=0, callback=progress)
print("fit took %.1f s, final loss %.4f" % (time.time() - t0, state.final_loss))

result = extract(state, scene, config)
print("\ndiscovered %d part(s), %d primitive(s)" %
      (len(result.parts), len(result.primitives)))
for i, part in enumerate(result.parts):
    span = part.theta.max() - part.theta.min()
    if part.joint_type == "revolute":
        print("  part %d: revolute static=%s motion span %.1f deg" %
              (i, part.is_static, np.rad2deg(span)))
    else:
        print("  part %d: prismatic static=%s motion span %.3f units" %
              (i, part.is_static, span))

report = evaluate(result, scene)
print("\nmIoU           %.3f" % report["miou"])
for row in report["joints"]:
    if row["pred_part"] is None:
        continue
    print("gt %s joint -> type correct: %s, axis err %.2f deg" %
          (row["gt_type"], row["type_correct"], row["axis_error_deg"]))
    if row["pivot_error_cm"] is not None:
        print("               pivot err %.2f cm, state err %.2f deg" %
              (row["pivot_error_cm"], row["state_error"]))
