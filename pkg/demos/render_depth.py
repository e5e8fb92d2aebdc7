"""
Depth rasterization and visibility
==================================

Scene generation and the fitting loop both rely on a z-buffer rasterizer.
Here we render two boxes, print the depth image as ASCII art, and show how
point visibility is decided against the buffer.
"""

import numpy as np

from artifit.render import Camera, look_at, rasterize, visible_points, write_pgm
from artifit.superquadric import Superquadric, build_mesh

def box_mesh(half, center):
    sq = Superquadric.from_values(half, (0.2, 0.2), translation=center)
    verts, faces = build_mesh(sq, subdivisions=2)
    return verts + np.asarray(center, dtype=np.float64), faces

# A small box in front of a big box, camera looking down the x axis.
front = box_mesh((0.15, 0.15, 0.15), (0.6, 0.0, 0.0))
back = box_mesh((0.3, 0.5, 0.5), (0.0, 0.0, 0.0))
cam = Camera.default(look_at(eye=(1.8, 0.0, 0.0), target=(0.0, 0.0, 0.0)),
                     width=96, height=96)
buf = rasterize([(0, *front), (1, *back)], cam, cull_backfaces=True)

depth = buf.depth
hit = np.isfinite(depth)
print("coverage: %.1f%% of pixels" % (100.0 * hit.mean()))
print("depth range on hits: %.3f .. %.3f" % (depth[hit].min(), depth[hit].max()))

# ASCII rendering: nearer is darker.
lo, hi = depth[hit].min(), depth[hit].max()
shades = " .:-=+*#%@"
step = 6
for r in range(0, 96, step):
    row = ""
    for c in range(0, 96, step):
        d = depth[r, c]
        if not np.isfinite(d):
            row += " "
        else:
            row += shades[9 - int(8 * (d - lo) / (hi - lo + 1e-12))]
    print("   " + row)

# Points behind the front box are reported hidden, points on it visible.
probe = np.array([
    [0.75, 0.0, 0.0],    # front face of the small box
    [0.30, 0.0, 0.0],    # inside the shadow of the small box
    [0.30, 0.0, 0.45],   # on the big box, unobstructed
])
vis = visible_points(probe, buf)
for p, v in zip(probe, vis):
    print("point %s visible=%s" % (np.round(p, 2), bool(v)))

write_pgm("/tmp/depth_demo.pgm", depth)
print("wrote /tmp/depth_demo.pgm")
